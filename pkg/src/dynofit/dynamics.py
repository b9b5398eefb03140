"""Parametric ODE right-hand sides and a fixed-step RK4 integrator.

Ships the two chaotic benchmark systems (Lorenz '63 and the planar double
pendulum) plus a generic integrator that produces trajectories sampled on a
uniform time grid. All functions are pure; trajectories are immutable and
safe to share across concurrent score evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError

DEFAULT_GRAVITY = 9.8

# rhs(state, params) -> state derivative; both are index-able sequences of floats
RhsFunction = Callable[[Sequence[float], Sequence[float]], Sequence[float]]


@dataclass(frozen=True)
class ParameterVector:
    """An ordered, named vector of model parameters."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        if values.ndim != 1 or values.size < 1:
            raise ValueError("parameter vector must be a non-empty 1-D array")
        if len(self.names) != values.size:
            raise ValueError("parameter names and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass(frozen=True)
class Trajectory:
    """States of an ODE solution on the uniform grid t_j = t0 + (j-1)*dt."""

    t0: float
    dt: float
    states: np.ndarray  # (N, d)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if states.ndim != 2 or states.shape[0] < 2 or states.shape[1] < 1:
            raise ValueError("trajectory needs an (N>=2, d>=1) state array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states must be finite")

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)


@dataclass(frozen=True)
class SystemSpec:
    """A parametric autonomous ODE: x'(t) = rhs(x, params)."""

    kind: str
    state_dim: int
    parameter_names: tuple[str, ...]
    rhs: RhsFunction
    fixed: dict[str, float] = field(default_factory=dict)


def lorenz_rhs(x: Sequence[float], sigma: float, rho: float, beta: float):
    """Lorenz '63 vector field at state ``x = (x1, x2, x3)``."""
    x1, x2, x3 = x[0], x[1], x[2]
    return (sigma * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3)


def pendulum_rhs(theta: Sequence[float], l1: float, l2: float, m2: float,
                 g: float = DEFAULT_GRAVITY, m1: float = 1.0):
    """Double-pendulum vector field for state (theta1, theta2, w1, w2).

    Angles are measured clockwise from the downward vertical; the upper
    mass defaults to 1 since the motion depends on the masses only through
    the ratio m1/m2.
    """
    th1, th2, w1, w2 = theta[0], theta[1], theta[2], theta[3]
    mu = 1.0 + m1 / m2
    delta = th1 - th2
    cd = math.cos(delta)
    sd = math.sin(delta)
    den = mu - cd * cd  # > 0 for any positive masses
    a1 = (g * (math.sin(th2) * cd - mu * math.sin(th1))
          - (l2 * w2 * w2 + l1 * w1 * w1 * cd) * sd) / (l1 * den)
    a2 = (g * mu * (math.sin(th1) * cd - math.sin(th2))
          + (mu * l1 * w1 * w1 + l2 * w2 * w2 * cd) * sd) / (l2 * den)
    return (w1, w2, a1, a2)


def pendulum_cartesian(theta1, theta2, l1: float, l2: float):
    """Bob positions (x1, y1, x2, y2) for given angles; broadcasts over arrays."""
    x1 = l1 * np.sin(theta1)
    y1 = -l1 * np.cos(theta1)
    x2 = x1 + l2 * np.sin(theta2)
    y2 = y1 - l2 * np.cos(theta2)
    return x1, y1, x2, y2


def cartesian_states(states: np.ndarray, l1: float, l2: float) -> np.ndarray:
    """Map (N, 4) angular states to (N, 4) Cartesian bob coordinates."""
    x1, y1, x2, y2 = pendulum_cartesian(states[:, 0], states[:, 1], l1, l2)
    return np.column_stack([x1, y1, x2, y2])


def cartesian_trajectory(traj: Trajectory, l1: float, l2: float) -> Trajectory:
    """Convert an angular double-pendulum trajectory to Cartesian coordinates."""
    return Trajectory(traj.t0, traj.dt, cartesian_states(traj.states, l1, l2))


def pendulum_energy(state, l1: float, l2: float, m2: float,
                    g: float = DEFAULT_GRAVITY, m1: float = 1.0):
    """Total mechanical energy of the double pendulum; broadcasts over arrays."""
    th1, th2, w1, w2 = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    kinetic = (0.5 * (m1 + m2) * l1 * l1 * w1 * w1
               + 0.5 * m2 * l2 * l2 * w2 * w2
               + m2 * l1 * l2 * w1 * w2 * np.cos(th1 - th2))
    potential = -(m1 + m2) * g * l1 * np.cos(th1) - m2 * g * l2 * np.cos(th2)
    return kinetic + potential


def lorenz_system(fixed: dict[str, float] | None = None) -> SystemSpec:
    """Lorenz '63 system with free parameters (sigma, rho, beta).

    Any subset may be pinned via ``fixed``; the remaining names, in
    canonical order, become the system's free parameters.
    """
    fixed = {k: float(v) for k, v in (fixed or {}).items()}
    canonical = ("sigma", "rho", "beta")
    unknown = set(fixed) - set(canonical)
    if unknown:
        raise ValueError(f"unknown Lorenz parameters: {sorted(unknown)}")
    names = tuple(n for n in canonical if n not in fixed)
    if not names:
        raise ValueError("at least one Lorenz parameter must remain free")

    if names == ("sigma", "rho", "beta"):
        def rhs(x, p):
            return lorenz_rhs(x, p[0], p[1], p[2])
    elif names == ("sigma", "rho"):
        beta = fixed["beta"]

        def rhs(x, p):
            return lorenz_rhs(x, p[0], p[1], beta)
    elif names == ("sigma",):
        rho, beta = fixed["rho"], fixed["beta"]

        def rhs(x, p):
            return lorenz_rhs(x, p[0], rho, beta)
    else:
        positions = {n: i for i, n in enumerate(names)}

        def rhs(x, p):
            full = [fixed[n] if n in fixed else p[positions[n]] for n in canonical]
            return lorenz_rhs(x, full[0], full[1], full[2])

    return SystemSpec("lorenz63", 3, names, rhs, fixed)


def double_pendulum_system(g: float = DEFAULT_GRAVITY) -> SystemSpec:
    """Double pendulum with free parameters (l1, l2, m2) and fixed gravity."""
    def rhs(x, p):
        return pendulum_rhs(x, p[0], p[1], p[2], g)

    return SystemSpec("double_pendulum", 4, ("l1", "l2", "m2"), rhs, {"g": float(g)})


def rk4_step(rhs: Callable, x, dt: float):
    """One classical 4-stage Runge-Kutta step for an autonomous system.

    ``rhs`` maps a state to its derivative; scalars and arrays both work.
    """
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(rhs(x), dtype=float)
    k2 = np.asarray(rhs(x + 0.5 * dt * k1), dtype=float)
    k3 = np.asarray(rhs(x + 0.5 * dt * k2), dtype=float)
    k4 = np.asarray(rhs(x + dt * k3), dtype=float)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_tuple(rhs: RhsFunction, x: tuple, dt: float, params: tuple) -> tuple:
    # Scalar-tuple twin of rk4_step; arithmetic mirrors it operation for
    # operation so both paths produce bit-identical states.
    k1 = rhs(x, params)
    k2 = rhs(tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k1)), params)
    k3 = rhs(tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k2)), params)
    k4 = rhs(tuple(xi + dt * ki for xi, ki in zip(x, k3)), params)
    c = dt / 6.0
    return tuple(xi + c * (a + 2.0 * b + 2.0 * d + e)
                 for xi, a, b, d, e in zip(x, k1, k2, k3, k4))


def integrate(system: SystemSpec, omega, x0, n_samples: int, dt: float,
              substeps: int = 1) -> Trajectory:
    """Solve the system from ``x0`` and return N samples spaced dt apart.

    The first row is ``x0`` itself; each subsequent row advances one dt
    (split into ``substeps`` equal RK4 steps, default one). Deterministic:
    identical inputs give bit-identical trajectories.

    Raises:
        DivergenceError: a non-finite state appeared; its ``index`` is the
            first bad sample. Callers doing parameter search treat this as
            a -inf score, not a crash.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError("dt must be finite and positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    values = omega.values if isinstance(omega, ParameterVector) else omega
    params = tuple(float(v) for v in np.asarray(values, dtype=float))
    if len(params) != len(system.parameter_names):
        raise ValueError(f"expected {len(system.parameter_names)} parameters, "
                         f"got {len(params)}")
    state = tuple(float(v) for v in np.asarray(x0, dtype=float))
    if len(state) != system.state_dim:
        raise ValueError(f"x0 must have dimension {system.state_dim}")

    rhs = system.rhs
    h = dt / substeps
    states = np.empty((n_samples, system.state_dim))
    states[0] = state
    for j in range(1, n_samples):
        try:
            for _ in range(substeps):
                state = _rk4_tuple(rhs, state, h, params)
        except (OverflowError, ValueError):
            # Scalar arithmetic overflows instead of producing inf.
            raise DivergenceError(j) from None
        for v in state:
            if not math.isfinite(v):
                raise DivergenceError(j)
        states[j] = state
    return Trajectory(0.0, dt, states)


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write a trajectory as CSV with header ``t,x1,...,xd`` at full precision."""
    header = "t," + ",".join(f"x{i + 1}" for i in range(traj.state_dim))
    data = np.column_stack([traj.times, traj.states])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def trajectory_from_csv(path) -> Trajectory:
    """Read a trajectory written by :func:`trajectory_to_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2 or data.shape[1] < 2:
        raise ValueError("trajectory CSV needs >= 2 rows and a t column plus states")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory CSV time grid is not uniform")
    return Trajectory(float(t[0]), dt, data[:, 1:])
