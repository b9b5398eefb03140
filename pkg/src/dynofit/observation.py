"""Observation functions: maps from model trajectories to measured series.

Covers the Legendre-polynomial embedding of Lorenz states (clean, noisy,
and partial variants), a rasterized grayscale video of the double
pendulum, and generic linear/isometric observations for testing. Every
map preserves the sample count and sampling interval of its input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dynamics import Trajectory

LEGENDRE_POINTS = 128
LEGENDRE_DEGREE = 6

VIDEO_WIDTH = 217
VIDEO_HEIGHT = 171

_OBS_MAGIC = b"OBS1"


@dataclass(frozen=True)
class ObservationSeries:
    """Measured samples y(t_j) on the same grid as the generating trajectory."""

    dt: float
    samples: np.ndarray  # (N, D)
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 2 or samples.shape[0] < 2 or samples.shape[1] < 1:
            raise ValueError("observation series needs an (N>=2, D>=1) array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("observation samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class LegendreBasis:
    """Rows of Legendre polynomials P_1..P_k evaluated on a uniform grid."""

    points: np.ndarray  # (n_points,)
    table: np.ndarray   # (k, n_points), row j-1 holds P_j


@dataclass(frozen=True)
class NoiseSpec:
    """State-space Gaussian perturbation applied before the observation map."""

    kind: str = "state_gaussian"  # "none" | "state_gaussian"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "state_gaussian"):
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.kind == "none" and self.sigma != 0:
            raise ValueError("noise kind 'none' requires sigma == 0")


def legendre_basis(n_points: int = LEGENDRE_POINTS,
                   degree: int = LEGENDRE_DEGREE) -> LegendreBasis:
    """Legendre polynomials P_1..P_degree on a uniform grid in [-1, 1].

    Built with the three-term recurrence
    (n+1) P_{n+1}(x) = (2n+1) x P_n(x) - n P_{n-1}(x).
    """
    x = np.linspace(-1.0, 1.0, n_points)
    rows = np.empty((degree, n_points))
    p_prev = np.ones_like(x)  # P_0
    p_cur = x.copy()          # P_1
    rows[0] = p_cur
    for n in range(1, degree):
        p_next = ((2 * n + 1) * x * p_cur - n * p_prev) / (n + 1)
        rows[n] = p_next
        p_prev, p_cur = p_cur, p_next
    return LegendreBasis(points=x, table=rows)


def _lorenz_features_full(states: np.ndarray) -> np.ndarray:
    x1, x2, x3 = states[:, 0], states[:, 1], states[:, 2]
    return np.column_stack([x1, x2, x3, x1 * x1, x2 * x2, x3 * x3])


def observe_lorenz_full(traj: Trajectory,
                        basis: LegendreBasis | None = None) -> ObservationSeries:
    """Embed (x1, x2, x3) into R^128 via linear plus squared Legendre channels.

    y = u1*x1 + u2*x2 + u3*x3 + u4*x1^2 + u5*x2^2 + u6*x3^2 with u_j the
    j-th Legendre polynomial sampled on the basis grid.
    """
    if traj.state_dim != 3:
        raise ValueError("full Lorenz observation needs a 3-D trajectory")
    basis = basis or legendre_basis()
    samples = _lorenz_features_full(traj.states) @ basis.table
    return ObservationSeries(traj.dt, samples)


def observe_lorenz_noisy(traj: Trajectory, noise: NoiseSpec,
                         basis: LegendreBasis | None = None) -> ObservationSeries:
    """Apply the full Lorenz observation to state samples perturbed by
    i.i.d. N(0, sigma^2 I_3) noise.

    Because of the squared channels the resulting observation noise is
    neither additive nor Gaussian.
    """
    if traj.state_dim != 3:
        raise ValueError("noisy Lorenz observation needs a 3-D trajectory")
    if noise.kind != "state_gaussian":
        raise ValueError("noisy Lorenz observation needs state_gaussian noise")
    basis = basis or legendre_basis()
    rng = np.random.default_rng(noise.seed)
    perturbed = traj.states + rng.normal(0.0, noise.sigma, size=traj.states.shape)
    samples = _lorenz_features_full(perturbed) @ basis.table
    return ObservationSeries(traj.dt, samples)


def observe_lorenz_partial(traj: Trajectory, basis: LegendreBasis | None = None,
                           duplicate_square_channel: bool = False) -> ObservationSeries:
    """Observation using only the first two Lorenz coordinates.

    y = u1*x1 + u2*x2 + u3*x1^2 + u4*x2^2. With
    ``duplicate_square_channel`` both squared terms share u4, which makes
    them indistinguishable through this channel; off by default.
    """
    if traj.state_dim != 3:
        raise ValueError("partial Lorenz observation needs a 3-D trajectory")
    basis = basis or legendre_basis()
    x1, x2 = traj.states[:, 0], traj.states[:, 1]
    features = np.column_stack([x1, x2, x1 * x1, x2 * x2])
    if duplicate_square_channel:
        coeffs = basis.table[[0, 1, 3, 3]]
    else:
        coeffs = basis.table[[0, 1, 2, 3]]
    return ObservationSeries(traj.dt, features @ coeffs)


@dataclass(frozen=True)
class Canvas:
    """Raster geometry for pendulum video frames.

    The world square [-E, E]^2 (E = ``world_half_extent``) is mapped onto
    the frame with an isotropic pixel size set by the frame height; the
    pivot sits at the image center.
    """

    world_half_extent: float
    width: int = VIDEO_WIDTH
    height: int = VIDEO_HEIGHT
    rod_half_width_px: float = 1.0  # rod drawn 2 px thick
    bob_radius_px: float = 5.0
    pivot: tuple[float, float] = (0.0, 0.0)  # suspension point in world coords

    def __post_init__(self):
        if not self.world_half_extent > 0:
            raise ValueError("world_half_extent must be positive")

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.world_half_extent / self.height


def _segment_distance(px: np.ndarray, py: np.ndarray, a, b) -> np.ndarray:
    ax, ay = a
    abx, aby = b[0] - ax, b[1] - ay
    norm2 = abx * abx + aby * aby
    if norm2 == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * abx + (py - ay) * aby) / norm2, 0.0, 1.0)
    return np.hypot(px - (ax + t * abx), py - (ay + t * aby))


def render_pendulum_video(traj_cartesian: Trajectory,
                          canvas: Canvas) -> ObservationSeries:
    """Rasterize Cartesian bob coordinates into flattened grayscale frames.

    Each frame draws anti-aliased rod segments pivot->bob1->bob2 and
    filled discs at the bobs, white on black with values in [0, 1], then
    flattens row-major into a vector of width*height pixels. Content that
    leaves the frame is clipped and flagged via ``meta['clipped']``.
    """
    if traj_cartesian.state_dim != 4:
        raise ValueError("video rendering needs Cartesian (x1, y1, x2, y2) states")
    w, h = canvas.width, canvas.height
    pixel = canvas.pixel_size
    # World coordinates of pixel centers; rows top to bottom, world y up.
    col_x = (np.arange(w) + 0.5 - 0.5 * w) * pixel
    row_y = (0.5 * h - np.arange(h) - 0.5) * pixel
    px = np.broadcast_to(col_x[None, :], (h, w))
    py = np.broadcast_to(row_y[:, None], (h, w))
    half_w_world = 0.5 * w * pixel
    half_h_world = 0.5 * h * pixel

    states = traj_cartesian.states
    n = states.shape[0]
    frames = np.empty((n, h * w))
    clipped = False
    rod = canvas.rod_half_width_px
    rad = canvas.bob_radius_px
    pivot = (float(canvas.pivot[0]), float(canvas.pivot[1]))
    for j in range(n):
        x1, y1, x2, y2 = states[j]
        if max(abs(x1), abs(x2)) > half_w_world or max(abs(y1), abs(y2)) > half_h_world:
            clipped = True
        d_rod1 = _segment_distance(px, py, pivot, (x1, y1)) / pixel
        d_rod2 = _segment_distance(px, py, (x1, y1), (x2, y2)) / pixel
        d_bob1 = np.hypot(px - x1, py - y1) / pixel
        d_bob2 = np.hypot(px - x2, py - y2) / pixel
        frame = np.clip(rod + 0.5 - d_rod1, 0.0, 1.0)
        np.maximum(frame, np.clip(rod + 0.5 - d_rod2, 0.0, 1.0), out=frame)
        np.maximum(frame, np.clip(rad + 0.5 - d_bob1, 0.0, 1.0), out=frame)
        np.maximum(frame, np.clip(rad + 0.5 - d_bob2, 0.0, 1.0), out=frame)
        frames[j] = frame.ravel()
    return ObservationSeries(traj_cartesian.dt, frames, meta={"clipped": clipped})


def observe_linear(traj: Trajectory, matrix: np.ndarray, noise_sigma: float = 0.0,
                   seed: int = 0) -> ObservationSeries:
    """y(t_j) = A x(t_j) + zeta_j with zeta i.i.d. N(0, sigma^2 I_D)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != traj.state_dim:
        raise ValueError(f"matrix must be (D, {traj.state_dim})")
    samples = traj.states @ matrix.T
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        samples = samples + rng.normal(0.0, noise_sigma, size=samples.shape)
    return ObservationSeries(traj.dt, samples)


def observation_to_csv(obs: ObservationSeries, path) -> None:
    """Write observations as CSV with header ``t,y1,...,yD`` at full precision."""
    t = obs.dt * np.arange(obs.n_samples)
    header = "t," + ",".join(f"y{i + 1}" for i in range(obs.dim))
    np.savetxt(path, np.column_stack([t, obs.samples]), fmt="%.17g",
               delimiter=",", header=header, comments="")


def observation_from_csv(path) -> ObservationSeries:
    """Read observations written by :func:`observation_to_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2 or data.shape[1] < 2:
        raise ValueError("observation CSV needs >= 2 rows and a t column plus values")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("observation CSV time grid is not uniform")
    return ObservationSeries(dt, data[:, 1:])


def observation_to_binary(obs: ObservationSeries, path) -> None:
    """Write the compact binary container (magic OBS1, u64 N, u64 D, f64 dt,
    then N*D little-endian f64 values row-major)."""
    with open(path, "wb") as fh:
        fh.write(_OBS_MAGIC)
        fh.write(struct.pack("<QQd", obs.n_samples, obs.dim, obs.dt))
        fh.write(np.ascontiguousarray(obs.samples, dtype="<f8").tobytes())


def observation_from_binary(path) -> ObservationSeries:
    """Read the binary container written by :func:`observation_to_binary`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _OBS_MAGIC:
            raise ValueError("not an OBS1 observation file")
        n, d, dt = struct.unpack("<QQd", fh.read(24))
        payload = fh.read(8 * n * d)
    if len(payload) != 8 * n * d:
        raise ValueError("truncated OBS1 observation file")
    samples = np.frombuffer(payload, dtype="<f8").reshape(n, d).copy()
    return ObservationSeries(dt, samples)
