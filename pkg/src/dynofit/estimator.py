"""Parameter estimation: exhaustive grid search and multi-start local ascent.

Both estimators maximize a caller-supplied objective omega -> score over a
box of admissible parameters. Objectives must return -inf (never raise)
for candidates that cannot be scored; factories in ``kernelscore`` build
such objectives for the kernel score, the linear baselines, and the
known-map oracle.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import ParameterVector, Trajectory
from .errors import AllDivergedError, DegenerateDataError, ZeroTrueParameterError

Objective = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class ParameterBox:
    """The convex search set: a product of per-coordinate intervals."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "names", tuple(self.names))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("box bounds must be matching 1-D arrays")
        if len(self.names) != lower.size:
            raise ValueError("box needs one name per dimension")
        if not np.all(lower < upper):
            raise ValueError("box requires lower < upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, omega) -> bool:
        omega = np.asarray(omega, dtype=float)
        return bool(np.all(omega >= self.lower) and np.all(omega <= self.upper))

    def clip(self, omega) -> np.ndarray:
        return np.clip(np.asarray(omega, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points drawn uniformly from the box, one per row."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class SearchGrid:
    """A finite Cartesian grid over a box, in lexicographic point order."""

    axes: tuple[np.ndarray, ...]
    points: np.ndarray    # (P, m)
    spacings: np.ndarray  # per-dimension grid step

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def min_spacing(self) -> float:
        return float(self.spacings.min())


def make_grid(box: ParameterBox, points_per_dim: Sequence[int]) -> SearchGrid:
    """Uniform grid with the given number of points per dimension (each >= 2)."""
    counts = [int(p) for p in points_per_dim]
    if len(counts) != box.dim:
        raise ValueError("points_per_dim must match the box dimension")
    if any(p < 2 for p in counts):
        raise ValueError("need at least two grid points per dimension")
    axes = tuple(np.linspace(lo, hi, p)
                 for lo, hi, p in zip(box.lower, box.upper, counts))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    spacings = np.array([(hi - lo) / (p - 1)
                         for lo, hi, p in zip(box.lower, box.upper, counts)])
    return SearchGrid(axes=axes, points=points, spacings=spacings)


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for the projected derivative-free ascent and its restarts."""

    n_starts: int = 10
    max_iters_per_start: int = 30
    fd_step: float = 1e-3        # relative finite-difference step per coordinate
    step_init: float = 0.1       # first move length, as a fraction of the box
    step_max: float = 0.25
    shrink: float = 0.5
    grow: float = 2.0
    max_backtracks: int = 12
    step_tol: float = 1e-7       # stop when the accepted move is this small
    score_tol: float = 1e-11     # stop when the score gain is this small
    seed: int = 0
    start_center: np.ndarray | None = None  # relative-window starts around a point
    start_rel_width: float = 0.1

    def __post_init__(self):
        if self.n_starts < 1 or self.max_iters_per_start < 1:
            raise ValueError("n_starts and max_iters_per_start must be >= 1")
        if self.start_center is not None:
            object.__setattr__(self, "start_center",
                               np.asarray(self.start_center, dtype=float))


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of one estimation run with its full audit trail."""

    omega_hat: ParameterVector
    score: float
    evaluations: list          # (omega tuple, score) per candidate/start
    n_ode_solves: int
    wall_time: float
    traces: list | None = None  # per-start [(iter, omega tuple, score)] lists

    def to_json_dict(self, include_wall_time: bool = True) -> dict:
        out = {
            "omega_hat": [float(v) for v in self.omega_hat.values],
            "names": list(self.omega_hat.names),
            "score": self.score,
            "n_ode_solves": self.n_ode_solves,
            "evaluations": [{"omega": [float(v) for v in w], "score": s}
                            for w, s in self.evaluations],
        }
        if self.traces is not None:
            out["traces"] = [[{"iter": it, "omega": [float(v) for v in w], "score": s}
                              for it, w, s in trace]
                             for trace in self.traces]
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


def _map_ordered(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def grid_search(objective: Objective, box: ParameterBox, grid: SearchGrid,
                threads: int = 1) -> EstimationResult:
    """Evaluate the objective at every grid point and return the argmax.

    Ties break toward the lexicographically smallest point; the audit trail
    covers each grid point exactly once, in grid order, regardless of the
    thread count.

    Raises:
        AllDivergedError: no grid point produced a finite score.
    """
    if grid.size < 1:
        raise ValueError("empty search grid")
    start = time.perf_counter()
    scores = _map_ordered(objective, list(grid.points), threads)
    elapsed = time.perf_counter() - start
    scores = np.asarray(scores, dtype=float)
    best = int(np.argmax(scores))  # first occurrence = lexicographically smallest
    if scores[best] == float("-inf"):
        raise AllDivergedError("every grid point diverged or was degenerate")
    omega = ParameterVector(grid.points[best].copy(), box.names)
    evaluations = [(tuple(float(v) for v in w), float(s))
                   for w, s in zip(grid.points, scores)]
    return EstimationResult(omega, float(scores[best]), evaluations,
                            n_ode_solves=grid.size, wall_time=elapsed)


@dataclass(frozen=True)
class LocalAscentResult:
    omega: np.ndarray
    score: float
    trace: list  # (iter, omega tuple, score), scores non-decreasing
    n_evals: int


def _fd_gradient(objective: Objective, box: ParameterBox, x: np.ndarray,
                 fx: float, cfg: OptimizerConfig, alpha: float,
                 count: list):
    # Central differences whose probe scale follows the current step scale
    # (implicit-filtering style): chaotic score surfaces are noisy below
    # the decorrelation scale, so probing at the move resolution measures
    # the smoothed slope instead of that noise. cfg.fd_step acts as the
    # minimum relative probe step once the search has contracted. The best
    # probe point is returned too; it serves as a fallback move when the
    # line search along the gradient fails.
    grad = np.zeros(box.dim)
    best_probe = None
    best_score = fx
    for i in range(box.dim):
        h = max(cfg.fd_step * max(abs(x[i]), 1e-2 * box.span[i]),
                0.5 * alpha * box.span[i])
        hi = x.copy()
        lo = x.copy()
        hi[i] = min(x[i] + h, box.upper[i])
        lo[i] = max(x[i] - h, box.lower[i])
        f_hi = objective(hi)
        f_lo = objective(lo)
        count[0] += 2
        if f_hi > best_score:
            best_probe, best_score = hi, f_hi
        if f_lo > best_score:
            best_probe, best_score = lo, f_lo
        if f_hi == float("-inf") and f_lo == float("-inf"):
            continue
        if f_hi == float("-inf"):
            f_hi, hi = fx, x
        elif f_lo == float("-inf"):
            f_lo, lo = fx, x
        width = hi[i] - lo[i]
        if width > 0:
            grad[i] = (f_hi - f_lo) / width
    return grad, best_probe, best_score


def local_optimize(start, box: ParameterBox, objective: Objective,
                   config: OptimizerConfig) -> LocalAscentResult:
    """Monotone box-constrained local ascent from one starting point.

    Uses central finite differences for an ascent direction (rescaled by
    the box spans so anisotropic boxes behave), a backtracking step with a
    persistent adaptive length, and projection onto the box. When a line
    search fails the probe scale contracts and the direction is
    re-estimated at the finer resolution rather than giving up. The trace
    of accepted iterates has non-decreasing scores.
    """
    x = box.clip(start)
    count = [0]
    fx = objective(x)
    count[0] += 1
    trace = [(0, tuple(float(v) for v in x), float(fx))]
    if fx == float("-inf"):
        # Nothing to ascend from; report the start as-is.
        return LocalAscentResult(x, fx, trace, count[0])

    alpha = config.step_init
    for it in range(1, config.max_iters_per_start + 1):
        grad, probe, probe_score = _fd_gradient(objective, box, x, fx, config,
                                                alpha, count)
        direction = grad * box.span  # ascent direction in unit-box coordinates
        norm = float(np.linalg.norm(direction))

        accepted = False
        candidate, f_new = x, fx
        if norm > 0.0:
            direction /= norm
            beta = alpha
            for _ in range(config.max_backtracks + 1):
                candidate = box.clip(x + beta * direction * box.span)
                f_new = objective(candidate)
                count[0] += 1
                if f_new > fx:
                    accepted = True
                    alpha = min(beta * config.grow, config.step_max)
                    break
                beta *= config.shrink
        if not accepted and probe is not None:
            # The gradient direction failed but some probe already improved
            # the score; take it (a pattern-search move at the same scale).
            candidate, f_new = probe, probe_score
            accepted = True
        if not accepted:
            # Refine the working scale and re-estimate the direction.
            alpha *= config.shrink
            if alpha < config.step_tol:
                break
            continue

        moved = float(np.linalg.norm((candidate - x) / box.span))
        gain = f_new - fx
        x, fx = candidate, f_new
        trace.append((it, tuple(float(v) for v in x), float(fx)))
        if moved < config.step_tol or gain < config.score_tol:
            break
    return LocalAscentResult(x, float(fx), trace, count[0])


def _draw_starts(box: ParameterBox, config: OptimizerConfig,
                 rng: np.random.Generator) -> np.ndarray:
    if config.start_center is None:
        return box.sample(rng, config.n_starts)
    center = config.start_center
    lo = box.clip(center * (1.0 - config.start_rel_width))
    hi = box.clip(center * (1.0 + config.start_rel_width))
    return rng.uniform(lo, hi, size=(config.n_starts, box.dim))


def multistart_estimate(objective: Objective, box: ParameterBox,
                        config: OptimizerConfig,
                        threads: int = 1) -> EstimationResult:
    """Run local ascent from seeded random starts and keep the best run.

    Starts are drawn uniformly from the box (or from a relative window
    around ``config.start_center`` when given). Results are merged in
    start order, so the outcome does not depend on the thread count.
    """
    rng = np.random.default_rng(config.seed)
    starts = _draw_starts(box, config, rng)
    t0 = time.perf_counter()
    runs = _map_ordered(lambda s: local_optimize(s, box, objective, config),
                        list(starts), threads)
    elapsed = time.perf_counter() - t0
    finals = np.array([run.score for run in runs])
    best = int(np.argmax(finals))  # ties resolve to the earliest start
    if finals[best] == float("-inf"):
        raise AllDivergedError("every start diverged or was degenerate")
    best_run = runs[best]
    evaluations = [(tuple(float(v) for v in run.omega), float(run.score))
                   for run in runs]
    return EstimationResult(
        ParameterVector(best_run.omega.copy(), box.names),
        float(best_run.score),
        evaluations,
        n_ode_solves=sum(run.n_evals for run in runs),
        wall_time=elapsed,
        traces=[run.trace for run in runs],
    )


def estimation_error(omega_hat, omega_star) -> np.ndarray:
    """Componentwise relative error |hat - star| / |star|.

    Raises:
        ZeroTrueParameterError: some true component is zero.
    """
    hat = omega_hat.values if isinstance(omega_hat, ParameterVector) else np.asarray(omega_hat, float)
    star = omega_star.values if isinstance(omega_star, ParameterVector) else np.asarray(omega_star, float)
    if hat.shape != star.shape:
        raise ValueError("parameter vectors must have matching shapes")
    if np.any(star == 0.0):
        raise ZeroTrueParameterError("relative error undefined for zero true parameter")
    return np.abs(hat - star) / np.abs(star)


def prediction_error(traj_hat: Trajectory, traj_star: Trajectory) -> float:
    """Normalized mean-square trajectory error.

    sum_j ||x_hat(t_j) - x_star(t_j)||^2 / sum_j ||x_hat(t_j)||^2; the
    common time step cancels between the discretized integrals.
    """
    if traj_hat.states.shape != traj_star.states.shape:
        raise ValueError("trajectories must have matching shapes")
    if traj_hat.dt != traj_star.dt:
        raise ValueError("trajectories must share the same dt")
    diff = traj_hat.states - traj_star.states
    denom = float(np.einsum("ij,ij->", traj_hat.states, traj_hat.states))
    if denom == 0.0:
        raise DegenerateDataError("predicted trajectory is identically zero")
    return float(np.einsum("ij,ij->", diff, diff)) / denom
