"""Gaussian Gram matrices and the normalized kernel dependence score.

The score compares the pairwise-affinity structure of a candidate model
trajectory with that of the observed series without ever modelling the
observation map: both sides are turned into Gaussian Gram matrices, sample
means are projected out with the centering matrix H = I - 11^T/N, and the
normalized Frobenius inner product of the centered kernels

    s = Tr(Kx H Ky H) / (||H Kx H||_F * ||H Ky H||_F)

is maximized over the parameters. The numerator is the empirical
Hilbert-Schmidt independence criterion of the two sample sets; the
normalization makes s = 1 exactly when the centered kernels are
proportional, e.g. whenever the two sample sets are related by an l2
isometry. Two linear baseline scores and a known-map least-squares
objective are included for comparison studies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import ParameterVector, SystemSpec, Trajectory, integrate
from .errors import (
    DegenerateDataError,
    DegenerateKernelError,
    DivergenceError,
)

# Centered Frobenius norms below this are treated as the all-ones kernel limit.
DEGENERATE_NORM_TOL = 1e-12

# Above this many element operations the pairwise distances switch to the
# BLAS-backed inner-product identity instead of explicit differences.
_DIRECT_DIST_BUDGET = 20_000_000


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric PSD kernel matrix with unit diagonal and its bandwidth."""

    matrix: np.ndarray  # (N, N)
    epsilon: float

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("Gram matrix must be square")
        if not self.epsilon > 0:
            raise ValueError("bandwidth epsilon must be positive")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def pairwise_sq_dists(samples: np.ndarray) -> np.ndarray:
    """All pairwise squared Euclidean distances between sample rows.

    Uses explicit differences when affordable (exact); for very wide
    samples it falls back to the Gram-expansion identity, clipped at zero
    and with an exactly-zero diagonal.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be a 2-D (N, D) array")
    n, d = samples.shape
    if n * n * d <= _DIRECT_DIST_BUDGET:
        diff = samples[:, None, :] - samples[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    sq = np.einsum("ij,ij->i", samples, samples)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (samples @ samples.T)
    d2 = np.maximum(d2, 0.0)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def maxmin_bandwidth(samples: np.ndarray) -> float:
    """Bandwidth eps = max_j min_{i != j} ||s_i - s_j||^2.

    Guarantees every sample keeps at least one affinity of exp(-1) or
    more, and makes the resulting kernel invariant to global scaling of
    the samples.

    Raises:
        DegenerateDataError: every sample has an exact duplicate, so the
            max-min distance is zero.
    """
    d2 = pairwise_sq_dists(samples)
    if d2.shape[0] < 2:
        raise DegenerateDataError("need at least two samples for a bandwidth")
    np.fill_diagonal(d2, np.inf)
    eps = float(d2.min(axis=1).max())
    np.fill_diagonal(d2, 0.0)
    if eps == 0.0:
        raise DegenerateDataError("max-min bandwidth is zero (duplicated samples)")
    return eps


def gaussian_gram(samples: np.ndarray, epsilon: float) -> GramMatrix:
    """Gaussian kernel matrix K_ij = exp(-||s_i - s_j||^2 / epsilon)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return GramMatrix(np.exp(-pairwise_sq_dists(samples) / epsilon), float(epsilon))


def gram_from_samples(samples: np.ndarray) -> GramMatrix:
    """Gaussian Gram matrix with its max-min bandwidth, sharing one distance pass."""
    d2 = pairwise_sq_dists(samples)
    if d2.shape[0] < 2:
        raise DegenerateDataError("need at least two samples for a Gram matrix")
    np.fill_diagonal(d2, np.inf)
    eps = float(d2.min(axis=1).max())
    np.fill_diagonal(d2, 0.0)
    if eps == 0.0:
        raise DegenerateDataError("max-min bandwidth is zero (duplicated samples)")
    return GramMatrix(np.exp(-d2 / eps), eps)


def centering_matrix(n: int) -> np.ndarray:
    """The projector H = I - 11^T/N that removes the sample mean."""
    if n < 2:
        raise ValueError("centering needs at least two samples")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def center_gram(matrix: np.ndarray) -> np.ndarray:
    """Double-center a symmetric kernel matrix: returns H K H.

    Computed by subtracting row/column means directly, which is O(N^2)
    instead of two matrix products.
    """
    matrix = np.asarray(matrix, dtype=float)
    mu = matrix.mean(axis=1)
    grand = mu.mean()
    return matrix - mu[:, None] - mu[None, :] + grand


def _centered_cosine(centered_x: np.ndarray, centered_y: np.ndarray,
                     norm_y: float | None = None) -> float:
    norm_x = float(np.linalg.norm(centered_x))
    if norm_y is None:
        norm_y = float(np.linalg.norm(centered_y))
    if norm_x < DEGENERATE_NORM_TOL or norm_y < DEGENERATE_NORM_TOL:
        raise DegenerateKernelError(
            "centered kernel norm below tolerance (all-ones kernel limit)")
    s = float(np.vdot(centered_x, centered_y) / (norm_x * norm_y))
    # Guard the Cauchy-Schwarz bound against last-ulp rounding.
    return min(1.0, max(-1.0, s))


def centered_score(gram_x: GramMatrix, gram_y: GramMatrix) -> float:
    """Normalized dependence score of two kernel matrices, in [-1, 1].

    Equals Tr(Kx H Ky H) divided by the Frobenius norms of the centered
    kernels H Kx H and H Ky H, so proportional centered kernels score
    exactly 1. Symmetric in its arguments.

    Raises:
        DegenerateKernelError: either centered kernel is numerically zero.
    """
    kx, ky = gram_x.matrix, gram_y.matrix
    if kx.shape != ky.shape:
        raise ValueError("Gram matrices must have matching shapes")
    return _centered_cosine(center_gram(kx), center_gram(ky))


@dataclass(frozen=True)
class EstimationProblem:
    """The model side of an estimation task.

    ``model_map(states, omega)`` converts raw trajectory states to the
    samples the model kernel is built on (e.g. Cartesian bob coordinates,
    or a subset of coordinates); identity when None. ``eps_x`` pins the
    model-kernel bandwidth; when None the max-min rule is applied per
    candidate. ``n_samples`` must be >= 3: with two samples every
    non-degenerate pair of centered kernels is proportional and the score
    is identically 1.
    """

    system: SystemSpec
    x0: np.ndarray
    n_samples: int
    dt: float
    model_map: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    eps_x: float | None = None
    substeps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.n_samples < 3:
            raise ValueError("estimation needs at least three samples")


def model_samples(problem: EstimationProblem, omega) -> np.ndarray:
    """Integrate the system at ``omega`` and map states to model samples."""
    traj = integrate(problem.system, omega, problem.x0, problem.n_samples,
                     problem.dt, problem.substeps)
    if problem.model_map is None:
        return traj.states
    values = omega.values if isinstance(omega, ParameterVector) else np.asarray(omega, float)
    return problem.model_map(traj.states, values)


def _model_gram(problem: EstimationProblem, omega) -> GramMatrix:
    xs = model_samples(problem, omega)
    if problem.eps_x is not None:
        return gaussian_gram(xs, problem.eps_x)
    return gram_from_samples(xs)


def score_of_parameter(omega, problem: EstimationProblem,
                       gram_y: GramMatrix) -> float:
    """Score of a candidate parameter against a precomputed observation kernel.

    Candidates whose trajectory diverges, collapses onto duplicated
    samples, or yields a degenerate kernel score -inf instead of raising,
    so parameter searches can simply skip them.
    """
    try:
        gram_x = _model_gram(problem, omega)
        return _centered_cosine(center_gram(gram_x.matrix),
                                center_gram(gram_y.matrix))
    except (DivergenceError, DegenerateDataError, DegenerateKernelError):
        return float("-inf")


def make_kernel_objective(problem: EstimationProblem,
                          gram_y: GramMatrix) -> Callable[[np.ndarray], float]:
    """Objective omega -> s(omega) with the observation side precomputed.

    Produces bit-identical values to :func:`score_of_parameter`.
    """
    centered_y = center_gram(gram_y.matrix)
    norm_y = float(np.linalg.norm(centered_y))
    if norm_y < DEGENERATE_NORM_TOL:
        raise DegenerateKernelError("observation kernel is degenerate")

    def objective(omega) -> float:
        try:
            gram_x = _model_gram(problem, omega)
            return _centered_cosine(center_gram(gram_x.matrix), centered_y, norm_y)
        except (DivergenceError, DegenerateDataError, DegenerateKernelError):
            return float("-inf")

    return objective


def _center_rows(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    return samples - samples.mean(axis=0)


def linear_score_1(x_samples: np.ndarray, y_samples: np.ndarray) -> float:
    """Normalized cross-covariance ||Xc^T Yc||_F / (||Xc||_F ||Yc||_F).

    Rows are time samples; both sides are centered over time. Value lies
    in [0, 1] and is 1 when the centered signals are perfectly linearly
    aligned with a single mode.
    """
    xc = _center_rows(x_samples)
    yc = _center_rows(y_samples)
    nx = float(np.linalg.norm(xc))
    ny = float(np.linalg.norm(yc))
    if nx < DEGENERATE_NORM_TOL or ny < DEGENERATE_NORM_TOL:
        raise DegenerateDataError("zero-variance samples in linear score")
    return float(np.linalg.norm(xc.T @ yc) / (nx * ny))


def linear_score_2(x_samples: np.ndarray, y_samples: np.ndarray) -> float:
    """Centered score evaluated on linear (inner-product) Gram matrices."""
    x = np.asarray(x_samples, dtype=float)
    y = np.asarray(y_samples, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError("sample counts must match")
    return _centered_cosine(center_gram(x @ x.T), center_gram(y @ y.T))


def make_linear_objective(problem: EstimationProblem, y_samples: np.ndarray,
                          variant: int) -> Callable[[np.ndarray], float]:
    """Grid-search objective using one of the linear baseline scores."""
    if variant == 1:
        yc = _center_rows(y_samples)
        ny = float(np.linalg.norm(yc))
        if ny < DEGENERATE_NORM_TOL:
            raise DegenerateDataError("zero-variance observations")

        def objective(omega) -> float:
            try:
                xc = _center_rows(model_samples(problem, omega))
            except DivergenceError:
                return float("-inf")
            nx = float(np.linalg.norm(xc))
            if nx < DEGENERATE_NORM_TOL:
                return float("-inf")
            return float(np.linalg.norm(xc.T @ yc) / (nx * ny))

    elif variant == 2:
        y = np.asarray(y_samples, dtype=float)
        centered_gy = center_gram(y @ y.T)
        ny = float(np.linalg.norm(centered_gy))
        if ny < DEGENERATE_NORM_TOL:
            raise DegenerateDataError("degenerate observation Gram matrix")

        def objective(omega) -> float:
            try:
                xs = model_samples(problem, omega)
                return _centered_cosine(center_gram(xs @ xs.T), centered_gy, ny)
            except (DivergenceError, DegenerateKernelError):
                return float("-inf")

    else:
        raise ValueError("variant must be 1 or 2")
    return objective


def oracle_objective(omega, observe_fn: Callable[[Trajectory], np.ndarray],
                     y_samples: np.ndarray, problem: EstimationProblem) -> float:
    """Sum of squared residuals against the true observation map.

    Only usable when the observation function is actually known (test
    harness baseline); the estimator minimizes this value. Divergent
    candidates return +inf.
    """
    try:
        traj = integrate(problem.system, omega, problem.x0, problem.n_samples,
                         problem.dt, problem.substeps)
    except DivergenceError:
        return float("inf")
    predicted = np.asarray(observe_fn(traj), dtype=float)
    residual = predicted - np.asarray(y_samples, dtype=float)
    return float(np.einsum("ij,ij->", residual, residual))


def make_oracle_objective(problem: EstimationProblem,
                          observe_fn: Callable[[Trajectory], np.ndarray],
                          y_samples: np.ndarray) -> Callable[[np.ndarray], float]:
    """Maximizable wrapper around :func:`oracle_objective` (its negation)."""
    y = np.asarray(y_samples, dtype=float)

    def objective(omega) -> float:
        return -oracle_objective(omega, observe_fn, y, problem)

    return objective


def gram_to_csv(gram: GramMatrix, path) -> None:
    """Dump a Gram matrix to CSV for debugging; first line records epsilon."""
    np.savetxt(path, gram.matrix, fmt="%.17g", delimiter=",",
               header=f"epsilon={gram.epsilon!r}")
