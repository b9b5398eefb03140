import numpy as np
import pytest

from dynofit.dynamics import Trajectory, integrate, lorenz_system
from dynofit.errors import (
    AllDivergedError,
    DegenerateDataError,
    ZeroTrueParameterError,
)
from dynofit.estimator import (
    OptimizerConfig,
    ParameterBox,
    estimation_error,
    grid_search,
    local_optimize,
    make_grid,
    multistart_estimate,
    prediction_error,
)
from dynofit.kernelscore import EstimationProblem, gram_from_samples, make_kernel_objective


def unit_box(dim=1, names=None):
    names = names or tuple(f"p{i}" for i in range(dim))
    return ParameterBox(np.zeros(dim), np.ones(dim), names)


class TestParameterBox:
    def test_validation(self):
        with pytest.raises(ValueError):
            ParameterBox(np.array([1.0]), np.array([1.0]), ("a",))
        with pytest.raises(ValueError):
            ParameterBox(np.array([0.0, 0.0]), np.array([1.0]), ("a",))
        with pytest.raises(ValueError):
            ParameterBox(np.array([0.0]), np.array([1.0]), ("a", "b"))

    def test_contains_and_clip(self):
        box = ParameterBox(np.array([0.0, -1.0]), np.array([1.0, 1.0]), ("a", "b"))
        assert box.contains([0.5, 0.0])
        assert not box.contains([1.5, 0.0])
        assert np.array_equal(box.clip([2.0, -3.0]), [1.0, -1.0])

    def test_sample_is_inside_and_seeded(self):
        box = ParameterBox(np.array([2.0, 10.0]), np.array([3.0, 20.0]), ("a", "b"))
        pts_a = box.sample(np.random.default_rng(0), 50)
        pts_b = box.sample(np.random.default_rng(0), 50)
        assert np.array_equal(pts_a, pts_b)
        assert np.all(pts_a >= box.lower) and np.all(pts_a <= box.upper)


class TestSearchGrid:
    def test_size_and_spacing(self):
        box = ParameterBox(np.array([0.0, 0.0]), np.array([1.0, 2.0]), ("a", "b"))
        grid = make_grid(box, [3, 5])
        assert grid.size == 15
        assert np.allclose(grid.spacings, [0.5, 0.5])
        assert grid.min_spacing == 0.5

    def test_lexicographic_order(self):
        box = ParameterBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]), ("a", "b"))
        grid = make_grid(box, [2, 2])
        expected = [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert [tuple(p) for p in grid.points] == expected

    def test_covers_each_point_once(self):
        box = ParameterBox(np.array([0.0]), np.array([1.0]), ("a",))
        grid = make_grid(box, [11])
        assert len({tuple(p) for p in grid.points}) == grid.size

    def test_rejects_bad_counts(self):
        box = unit_box(2)
        with pytest.raises(ValueError):
            make_grid(box, [2])
        with pytest.raises(ValueError):
            make_grid(box, [1, 2])

    def test_expected_distance_to_grid_is_quarter_spacing(self):
        # For omega* uniform on a cell, E dist(omega*, grid) = spacing / 4;
        # checked by Monte Carlo against the exact value.
        box = unit_box()
        grid = make_grid(box, [6])
        spacing = grid.spacings[0]
        rng = np.random.default_rng(123)
        draws = rng.uniform(0.0, 1.0, size=100_000)
        dists = np.min(np.abs(draws[:, None] - grid.axes[0][None, :]), axis=1)
        assert dists.mean() == pytest.approx(spacing / 4, rel=0.02)


class TestGridSearch:
    def test_interior_quadratic_max(self):
        box = unit_box()
        grid = make_grid(box, [11])
        target = grid.points[7][0]
        result = grid_search(lambda w: 1.0 - (w[0] - target) ** 2, box, grid)
        assert result.omega_hat.values[0] == target
        assert result.score == 1.0
        assert result.n_ode_solves == 11

    def test_audit_trail_is_exhaustive_and_consistent(self):
        box = unit_box()
        grid = make_grid(box, [9])
        result = grid_search(lambda w: float(np.sin(3 * w[0])), box, grid)
        assert len(result.evaluations) == grid.size
        assert {w[0] for w, _ in result.evaluations} == {p[0] for p in grid.points}
        assert result.score == max(s for _, s in result.evaluations)

    def test_tie_breaks_lexicographically_smallest(self):
        box = unit_box(2)
        grid = make_grid(box, [3, 3])
        result = grid_search(lambda w: 0.0, box, grid)
        assert np.array_equal(result.omega_hat.values, [0.0, 0.0])

    def test_argmax_invariant_under_increasing_transforms(self):
        box = unit_box()
        grid = make_grid(box, [17])
        rng = np.random.default_rng(1)
        table = {float(p[0]): rng.uniform(-1, 1) for p in grid.points}
        base = grid_search(lambda w: table[float(w[0])], box, grid)
        scaled = grid_search(lambda w: 5.0 * table[float(w[0])], box, grid)
        warped = grid_search(lambda w: np.tanh(table[float(w[0])]) + 2.0, box, grid)
        assert np.array_equal(base.omega_hat.values, scaled.omega_hat.values)
        assert np.array_equal(base.omega_hat.values, warped.omega_hat.values)

    def test_all_diverged_raises(self):
        box = unit_box()
        grid = make_grid(box, [4])
        with pytest.raises(AllDivergedError):
            grid_search(lambda w: float("-inf"), box, grid)

    def test_thread_count_does_not_change_result(self):
        box = unit_box(2)
        grid = make_grid(box, [6, 6])
        objective = lambda w: float(np.sin(5 * w[0]) * np.cos(3 * w[1]))
        serial = grid_search(objective, box, grid, threads=1)
        threaded = grid_search(objective, box, grid, threads=4)
        assert serial.evaluations == threaded.evaluations
        assert np.array_equal(serial.omega_hat.values, threaded.omega_hat.values)

    def test_exact_recovery_identity_observation_small(self):
        system = lorenz_system(fixed={"beta": 8 / 3})
        x0 = np.array([1.0, 1.0, 1.0])
        problem = EstimationProblem(system, x0, 60, 0.01)
        box = ParameterBox(np.array([8.0, 24.0]), np.array([12.0, 32.0]),
                           ("sigma", "rho"))
        grid = make_grid(box, [5, 5])
        omega_star = grid.points[12]  # interior grid point (10, 28)
        traj = integrate(system, omega_star, x0, 60, 0.01)
        objective = make_kernel_objective(problem, gram_from_samples(traj.states))
        result = grid_search(objective, box, grid)
        assert np.array_equal(result.omega_hat.values, omega_star)
        assert result.score >= 1.0 - 1e-9


class TestLocalOptimize:
    def test_concave_quadratic_converges(self):
        box = unit_box()
        target = 0.37
        result = local_optimize(np.array([0.9]), box,
                                lambda w: 1.0 - (w[0] - target) ** 2,
                                OptimizerConfig())
        assert abs(result.omega[0] - target) < 1e-4

    def test_boundary_maximum_is_reached(self):
        box = unit_box()
        result = local_optimize(np.array([0.2]), box, lambda w: float(w[0]),
                                OptimizerConfig())
        assert result.omega[0] == 1.0

    def test_trace_is_monotone(self):
        box = unit_box(2)
        rng = np.random.default_rng(2)
        bumps = rng.uniform(0, 1, size=(4, 2))

        def rough(w):
            return float(sum(np.exp(-20 * np.sum((w - b) ** 2)) for b in bumps))

        result = local_optimize(np.array([0.5, 0.5]), box, rough,
                                OptimizerConfig())
        scores = [s for _, _, s in result.trace]
        assert all(b >= a for a, b in zip(scores, scores[1:]))

    def test_divergent_region_is_avoided(self):
        box = unit_box()

        def objective(w):
            if w[0] > 0.7:
                return float("-inf")
            return float(w[0])

        result = local_optimize(np.array([0.5]), box, objective,
                                OptimizerConfig())
        assert 0.5 < result.omega[0] <= 0.7
        assert result.score > 0.5

    def test_divergent_start_returns_immediately(self):
        box = unit_box()
        result = local_optimize(np.array([0.5]), box, lambda w: float("-inf"),
                                OptimizerConfig())
        assert result.score == float("-inf")
        assert result.n_evals == 1

    def test_iteration_cap_limits_trace(self):
        box = unit_box()
        cfg = OptimizerConfig(max_iters_per_start=5)
        result = local_optimize(np.array([0.9]), box,
                                lambda w: -((w[0] - 0.1) ** 2), cfg)
        assert max(it for it, _, _ in result.trace) <= 5


class TestMultistart:
    def test_concave_objective_any_start_count(self):
        box = unit_box()
        for n_starts in (1, 3, 8):
            cfg = OptimizerConfig(n_starts=n_starts, seed=4)
            result = multistart_estimate(
                lambda w: 1.0 - (w[0] - 0.62) ** 2, box, cfg)
            assert abs(result.omega_hat.values[0] - 0.62) < 1e-3

    def test_two_bumps_returns_the_taller(self):
        box = unit_box()

        def objective(w):
            tall = 1.0 * np.exp(-80 * (w[0] - 0.8) ** 2)
            short = 0.6 * np.exp(-80 * (w[0] - 0.2) ** 2)
            return float(tall + short)

        cfg = OptimizerConfig(n_starts=8, seed=5)
        result = multistart_estimate(objective, box, cfg)
        assert abs(result.omega_hat.values[0] - 0.8) < 1e-2

    def test_deterministic_given_seed_and_thread_invariant(self):
        box = unit_box(2)

        def objective(w):
            return float(-np.sum((w - 0.3) ** 2) + 0.1 * np.sin(9 * w[0]))

        cfg = OptimizerConfig(n_starts=6, seed=6)
        a = multistart_estimate(objective, box, cfg, threads=1)
        b = multistart_estimate(objective, box, cfg, threads=4)
        assert np.array_equal(a.omega_hat.values, b.omega_hat.values)
        assert a.evaluations == b.evaluations
        assert a.traces == b.traces
        assert a.n_ode_solves == b.n_ode_solves

    def test_budget_counts_every_probe(self):
        box = unit_box()
        calls = [0]

        def objective(w):
            calls[0] += 1
            return 1.0 - (w[0] - 0.5) ** 2

        cfg = OptimizerConfig(n_starts=3, seed=7)
        result = multistart_estimate(objective, box, cfg)
        assert result.n_ode_solves == calls[0]

    def test_all_diverged_raises(self):
        box = unit_box()
        cfg = OptimizerConfig(n_starts=2, seed=8)
        with pytest.raises(AllDivergedError):
            multistart_estimate(lambda w: float("-inf"), box, cfg)

    def test_relative_window_starts(self):
        from dynofit.estimator import _draw_starts

        box = ParameterBox(np.array([0.0]), np.array([100.0]), ("a",))
        cfg = OptimizerConfig(n_starts=50, seed=9,
                              start_center=np.array([50.0]),
                              start_rel_width=0.1)
        starts = _draw_starts(box, cfg, np.random.default_rng(9))
        assert starts.shape == (50, 1)
        assert np.all(starts >= 45.0) and np.all(starts <= 55.0)
        # Without a center the draws cover the whole box.
        uniform = _draw_starts(box, OptimizerConfig(n_starts=50, seed=9),
                               np.random.default_rng(9))
        assert uniform.min() < 20.0 and uniform.max() > 80.0

    def test_score_improves_from_offset_start_on_lorenz(self):
        # Single-parameter refinement from a 10% offset start should end
        # closer to the truth than it began.
        system = lorenz_system(fixed={"rho": 60.0, "beta": 8 / 3})
        x0 = np.array([0.5, 0.5, 0.5])
        n, dt = 150, 0.01
        sigma_star = 20.0
        traj = integrate(system, (sigma_star,), x0, n, dt)
        problem = EstimationProblem(system, x0, n, dt)
        objective = make_kernel_objective(problem, gram_from_samples(traj.states))
        box = ParameterBox(np.array([15.0]), np.array([25.0]), ("sigma",))
        cfg = OptimizerConfig(n_starts=1, seed=10,
                              start_center=np.array([1.1 * sigma_star]),
                              start_rel_width=0.0)
        result = multistart_estimate(objective, box, cfg)
        final_err = abs(result.omega_hat.values[0] - sigma_star) / sigma_star
        assert final_err < 0.1


class TestErrorMetrics:
    def test_estimation_error_cases(self):
        assert np.array_equal(estimation_error([1.0], [1.0]), [0.0])
        assert estimation_error([1.1], [1.0])[0] == pytest.approx(0.1)
        assert np.allclose(estimation_error([2.0, 3.0], [4.0, 2.0]), [0.5, 0.5])
        with pytest.raises(ZeroTrueParameterError):
            estimation_error([1.0, 2.0], [1.0, 0.0])

    def test_prediction_error_cases(self):
        states = np.random.default_rng(11).normal(size=(10, 3))
        a = Trajectory(0.0, 0.1, states)
        assert prediction_error(a, a) == 0.0

        zeros = Trajectory(0.0, 0.1, np.zeros((10, 3)))
        assert prediction_error(a, zeros) == pytest.approx(1.0)
        with pytest.raises(DegenerateDataError):
            prediction_error(zeros, a)

    def test_prediction_error_constant_offset(self):
        ones = Trajectory(0.0, 0.1, np.ones((8, 1)))
        shifted = Trajectory(0.0, 0.1, np.full((8, 1), 1.001))
        assert prediction_error(ones, shifted) == pytest.approx(1e-6, rel=1e-9)

    def test_result_serialization(self):
        box = unit_box()
        grid = make_grid(box, [5])
        result = grid_search(lambda w: float(w[0]), box, grid)
        payload = result.to_json_dict()
        assert payload["omega_hat"] == [1.0]
        assert len(payload["evaluations"]) == 5
        assert "wall_time" in payload
        assert "wall_time" not in result.to_json_dict(include_wall_time=False)
