import math

import numpy as np
import pytest

from dynofit.dynamics import (
    ParameterVector,
    SystemSpec,
    Trajectory,
    cartesian_trajectory,
    double_pendulum_system,
    integrate,
    lorenz_rhs,
    lorenz_system,
    pendulum_cartesian,
    pendulum_energy,
    pendulum_rhs,
    rk4_step,
    trajectory_from_csv,
    trajectory_to_csv,
)
from dynofit.errors import DivergenceError


def exponential_system(rate: float = 1.0) -> SystemSpec:
    return SystemSpec("custom", 1, ("a",), lambda x, p: (p[0] * x[0],))


class TestLorenzRhs:
    def test_origin_is_fixed_point(self):
        assert lorenz_rhs((0.0, 0.0, 0.0), 10.0, 28.0, 8 / 3) == (0.0, 0.0, 0.0)

    def test_nontrivial_fixed_point(self):
        # Solving the stationarity equations gives
        # (+-sqrt(beta*(rho-1)), +-sqrt(beta*(rho-1)), rho-1).
        c = math.sqrt(72.0)
        out = lorenz_rhs((c, c, 27.0), 10.0, 28.0, 8 / 3)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_hand_arithmetic(self):
        assert lorenz_rhs((1.0, 2.0, 3.0), 10.0, 28.0, 8 / 3) == (10.0, 23.0, -6.0)


class TestPendulumRhs:
    def test_rest_equilibrium(self):
        assert pendulum_rhs((0.0, 0.0, 0.0, 0.0), 1.0, 2.0, 3.0) == (0.0, 0.0, 0.0, 0.0)

    def test_horizontal_upper_arm(self):
        # cos(delta) = 0 removes every coupling term, leaving -g*mu/(l1*mu).
        out = pendulum_rhs((math.pi / 2, 0.0, 0.0, 0.0), 1.0, 1.0, 1.0, g=9.8)
        assert np.allclose(out, (0.0, 0.0, -9.8, 0.0), atol=1e-12)

    def test_symbolic_oracle_values(self):
        # Frozen from an exact-rational CAS evaluation of the equations of
        # motion (cross-checked against a Lagrangian derivation).
        out = pendulum_rhs((0.3, -0.2, 0.5, -0.1), 2.0, 1.5, 3.0, g=9.8)
        expected = (0.5, -0.1, -5.13833801853445405752485580699,
                    7.47020259694802445632669654996)
        assert np.allclose(out, expected, rtol=1e-12, atol=0.0)

    def test_depends_on_masses_only_through_ratio(self):
        theta = (0.7, -1.2, 0.4, 2.1)
        rng = np.random.default_rng(5)
        for _ in range(20):
            l1, l2, m2, c = rng.uniform(0.5, 5.0, size=4)
            base = pendulum_rhs(theta, l1, l2, m2)
            scaled = pendulum_rhs(theta, l1, l2, m2 * c, m1=c)
            assert np.allclose(base, scaled, rtol=1e-12)


class TestPendulumCartesian:
    @pytest.mark.parametrize("angles,lengths,expected", [
        ((0.0, 0.0), (1.0, 1.0), (0.0, -1.0, 0.0, -2.0)),
        ((math.pi / 2, math.pi / 2), (1.0, 1.0), (1.0, 0.0, 2.0, 0.0)),
        ((math.pi, 0.0), (2.0, 3.0), (0.0, 2.0, 0.0, -1.0)),
    ])
    def test_known_configurations(self, angles, lengths, expected):
        out = pendulum_cartesian(angles[0], angles[1], *lengths)
        assert np.allclose(out, expected, atol=1e-12)

    def test_vectorized_matches_scalar(self):
        th1 = np.array([0.1, 0.2, -0.4])
        th2 = np.array([0.3, -0.1, 0.9])
        x1, y1, x2, y2 = pendulum_cartesian(th1, th2, 2.0, 1.5)
        for j in range(3):
            expected = pendulum_cartesian(th1[j], th2[j], 2.0, 1.5)
            assert np.allclose((x1[j], y1[j], x2[j], y2[j]), expected)


class TestRk4Step:
    def test_zero_rhs_keeps_state(self):
        assert rk4_step(lambda x: 0.0 * x, 5.0, 0.1) == 5.0

    def test_constant_rhs_is_exact(self):
        assert rk4_step(lambda x: np.ones_like(x), 0.0, 0.1) == pytest.approx(0.1, abs=1e-16)

    def test_linear_rhs_closed_form(self):
        # One step of the scheme on x' = x multiplies by
        # 1 + h + h^2/2 + h^3/6 + h^4/24.
        h = 0.1
        expected = 1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24
        assert rk4_step(lambda x: x, 1.0, h) == pytest.approx(expected, abs=1e-15)


class TestIntegrate:
    def test_zero_rhs_constant_trajectory(self):
        system = SystemSpec("custom", 2, ("a",), lambda x, p: (0.0, 0.0))
        traj = integrate(system, (1.0,), (1.0, 2.0), 3, 0.1)
        assert np.array_equal(traj.states, [[1.0, 2.0]] * 3)

    def test_lorenz_stays_finite_at_large_rho(self):
        traj = integrate(lorenz_system(), (20.0, 60.0, 8 / 3), (1.0, 1.0, 1.0),
                         1000, 0.01)
        assert np.all(np.isfinite(traj.states))

    def test_exponential_matches_analytic_solution(self):
        traj = integrate(exponential_system(), (1.0,), (1.0,), 11, 0.1)
        assert traj.states[-1, 0] == pytest.approx(math.e, abs=1e-5)

    def test_rows_match_iterated_rk4_step(self):
        system = lorenz_system()
        params = (10.0, 28.0, 8 / 3)
        traj = integrate(system, params, (1.0, 1.0, 1.0), 50, 0.01)
        x = np.array([1.0, 1.0, 1.0])
        for j in range(1, 50):
            x = rk4_step(lambda s: np.asarray(system.rhs(s, params)), x, 0.01)
            assert np.array_equal(traj.states[j], x)

    def test_deterministic(self):
        args = (lorenz_system(), (10.0, 28.0, 8 / 3), (1.0, 1.0, 1.0), 200, 0.01)
        assert np.array_equal(integrate(*args).states, integrate(*args).states)

    def test_divergence_reports_index(self):
        blowup = SystemSpec("custom", 1, ("a",), lambda x, p: (x[0] ** 3,))
        with pytest.raises(DivergenceError) as err:
            integrate(blowup, (1.0,), (5.0,), 200, 0.5)
        assert 0 < err.value.index < 200

    def test_substeps_reduce_integration_error(self):
        coarse = integrate(exponential_system(), (1.0,), (1.0,), 3, 0.5)
        fine = integrate(exponential_system(), (1.0,), (1.0,), 3, 0.5, substeps=8)
        exact = math.e
        assert abs(fine.states[-1, 0] - exact) < abs(coarse.states[-1, 0] - exact)

    def test_parameter_continuity_for_nonchaotic_system(self):
        decay = SystemSpec("custom", 1, ("a",), lambda x, p: (-p[0] * x[0],))
        base = integrate(decay, (1.0,), (1.0,), 101, 0.01)
        bumped = integrate(decay, (1.0 + 1e-12,), (1.0,), 101, 0.01)
        assert np.max(np.abs(base.states - bumped.states)) < 1e-6

    def test_input_validation(self):
        with pytest.raises(ValueError):
            integrate(lorenz_system(), (1.0, 2.0), (1.0, 1.0, 1.0), 10, 0.1)
        with pytest.raises(ValueError):
            integrate(lorenz_system(), (1.0, 2.0, 3.0), (1.0, 1.0), 10, 0.1)
        with pytest.raises(ValueError):
            integrate(lorenz_system(), (1.0, 2.0, 3.0), (1.0, 1.0, 1.0), 1, 0.1)
        with pytest.raises(ValueError):
            integrate(lorenz_system(), (1.0, 2.0, 3.0), (1.0, 1.0, 1.0), 10, -0.1)


class TestOrderAndConservation:
    def test_rk4_global_error_is_fourth_order(self):
        errors = []
        for dt in (0.1, 0.05):
            n = round(1.0 / dt) + 1
            traj = integrate(exponential_system(), (1.0,), (1.0,), n, dt)
            errors.append(abs(traj.states[-1, 0] - math.e))
        ratio = errors[0] / errors[1]
        assert 14.0 < ratio < 18.0

    def test_pendulum_energy_conservation(self):
        omega = (1.0, 1.0, 1.0)
        x0 = (0.4, -0.3, 0.2, 0.1)
        traj = integrate(double_pendulum_system(), omega, x0, 10001, 0.001)
        energy = pendulum_energy(traj.states, 1.0, 1.0, 1.0)
        drift = np.max(np.abs(energy - energy[0])) / abs(energy[0])
        assert drift < 1e-5

    def test_lorenz_fixed_parameter_variants_agree(self):
        full = integrate(lorenz_system(), (12.0, 45.0, 2.5), (0.5, 0.2, 0.9), 100, 0.01)
        two = integrate(lorenz_system(fixed={"beta": 2.5}), (12.0, 45.0),
                        (0.5, 0.2, 0.9), 100, 0.01)
        one = integrate(lorenz_system(fixed={"rho": 45.0, "beta": 2.5}), (12.0,),
                        (0.5, 0.2, 0.9), 100, 0.01)
        assert np.array_equal(full.states, two.states)
        assert np.array_equal(full.states, one.states)


class TestTypesAndSerialization:
    def test_parameter_vector_validation(self):
        with pytest.raises(ValueError):
            ParameterVector(np.array([1.0, np.inf]), ("a", "b"))
        with pytest.raises(ValueError):
            ParameterVector(np.array([1.0]), ("a", "b"))
        pv = ParameterVector(np.array([1.0, 2.0]), ("a", "b"))
        assert pv.as_dict() == {"a": 1.0, "b": 2.0}

    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            Trajectory(0.0, 0.1, np.array([[1.0]]))  # single sample
        with pytest.raises(ValueError):
            Trajectory(0.0, -0.1, np.zeros((3, 2)))
        with pytest.raises(ValueError):
            Trajectory(0.0, 0.1, np.array([[1.0], [np.nan]]))

    def test_trajectory_times(self):
        traj = Trajectory(1.0, 0.5, np.zeros((4, 1)))
        assert np.allclose(traj.times, [1.0, 1.5, 2.0, 2.5])

    def test_csv_round_trip(self, tmp_path):
        traj = integrate(lorenz_system(), (10.0, 28.0, 8 / 3), (1.0, 1.0, 1.0),
                         25, 0.01)
        path = tmp_path / "traj.csv"
        trajectory_to_csv(traj, path)
        header = path.read_text().splitlines()[0]
        assert header == "t,x1,x2,x3"
        loaded = trajectory_from_csv(path)
        assert loaded.dt == pytest.approx(traj.dt, rel=1e-15)
        assert np.array_equal(loaded.states, traj.states)

    def test_cartesian_trajectory_shape(self):
        traj = integrate(double_pendulum_system(), (2.0, 1.5, 3.0),
                         (0.3, -0.2, 0.5, -0.1), 20, 0.01)
        cart = cartesian_trajectory(traj, 2.0, 1.5)
        assert cart.states.shape == (20, 4)
        # first bob stays on a circle of radius l1
        radii = np.hypot(cart.states[:, 0], cart.states[:, 1])
        assert np.allclose(radii, 2.0, atol=1e-12)
