"""Tests for the benchmark DAE systems, their index forms and exact solutions."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from daekan import autodiff as ad
from daekan.autodiff import ComputationRecord
from daekan.dae_systems import (
    INDEX_FORMS,
    StateSample,
    constraint_residual,
    exact_sample,
    get_system,
    ode_sample,
    residual,
    robot_arm_mass_matrix,
)
from error_tracking import NetworkShapeError, UnknownIndexFormError, UnknownSystemError

pytestmark = pytest.mark.unit

EXACT_TOL = 1e-12


class TestExactSolutions:
    """The closed-form trajectories solve every index form."""

    @pytest.mark.parametrize("form", INDEX_FORMS)
    def test_residual_vanishes(self, any_system, form, rng):
        for t in rng.uniform(0.0, 1.0, size=50):
            values = residual(any_system, form, exact_sample(any_system, float(t)))
            assert len(values) == any_system.n_u + any_system.n_z
            assert np.max(np.abs(np.asarray(values, dtype=np.float64))) <= EXACT_TOL

    def test_initial_state_satisfies_all_levels(self, any_system):
        sample = exact_sample(any_system, 0.0)
        assert np.allclose(np.concatenate([sample.u, sample.z]), any_system.initial_state, atol=1e-14)
        for level in INDEX_FORMS:
            assert abs(constraint_residual(any_system, level, sample)) <= EXACT_TOL

    def test_batched_times(self, any_system):
        times = np.linspace(0.0, 1.0, 7)
        batched = residual(any_system, 3, exact_sample(any_system, times))
        assert all(np.asarray(v).shape == (7,) for v in batched)
        assert np.max(np.abs(np.asarray(batched, dtype=np.float64))) <= EXACT_TOL

    def test_derivative_matches_finite_differences(self, any_system, rng):
        step = 1e-6
        for t in rng.uniform(0.05, 0.95, size=10):
            fd = (any_system.exact_solution(t + step) - any_system.exact_solution(t - step)) / (2 * step)
            assert np.allclose(any_system.exact_derivative(t), fd[:any_system.n_u], atol=1e-8)

    def test_pendulum_against_integrated_ode(self, pendulum):
        times = np.linspace(0.0, 2.0, 21)
        solution = solve_ivp(pendulum.ode_rhs, (0.0, 2.0), pendulum.initial_state[:4],
                             t_eval=times, rtol=1e-12, atol=1e-12, method="DOP853")
        exact = pendulum.exact_solution(times)
        assert np.allclose(solution.y, exact[:4], atol=1e-8)

    def test_ode_sample_is_consistent(self, any_system, rng):
        for t in rng.uniform(0.0, 1.0, size=5):
            state = any_system.exact_solution(float(t))
            sample = ode_sample(any_system, float(t), state[:any_system.n_u])
            assert np.allclose(sample.z, state[any_system.n_u:], atol=1e-10)
            assert np.allclose(sample.du, any_system.exact_derivative(float(t)), atol=1e-10)


class TestConstraints:
    """Constraint hierarchy values away from the solution."""

    def test_particle_off_circle(self, particle):
        far = StateSample(0.0, [2.0, 0.0, 0.0, 0.0], [0.0] * 4, [0.0])
        near = StateSample(0.0, [1.001, 0.0, 0.0, 0.0], [0.0] * 4, [0.0])
        assert constraint_residual(particle, 3, far) == pytest.approx(3.0)
        assert constraint_residual(particle, 3, near) == pytest.approx(2.001e-3, rel=1e-9)

    def test_robot_arm_mass_matrix_at_rest(self, robot_arm):
        u = robot_arm.initial_state
        matrix = np.array(robot_arm_mass_matrix(u[0], u[1]), dtype=np.float64)
        assert matrix.tolist() == [[8.0, 2.5], [2.5, 1.0]]
        assert np.all(np.linalg.eigvalsh(matrix) > 0.0)

    def test_residuals_accept_recorded_values(self, particle):
        with ComputationRecord() as record:
            t = ad.seed_input(record, 0.3)
            sample = StateSample(t, [ad.cos(t), ad.sin(t), -ad.sin(t), ad.cos(t)],
                                 [-ad.sin(t), ad.cos(t), -ad.cos(t), -ad.sin(t)], [1.0 + ad.sin(2.0 * t)])
            values = residual(particle, 2, sample)
            assert max(abs(float(v.primal)) for v in values) <= 1e-12

    def test_wrong_arity(self, particle):
        with pytest.raises(NetworkShapeError):
            residual(particle, 3, StateSample(0.0, [1.0, 0.0], [0.0, 0.0], [0.0]))


class TestConstraintHierarchy:
    """Along the exact solution, d/dt of each constraint level is the next lower level."""

    STEP = 1e-5
    # d/dt of the level-3 circle constraints is twice the level-2 constraint
    SCALE = {("pendulum", 3): 2.0, ("particle", 3): 2.0}

    @pytest.mark.parametrize("level", [3, 2])
    def test_time_derivative_matches_lower_level(self, any_system, level, rng):
        scale = self.SCALE.get((any_system.name, level), 1.0)
        worst = 0.0
        for t in rng.uniform(0.0, 1.0, size=50):
            ahead = constraint_residual(any_system, level, exact_sample(any_system, float(t) + self.STEP))
            behind = constraint_residual(any_system, level, exact_sample(any_system, float(t) - self.STEP))
            rate = (float(ahead) - float(behind)) / (2 * self.STEP)
            lower = float(constraint_residual(any_system, level - 1, exact_sample(any_system, float(t))))
            worst = max(worst, abs(rate - scale * lower))
        assert worst <= 1e-8


class TestRegistry:
    """System lookup and index-form validation."""

    @pytest.mark.parametrize("name", ["pendulum", "particle", "robot-arm"])
    def test_known_systems(self, name):
        system = get_system(name)
        assert system.name == name
        assert (system.n_u, system.n_z) == (4, 1)
        assert len(system.variable_names) == 5

    def test_unknown_system(self):
        with pytest.raises(UnknownSystemError, match="robot-arm"):
            get_system("double-pendulum")

    @pytest.mark.parametrize("form", [0, 4, "3"])
    def test_unknown_form(self, particle, form):
        sample = exact_sample(particle, 0.0)
        with pytest.raises(UnknownIndexFormError):
            residual(particle, form, sample)
        with pytest.raises(UnknownIndexFormError):
            constraint_residual(particle, form, sample)
