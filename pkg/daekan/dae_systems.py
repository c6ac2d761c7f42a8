"""Benchmark DAE systems: residuals of every index form, constraint hierarchies, exact solutions.

Residuals are written once against the generic math helpers of
:mod:`daekan.autodiff`, so they evaluate on plain floats/arrays (exact
solutions, integrator output) and on recorded values (training) alike.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import ellipj, ellipk

from daekan import autodiff as ad
from error_tracking import NetworkShapeError, UnknownIndexFormError, UnknownSystemError
from logging_config import get_logger

logger = get_logger(__name__)

INDEX_FORMS = (1, 2, 3)


@dataclass(frozen=True)
class StateSample:
    """Differential values ``u``, their time derivatives ``du`` and algebraic values ``z`` at ``t``."""
    t: object
    u: Sequence
    du: Sequence
    z: Sequence


Evaluator = Callable[[StateSample], List]


@dataclass(frozen=True)
class ResidualSpec:
    form: int
    n_state: int
    n_derivative: int
    n_algebraic: int
    evaluator: Evaluator

    @property
    def length(self) -> int:
        return self.n_state + self.n_algebraic

    def __call__(self, sample: StateSample) -> List:
        if (len(sample.u), len(sample.du), len(sample.z)) != (self.n_state, self.n_derivative, self.n_algebraic):
            raise NetworkShapeError(
                f"Sample arity ({len(sample.u)}, {len(sample.du)}, {len(sample.z)}) does not match "
                f"({self.n_state}, {self.n_derivative}, {self.n_algebraic})")
        return self.evaluator(sample)


@dataclass(frozen=True)
class DaeSystem:
    name: str
    variable_names: Tuple[str, ...]
    n_u: int
    n_z: int
    index_forms: Mapping[int, ResidualSpec]
    constraints: Mapping[int, Callable[[StateSample], object]]
    initial_state: np.ndarray
    exact_solution: Callable[[object], np.ndarray]
    exact_derivative: Callable[[object], np.ndarray]
    ode_rhs: Callable[[float, np.ndarray], np.ndarray]
    ode_algebraic: Callable[[np.ndarray], np.ndarray]
    t_end: float = 1.0

    @property
    def n_variables(self) -> int:
        return self.n_u + self.n_z

    @property
    def differential_names(self) -> Tuple[str, ...]:
        return self.variable_names[:self.n_u]


def _build_forms(name: str, n_u: int, n_z: int, dynamics: Callable[[StateSample], List],
                 constraints: Mapping[int, Callable]) -> Dict[int, ResidualSpec]:
    forms = {}
    for level in INDEX_FORMS:
        constraint = constraints[level]

        def evaluate(sample: StateSample, constraint=constraint) -> List:
            return dynamics(sample) + [constraint(sample)]

        forms[level] = ResidualSpec(level, n_u, n_u, n_z, evaluate)
    logger.debug("Index forms built", extra={"system": name, "forms": list(forms)})
    return forms


# ============================================================================
# PENDULUM
# ============================================================================

def _pendulum_dynamics(s: StateSample) -> List:
    x, y, u, v = s.u
    dx, dy, du, dv = s.du
    lam, = s.z
    return [dx - u, dy - v, du + lam * x, dv + lam * y + 1.0]


_PENDULUM_CONSTRAINTS = {
    3: lambda s: s.u[0] ** 2 + s.u[1] ** 2 - 1.0,
    2: lambda s: s.u[0] * s.u[2] + s.u[1] * s.u[3],
    1: lambda s: s.u[2] ** 2 + s.u[3] ** 2 - s.z[0] - s.u[1],
}

# released at rest from (1, 0): sin(theta/2) = k sn(K - t | m) with m = k^2 = 1/2
_PENDULUM_M = 0.5
_PENDULUM_K = np.sqrt(_PENDULUM_M)


def _pendulum_jacobi(t):
    sn, cn, dn, _ = ellipj(ellipk(_PENDULUM_M) - np.asarray(t, dtype=np.float64), _PENDULUM_M)
    return sn, cn, dn


def _pendulum_exact(t) -> np.ndarray:
    sn, cn, dn = _pendulum_jacobi(t)
    k = _PENDULUM_K
    return np.array([
        2.0 * k * sn * dn,
        -cn * cn,
        -2.0 * k * cn ** 3,
        -2.0 * cn * sn * dn,
        3.0 * cn * cn,
    ])


def _pendulum_exact_derivative(t) -> np.ndarray:
    sn, cn, dn = _pendulum_jacobi(t)
    k, m = _PENDULUM_K, _PENDULUM_M
    return np.array([
        -2.0 * k * cn * (dn * dn - m * sn * sn),
        -2.0 * cn * sn * dn,
        -6.0 * k * cn * cn * sn * dn,
        2.0 * (cn * cn * dn * dn - sn * sn * dn * dn - m * sn * sn * cn * cn),
    ])


def _pendulum_lambda(y: np.ndarray) -> np.ndarray:
    return np.array([y[2] ** 2 + y[3] ** 2 - y[1]])


def _pendulum_rhs(t: float, y: np.ndarray) -> np.ndarray:
    lam = y[2] ** 2 + y[3] ** 2 - y[1]
    return np.array([y[2], y[3], -lam * y[0], -lam * y[1] - 1.0])


def pendulum_system() -> DaeSystem:
    """Unit pendulum in Cartesian coordinates, ``(x, y, u, v)`` and multiplier ``lambda``."""
    return DaeSystem(
        name="pendulum",
        variable_names=("x", "y", "u", "v", "lambda"),
        n_u=4,
        n_z=1,
        index_forms=_build_forms("pendulum", 4, 1, _pendulum_dynamics, _PENDULUM_CONSTRAINTS),
        constraints=_PENDULUM_CONSTRAINTS,
        initial_state=np.array([1.0, 0.0, 0.0, 0.0, 0.0]),
        exact_solution=_pendulum_exact,
        exact_derivative=_pendulum_exact_derivative,
        ode_rhs=_pendulum_rhs,
        ode_algebraic=_pendulum_lambda,
    )


# ============================================================================
# CONSTRAINED PARTICLE
# ============================================================================

def _particle_dynamics(s: StateSample) -> List:
    u1, u2, z1, z2 = s.u
    du1, du2, dz1, dz2 = s.du
    lam, = s.z
    return [
        du1 - z1,
        du2 - z2,
        dz1 - (2.0 * u2 - 2.0 * u2 ** 3 - u1 * lam),
        dz2 - (2.0 * u1 - 2.0 * u1 ** 3 - u2 * lam),
    ]


def _particle_index1(s: StateSample):
    u1, u2, z1, z2 = s.u
    lam, = s.z
    radius = u1 ** 2 + u2 ** 2
    return z1 ** 2 + z2 ** 2 + 2.0 * u1 * u2 * (2.0 - radius) - lam * radius


_PARTICLE_CONSTRAINTS = {
    3: lambda s: s.u[0] ** 2 + s.u[1] ** 2 - 1.0,
    2: lambda s: s.u[0] * s.u[2] + s.u[1] * s.u[3],
    1: _particle_index1,
}


def _particle_exact(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.array([np.cos(t), np.sin(t), -np.sin(t), np.cos(t), 1.0 + np.sin(2.0 * t)])


def _particle_exact_derivative(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.array([-np.sin(t), np.cos(t), -np.cos(t), -np.sin(t)])


def _particle_lambda(y: np.ndarray) -> np.ndarray:
    u1, u2, z1, z2 = y
    radius = u1 * u1 + u2 * u2
    return np.array([(z1 * z1 + z2 * z2 + 2.0 * u1 * u2 * (2.0 - radius)) / radius])


def _particle_rhs(t: float, y: np.ndarray) -> np.ndarray:
    u1, u2, z1, z2 = y
    lam = _particle_lambda(y)[0]
    return np.array([z1, z2, 2.0 * u2 - 2.0 * u2 ** 3 - u1 * lam, 2.0 * u1 - 2.0 * u1 ** 3 - u2 * lam])


def particle_system() -> DaeSystem:
    """Particle on the unit circle, ``(u1, u2, z1, z2)`` and multiplier ``lambda``."""
    return DaeSystem(
        name="particle",
        variable_names=("u1", "u2", "z1", "z2", "lambda"),
        n_u=4,
        n_z=1,
        index_forms=_build_forms("particle", 4, 1, _particle_dynamics, _PARTICLE_CONSTRAINTS),
        constraints=_PARTICLE_CONSTRAINTS,
        initial_state=np.array([1.0, 0.0, 0.0, 1.0, 1.0]),
        exact_solution=_particle_exact,
        exact_derivative=_particle_exact_derivative,
        ode_rhs=_particle_rhs,
        ode_algebraic=_particle_lambda,
    )


# ============================================================================
# TWO-LINK ROBOT ARM
# ============================================================================

def robot_arm_mass_matrix(u1, u2):
    c2 = ad.cos(u2)
    off = 1.0 + 1.5 * c2
    return ((5.0 + 3.0 * c2, off), (off, 1.0))


def robot_arm_force(u1, u2, v1, v2):
    c1, c12, c2 = ad.cos(u1), ad.cos(u1 + u2), ad.cos(u2)
    return ((c1 + c12) * v1 - 3.0 * u1, c12 * v1 + (1.0 - 1.5 * c2) * u1)


def robot_arm_constraint_jacobian(u1, u2):
    c12 = ad.cos(u1 + u2)
    return (ad.cos(u1) + c12, c12)


def _robot_dynamics(s: StateSample) -> List:
    u1, u2, v1, v2 = s.u
    du1, du2, dv1, dv2 = s.du
    lam, = s.z
    (m11, m12), (m21, m22) = robot_arm_mass_matrix(u1, u2)
    f1, f2 = robot_arm_force(u1, u2, v1, v2)
    g1, g2 = robot_arm_constraint_jacobian(u1, u2)
    return [
        du1 - v1,
        du2 - v2,
        m11 * dv1 + m12 * dv2 - f1 + g1 * lam,
        m21 * dv1 + m22 * dv2 - f2 + g2 * lam,
    ]


def _robot_index1(s: StateSample):
    u1, u2, v1, v2 = s.u
    _, _, dv1, dv2 = s.du
    return (-ad.sin(u1) * v1 ** 2 + ad.cos(u1) * dv1 + (dv1 + dv2) * ad.cos(u1 + u2)
            - ad.sin(u1 + u2) * (v1 + v2) ** 2)


_ROBOT_CONSTRAINTS = {
    3: lambda s: ad.sin(s.u[0]) + ad.sin(s.u[0] + s.u[1]),
    2: lambda s: ad.cos(s.u[0]) * s.u[2] + ad.cos(s.u[0] + s.u[1]) * (s.u[2] + s.u[3]),
    1: _robot_index1,
}


def _robot_exact(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    s, c = np.sin(t), np.cos(t)
    return np.array([s, -2.0 * s, c, -2.0 * c, c])


def _robot_exact_derivative(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    s, c = np.sin(t), np.cos(t)
    return np.array([c, -2.0 * c, -s, 2.0 * s])


def _robot_accelerations(y: np.ndarray) -> Tuple[np.ndarray, float]:
    """``v'`` and ``lambda`` from ``M v' + G^T lambda = f`` and the index-1 constraint."""
    u1, u2, v1, v2 = y
    mass = np.array(robot_arm_mass_matrix(u1, u2), dtype=np.float64)
    force = np.array(robot_arm_force(u1, u2, v1, v2), dtype=np.float64)
    jac = np.array(robot_arm_constraint_jacobian(u1, u2), dtype=np.float64)
    system = np.zeros((3, 3))
    system[:2, :2] = mass
    system[:2, 2] = jac
    system[2, :2] = jac
    rhs = np.array([force[0], force[1],
                    np.sin(u1) * v1 ** 2 + np.sin(u1 + u2) * (v1 + v2) ** 2])
    solution = np.linalg.solve(system, rhs)
    return solution[:2], float(solution[2])


def _robot_lambda(y: np.ndarray) -> np.ndarray:
    return np.array([_robot_accelerations(y)[1]])


def _robot_rhs(t: float, y: np.ndarray) -> np.ndarray:
    accel, _ = _robot_accelerations(y)
    return np.array([y[2], y[3], accel[0], accel[1]])


def robot_arm_system() -> DaeSystem:
    """Two-link arm whose end effector slides on the x-axis: ``(u1, u2, v1, v2)`` and ``lambda``."""
    return DaeSystem(
        name="robot-arm",
        variable_names=("u1", "u2", "v1", "v2", "lambda"),
        n_u=4,
        n_z=1,
        index_forms=_build_forms("robot-arm", 4, 1, _robot_dynamics, _ROBOT_CONSTRAINTS),
        constraints=_ROBOT_CONSTRAINTS,
        initial_state=np.array([0.0, 0.0, 1.0, -2.0, 1.0]),
        exact_solution=_robot_exact,
        exact_derivative=_robot_exact_derivative,
        ode_rhs=_robot_rhs,
        ode_algebraic=_robot_lambda,
    )


# ============================================================================
# REGISTRY AND EVALUATION
# ============================================================================

SYSTEM_FACTORIES: Dict[str, Callable[[], DaeSystem]] = {
    "pendulum": pendulum_system,
    "particle": particle_system,
    "robot-arm": robot_arm_system,
}


def get_system(name: str) -> DaeSystem:
    try:
        return SYSTEM_FACTORIES[name]()
    except KeyError:
        raise UnknownSystemError(
            f"Unknown system '{name}'; known systems: {', '.join(SYSTEM_FACTORIES)}") from None


def _check_level(level: int) -> None:
    if level not in INDEX_FORMS:
        raise UnknownIndexFormError(f"Index form must be one of {INDEX_FORMS}, got {level!r}")


def residual(system: DaeSystem, form: int, sample: StateSample) -> List:
    """Stacked residual ``[dynamics..., constraint]`` of the chosen index form."""
    _check_level(form)
    return system.index_forms[form](sample)


def constraint_residual(system: DaeSystem, level: int, sample: StateSample):
    _check_level(level)
    return system.constraints[level](sample)


def exact_sample(system: DaeSystem, t) -> StateSample:
    state = system.exact_solution(t)
    derivative = system.exact_derivative(t)
    return StateSample(
        t=t,
        u=list(state[:system.n_u]),
        du=list(derivative),
        z=list(state[system.n_u:]),
    )


def ode_sample(system: DaeSystem, t: float, y: np.ndarray) -> StateSample:
    """Sample built from an ODE-form state, with ``lambda`` and derivatives recovered from the right-hand side."""
    y = np.asarray(y, dtype=np.float64)
    return StateSample(t=t, u=list(y), du=list(system.ode_rhs(t, y)), z=list(system.ode_algebraic(y)))
