"""Adaptive Dormand-Prince 5(4) integrator and the classical drift-off experiment.

The first-same-as-last property is not used: every attempted step evaluates
all seven stages.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from daekan.dae_systems import DaeSystem, ode_sample, constraint_residual, pendulum_system
from error_tracking import IntegratorError, MaxStepsExceededError, NonFiniteRhsError
from logging_config import get_logger

logger = get_logger(__name__)

STAGES = 7

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus fourth-order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

RightHandSide = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OdeProblem:
    rhs: RightHandSide
    initial_state: np.ndarray
    t0: float
    t1: float

    @property
    def dimension(self) -> int:
        return len(self.initial_state)


class IntegratorSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    rtol: float = Field(default=1e-8, gt=0.0)
    atol: float = Field(default=1e-8, gt=0.0)
    initial_step: Optional[float] = Field(default=None, gt=0.0)
    max_step: Optional[float] = Field(default=None, gt=0.0)
    max_steps: int = Field(default=1_000_000, ge=1, description="Budget of attempted steps")
    safety: float = Field(default=0.9, gt=0.0, le=1.0)
    min_factor: float = Field(default=0.2, gt=0.0, le=1.0)
    max_factor: float = Field(default=10.0, ge=1.0)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray   # (len(times), dimension)
    rejected_steps: int = 0
    rhs_calls: int = 0

    @property
    def accepted_steps(self) -> int:
        return max(len(self.times) - 1, 0)

    @property
    def attempted_steps(self) -> int:
        return self.accepted_steps + self.rejected_steps


class _CountingRhs:
    def __init__(self, rhs: RightHandSide):
        self.rhs = rhs
        self.calls = 0

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        self.calls += 1
        value = np.asarray(self.rhs(t, y), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteRhsError(f"Right-hand side is not finite at t={t!r}")
        return value


def dopri5_step(rhs: RightHandSide, t: float, y: np.ndarray, h: float):
    """One step: fifth-order solution and the embedded error estimate."""
    k = np.empty((STAGES, len(y)))
    for stage in range(STAGES):
        increment = np.zeros_like(y)
        for j, a in enumerate(A[stage]):
            if a:
                increment += a * k[j]
        k[stage] = rhs(t + C[stage] * h, y + h * increment)
    y_new = y + h * (B5 @ k)
    error = h * (E @ k)
    return y_new, error


def error_norm(error: np.ndarray, y: np.ndarray, y_new: np.ndarray, settings: IntegratorSettings) -> float:
    scale = settings.atol + settings.rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((error / scale) ** 2)))


def integrate(problem: OdeProblem, settings: IntegratorSettings) -> Trajectory:
    """Accepted steps of an adaptive DOPRI5 run over ``[t0, t1]``."""
    y = np.array(problem.initial_state, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise IntegratorError("Initial state is not finite")
    span = problem.t1 - problem.t0
    if span <= 0.0:
        raise IntegratorError(f"Empty time span [{problem.t0}, {problem.t1}]")

    rhs = _CountingRhs(problem.rhs)
    max_step = settings.max_step or span
    h = min(settings.initial_step or 1e-3 * span, max_step)
    t = problem.t0
    times: List[float] = [t]
    states: List[np.ndarray] = [y.copy()]
    rejected = 0
    attempts = 0

    def partial() -> Trajectory:
        return Trajectory(np.array(times), np.array(states), rejected, rhs.calls)

    while t < problem.t1:
        if attempts >= settings.max_steps:
            raise MaxStepsExceededError(
                f"Exceeded {settings.max_steps} steps at t={t!r}", partial())
        last = t + h >= problem.t1
        if last:
            h = problem.t1 - t
        if h <= 16.0 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegratorError(f"Step size underflow at t={t!r}")
        attempts += 1
        y_new, error = dopri5_step(rhs, t, y, h)
        err = error_norm(error, y, y_new, settings)
        if err <= 1.0:
            t = problem.t1 if last else t + h
            y = y_new
            times.append(t)
            states.append(y.copy())
        else:
            rejected += 1
        factor = settings.max_factor if err == 0.0 else settings.safety * err ** -0.2
        h = min(max_step, h * min(settings.max_factor, max(settings.min_factor, factor)))

    trajectory = partial()
    logger.debug("Integration finished", extra={
        "accepted_steps": trajectory.accepted_steps,
        "rejected_steps": rejected,
        "rhs_calls": rhs.calls,
    })
    return trajectory


@dataclass
class DriftTable:
    """Constraint violation along a classical trajectory."""
    times: np.ndarray
    c3_residual: np.ndarray
    c2_residual: np.ndarray
    trajectory: Trajectory

    def window_max(self, start: float, stop: float, level: int = 3) -> float:
        values = self.c3_residual if level == 3 else self.c2_residual
        mask = (self.times >= start) & (self.times <= stop)
        return float(np.max(values[mask])) if np.any(mask) else 0.0


def system_driftoff(system: DaeSystem, settings: IntegratorSettings, horizon: float) -> DriftTable:
    """Integrate the multiplier-free ODE form and measure the position and velocity constraints."""
    problem = OdeProblem(system.ode_rhs, np.asarray(system.initial_state[:system.n_u]), 0.0, horizon)
    trajectory = integrate(problem, settings)
    c3 = np.empty(len(trajectory.times))
    c2 = np.empty(len(trajectory.times))
    for index, (t, y) in enumerate(zip(trajectory.times, trajectory.states)):
        sample = ode_sample(system, float(t), y)
        c3[index] = abs(constraint_residual(system, 3, sample))
        c2[index] = abs(constraint_residual(system, 2, sample))
    logger.info("Drift-off run finished", extra={
        "system": system.name,
        "horizon": horizon,
        "rtol": settings.rtol,
        "max_c3": float(np.max(c3)),
        "max_c2": float(np.max(c2)),
        "accepted_steps": trajectory.accepted_steps,
    })
    return DriftTable(trajectory.times, c3, c2, trajectory)


def pendulum_driftoff(settings: Optional[IntegratorSettings] = None, horizon: float = 100.0) -> DriftTable:
    return system_driftoff(pendulum_system(), settings or IntegratorSettings(), horizon)
