"""L-BFGS on flat numpy parameter vectors with a strong-Wolfe line search."""

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Deque, List, Optional, Tuple

import numpy as np

from daekan.config import LbfgsSettings
from error_tracking import (
    NonFiniteForwardError,
    NonFiniteLossError,
    NonFiniteValueError,
    error_tracker,
)
from logging_config import get_logger
from monitoring import monitoring

logger = get_logger(__name__)

# trial points that blow up count as +inf and shrink the step
_NON_FINITE_ERRORS = (NonFiniteLossError, NonFiniteValueError, NonFiniteForwardError)


class TerminationStatus(Enum):
    MAX_ITERATIONS = "max_iterations"
    GRADIENT_TOLERANCE = "gradient_tolerance"
    LOSS_CHANGE_TOLERANCE = "loss_change_tolerance"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass
class Evaluation:
    """Objective value and gradient at one point; ``details`` is passed through to snapshots."""
    value: float
    gradient: np.ndarray
    details: Any = None


Objective = Callable[[np.ndarray], Evaluation]


@dataclass
class Snapshot:
    iteration: int
    value: float
    grad_norm: float
    details: Any = None


@dataclass
class OptimizationResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    evaluations: int
    status: TerminationStatus
    snapshots: List[Snapshot] = field(default_factory=list)
    best_values: List[float] = field(default_factory=list)
    line_search_fallbacks: int = 0


@dataclass
class _Point:
    step: float
    value: float
    slope: float
    evaluation: Optional[Evaluation]


@dataclass
class LineSearchResult:
    step: float
    evaluation: Optional[Evaluation]
    evaluations: int
    success: bool
    strong_wolfe: bool = False


def cubic_interpolate(x1: float, f1: float, g1: float, x2: float, f2: float, g2: float,
                      bounds: Optional[Tuple[float, float]] = None) -> float:
    """Minimiser of the cubic through two points with slopes, clipped to ``bounds``."""
    if bounds is not None:
        lo, hi = bounds
    else:
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
    if not (math.isfinite(f2) and math.isfinite(g2)) or x1 == x2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_square = d1 * d1 - g1 * g2
    if d2_square < 0.0:
        return 0.5 * (lo + hi)
    d2 = math.sqrt(d2_square)
    if x1 <= x2:
        denominator = g2 - g1 + 2.0 * d2
        minimum = x2 - (x2 - x1) * ((g2 + d2 - d1) / denominator) if denominator else 0.5 * (x1 + x2)
    else:
        denominator = g1 - g2 + 2.0 * d2
        minimum = x1 - (x1 - x2) * ((g1 + d2 - d1) / denominator) if denominator else 0.5 * (x1 + x2)
    if not math.isfinite(minimum):
        return 0.5 * (lo + hi)
    return min(max(minimum, lo), hi)


def _evaluate(objective: Objective, x: np.ndarray) -> Optional[Evaluation]:
    try:
        evaluation = objective(x)
    except _NON_FINITE_ERRORS:
        return None
    if not (math.isfinite(evaluation.value) and np.all(np.isfinite(evaluation.gradient))):
        return None
    return evaluation


def _evaluate_along(objective: Objective, x: np.ndarray, direction: np.ndarray, step: float) -> _Point:
    evaluation = _evaluate(objective, x + step * direction)
    if evaluation is None:
        return _Point(step, math.inf, math.nan, None)
    return _Point(step, evaluation.value, float(evaluation.gradient @ direction), evaluation)


def strong_wolfe(objective: Objective, x: np.ndarray, value: float, gradient: np.ndarray,
                 direction: np.ndarray, step: float, settings: LbfgsSettings) -> LineSearchResult:
    """Bracketing phase followed by cubic zoom.

    If the evaluation budget runs out after a sufficient-decrease point was
    seen, that point is returned with ``strong_wolfe=False``.
    """
    c1, c2 = settings.c1, settings.c2
    slope0 = float(gradient @ direction)
    origin = _Point(0.0, value, slope0, None)
    previous = origin
    evaluations = 0
    lo: Optional[_Point] = None
    hi: Optional[_Point] = None

    while evaluations < settings.max_line_search:
        current = _evaluate_along(objective, x, direction, step)
        evaluations += 1
        armijo_fails = current.value > value + c1 * step * slope0
        if armijo_fails or (previous is not origin and current.value >= previous.value):
            lo, hi = previous, current
            break
        if abs(current.slope) <= -c2 * slope0:
            return LineSearchResult(step, current.evaluation, evaluations, True, True)
        if current.slope >= 0.0:
            lo, hi = current, previous
            break
        # extrapolate within [t + 0.01 (t - t_prev), 10 t]
        step = cubic_interpolate(previous.step, previous.value, previous.slope,
                                 current.step, current.value, current.slope,
                                 bounds=(current.step + 0.01 * (current.step - previous.step),
                                         current.step * 10.0))
        previous = current
    else:
        if previous is not origin:
            return LineSearchResult(previous.step, previous.evaluation, evaluations, True, False)
        return LineSearchResult(0.0, None, evaluations, False)

    scale = float(np.max(np.abs(direction))) or 1.0
    while evaluations < settings.max_line_search:
        if abs(hi.step - lo.step) * scale < 1e-15:
            break
        width = abs(hi.step - lo.step)
        trial = cubic_interpolate(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope)
        # keep the trial away from the bracket ends
        if min(abs(trial - lo.step), abs(trial - hi.step)) < 0.1 * width:
            trial = 0.5 * (lo.step + hi.step)
        current = _evaluate_along(objective, x, direction, trial)
        evaluations += 1
        if current.value > value + c1 * trial * slope0 or current.value >= lo.value:
            hi = current
            continue
        if abs(current.slope) <= -c2 * slope0:
            return LineSearchResult(trial, current.evaluation, evaluations, True, True)
        if current.slope * (hi.step - lo.step) >= 0.0:
            hi = lo
        lo = current

    if lo is not origin and lo.evaluation is not None:
        return LineSearchResult(lo.step, lo.evaluation, evaluations, True, False)
    return LineSearchResult(0.0, None, evaluations, False)


def steepest_descent_step(objective: Objective, x: np.ndarray, value: float, gradient: np.ndarray,
                          settings: LbfgsSettings) -> LineSearchResult:
    """Backtrack along ``-gradient`` by halving until sufficient decrease."""
    norm = float(np.linalg.norm(gradient))
    step = min(1.0, 1.0 / norm) if norm > 0.0 else 0.0
    evaluations = 0
    while step > 0.0 and evaluations < settings.max_line_search:
        evaluation = _evaluate(objective, x - step * gradient)
        evaluations += 1
        if evaluation is not None and evaluation.value <= value - settings.c1 * step * norm * norm:
            return LineSearchResult(step, evaluation, evaluations, True)
        step *= 0.5
    return LineSearchResult(0.0, None, evaluations, False)


def two_loop_direction(gradient: np.ndarray, s_history: Deque[np.ndarray],
                       y_history: Deque[np.ndarray]) -> np.ndarray:
    """``-H g`` with the implicit L-BFGS inverse Hessian."""
    q = gradient.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_history, y_history)]
    for s, y, rho in zip(reversed(s_history), reversed(y_history), reversed(rhos)):
        alpha = rho * float(s @ q)
        alphas.append(alpha)
        q -= alpha * y
    if s_history:
        s, y = s_history[-1], y_history[-1]
        q *= float(s @ y) / float(y @ y)
    for s, y, rho, alpha in zip(s_history, y_history, rhos, reversed(alphas)):
        beta = rho * float(y @ q)
        q += (alpha - beta) * s
    return -q


def minimize_lbfgs(objective: Objective, x0: np.ndarray, settings: LbfgsSettings,
                   max_iterations: int, eval_every: int = 10,
                   on_snapshot: Optional[Callable[[Snapshot], None]] = None) -> OptimizationResult:
    """Minimise ``objective`` from ``x0``.

    Snapshots are taken at iteration 0, every ``eval_every`` iterations and at
    the last iteration. ``max_iterations = 0`` evaluates nothing.
    """
    x = np.array(x0, dtype=np.float64)
    if max_iterations <= 0:
        return OptimizationResult(x, math.nan, np.zeros_like(x), 0, 0, TerminationStatus.MAX_ITERATIONS)

    evaluation = objective(x)
    evaluations = 1
    value, gradient = evaluation.value, evaluation.gradient
    s_history: Deque[np.ndarray] = deque(maxlen=settings.history)
    y_history: Deque[np.ndarray] = deque(maxlen=settings.history)
    snapshots: List[Snapshot] = []
    best_values = [value]
    fallbacks = 0
    consecutive_failures = 0
    status = TerminationStatus.MAX_ITERATIONS
    iteration = 0

    def snapshot(at: int, details: Any) -> None:
        grad_norm = float(np.linalg.norm(gradient))
        snap = Snapshot(at, value, grad_norm, details)
        snapshots.append(snap)
        monitoring.record_iteration(at, value, grad_norm)
        logger.info("Optimizer snapshot", extra={"iteration": at, "loss": value, "grad_norm": grad_norm})
        if on_snapshot is not None:
            on_snapshot(snap)

    snapshot(0, evaluation.details)

    while iteration < max_iterations:
        if float(np.linalg.norm(gradient)) < settings.gradient_tolerance:
            status = TerminationStatus.GRADIENT_TOLERANCE
            break
        iteration += 1

        direction = two_loop_direction(gradient, s_history, y_history)
        slope = float(gradient @ direction)
        if not slope < 0.0:
            s_history.clear()
            y_history.clear()
            direction = -gradient
            slope = float(gradient @ direction)
        step = 1.0 if s_history else min(1.0, 1.0 / float(np.sum(np.abs(gradient))))

        search = strong_wolfe(objective, x, value, gradient, direction, step, settings)
        evaluations += search.evaluations
        if not search.success:
            fallbacks += 1
            reason = f"no sufficient decrease in {search.evaluations} evaluations"
            monitoring.record_line_search_fallback(iteration, reason)
            error_tracker.track_error("LineSearchFallback", f"Line search fallback: {reason}", __name__,
                                      context={"iteration": iteration, "loss": value})
            logger.warning("Line search failed, falling back to steepest descent", extra={
                "iteration": iteration, "loss": value, "evaluations": search.evaluations,
            })
            s_history.clear()
            y_history.clear()
            search = steepest_descent_step(objective, x, value, gradient, settings)
            evaluations += search.evaluations
            direction = -gradient
            if not search.success:
                consecutive_failures += 1
                best_values.append(best_values[-1])
                if consecutive_failures >= settings.max_consecutive_failures:
                    status = TerminationStatus.LINE_SEARCH_FAILURE
                    logger.error("Optimizer stopped after repeated line search failures", extra={
                        "iteration": iteration, "failures": consecutive_failures,
                    })
                    break
                continue
        consecutive_failures = 0

        new_x = x + search.step * direction
        new_evaluation = search.evaluation
        s = new_x - x
        y = new_evaluation.gradient - gradient
        if float(y @ s) > 1e-10 * float(s @ s):
            s_history.append(s)
            y_history.append(y)
        change = abs(value - new_evaluation.value)
        x, value, gradient = new_x, new_evaluation.value, new_evaluation.gradient
        evaluation = new_evaluation
        best_values.append(min(best_values[-1], value))

        if iteration % eval_every == 0:
            snapshot(iteration, evaluation.details)
        if change < settings.loss_change_tolerance:
            status = TerminationStatus.LOSS_CHANGE_TOLERANCE
            break

    if iteration and snapshots[-1].iteration != iteration:
        snapshot(iteration, evaluation.details)

    logger.info("Optimizer finished", extra={
        "status": status.value, "iterations": iteration, "evaluations": evaluations,
        "loss": value, "fallbacks": fallbacks,
    })
    return OptimizationResult(x, value, gradient, iteration, evaluations, status,
                              snapshots, best_values, fallbacks)
