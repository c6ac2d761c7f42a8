"""Error metrics against exact solutions, neural drift-off curves and comparison tables."""

from dataclasses import dataclass, field
from statistics import median
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from daekan.autodiff import ADScalar
from daekan.config import TrainingConfig
from daekan.dae_systems import INDEX_FORMS, DaeSystem, StateSample, constraint_residual
from daekan.networks import SolverPair
from daekan.training import TrainingTrace
from error_tracking import MetricError
from logging_config import get_logger

logger = get_logger(__name__)

DRIFT_LEVELS = (3, 2, 1)
MODEL_ORDER = ("PINNs", "DAE-KAN")


def relative_error(exact: Sequence[float], predicted: Sequence[float]) -> float:
    """``||e - p|| / ||e||`` in the Euclidean norm."""
    exact = np.asarray(exact, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if exact.shape != predicted.shape or exact.size == 0:
        raise MetricError(f"Series shapes differ or are empty: {exact.shape} vs {predicted.shape}")
    denominator = float(np.linalg.norm(exact))
    if denominator == 0.0:
        raise MetricError("Relative error undefined for an identically zero exact series")
    return float(np.linalg.norm(exact - predicted)) / denominator


def absolute_error_trajectory(exact: Sequence[float], predicted: Sequence[float]) -> np.ndarray:
    exact = np.asarray(exact, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if exact.shape != predicted.shape:
        raise MetricError(f"Series shapes differ: {exact.shape} vs {predicted.shape}")
    return np.abs(exact - predicted)


@dataclass(frozen=True)
class EvaluationGrid:
    t_end: float
    n_test: int = 1000

    def __post_init__(self) -> None:
        if self.n_test < 2:
            raise MetricError(f"Evaluation grid needs at least 2 points, got {self.n_test}")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_test)


def evaluate_pair(pair: SolverPair, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted state ``(n_u + n_z, N)`` and differential time derivatives ``(n_u, N)``."""
    t = ADScalar(np.asarray(times, dtype=np.float64), np.ones(len(times)))
    u, z = pair.forward(t)
    values = np.array([np.broadcast_to(v.primal, t.primal.shape) for v in list(u) + list(z)])
    derivatives = np.array([np.broadcast_to(v.tangent, t.primal.shape) for v in u])
    return values, derivatives


def _sample(times: np.ndarray, values: np.ndarray, derivatives: np.ndarray, n_u: int) -> StateSample:
    return StateSample(times, list(values[:n_u]), list(derivatives), list(values[n_u:]))


def driftoff_curves(pair: SolverPair, system: DaeSystem, trained_form: int,
                    grid: EvaluationGrid) -> Dict[int, np.ndarray]:
    """``|constraint|`` of every level along the network solution."""
    times = grid.times
    values, derivatives = evaluate_pair(pair, times)
    sample = _sample(times, values, derivatives, system.n_u)
    curves = {}
    for level in DRIFT_LEVELS:
        curve = np.abs(np.asarray(constraint_residual(system, level, sample), dtype=np.float64))
        curves[level] = np.broadcast_to(curve, times.shape).copy()
    logger.debug("Drift-off curves computed", extra={
        "system": system.name,
        "trained_form": trained_form,
        "max_by_level": {level: float(np.max(c)) for level, c in curves.items()},
    })
    return curves


@dataclass
class RunReport:
    config: TrainingConfig
    variable_names: Tuple[str, ...]
    times: np.ndarray
    exact: np.ndarray
    predicted: np.ndarray
    ae: Dict[str, np.ndarray]
    re: Dict[str, float]
    drift: Dict[int, np.ndarray]
    trace: Optional[TrainingTrace] = None
    complete: bool = True

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def ae_sum(self) -> Dict[str, float]:
        return {name: float(np.sum(curve)) for name, curve in self.ae.items()}

    @property
    def ae_max(self) -> Dict[str, float]:
        return {name: float(np.max(curve)) for name, curve in self.ae.items()}

    def summary(self) -> "RunSummary":
        return RunSummary(self.config.system, self.config.model_label, self.config.index_form,
                          self.config.seed, dict(self.re), dict(self.drift), self.times)


def build_run_report(config: TrainingConfig, pair: SolverPair, system: DaeSystem,
                     trace: Optional[TrainingTrace], grid: EvaluationGrid) -> RunReport:
    times = grid.times
    exact = np.asarray(system.exact_solution(times), dtype=np.float64)
    predicted, _ = evaluate_pair(pair, times)
    ae, re = {}, {}
    for index, name in enumerate(system.variable_names):
        ae[name] = absolute_error_trajectory(exact[index], predicted[index])
        re[name] = relative_error(exact[index], predicted[index])
    drift = driftoff_curves(pair, system, config.index_form, grid)
    logger.info("Run evaluated", extra={"run": config.run_name, "re": re})
    return RunReport(config, system.variable_names, times, exact, predicted, ae, re, drift, trace)


@dataclass(frozen=True)
class RunSummary:
    """The parts of a finished run that ``compare`` aggregates."""
    system: str
    model: str
    index_form: int
    seed: int
    re: Dict[str, float]
    drift: Dict[int, np.ndarray] = field(default_factory=dict, compare=False)
    times: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def row_label(self) -> str:
        return f"{self.model}(index-{self.index_form})"


@dataclass
class ComparisonTable:
    """Median relative error over seeds per (model, index form) row."""
    system: str
    variables: Tuple[str, ...]
    rows: List[Tuple[str, Dict[str, float]]]
    seeds: Dict[str, List[int]] = field(default_factory=dict)

    def cell(self, label: str, variable: str) -> float:
        for row_label, cells in self.rows:
            if row_label == label:
                return cells[variable]
        raise KeyError(label)


def build_comparison(summaries: Iterable[RunSummary]) -> ComparisonTable:
    summaries = list(summaries)
    if not summaries:
        raise MetricError("No runs to compare")
    systems = {s.system for s in summaries}
    if len(systems) != 1:
        raise MetricError(f"Runs of different systems cannot share a table: {sorted(systems)}")
    variables = tuple(summaries[0].re)
    groups: Dict[Tuple[str, int], List[RunSummary]] = {}
    for summary in summaries:
        groups.setdefault((summary.model, summary.index_form), []).append(summary)

    rows, seeds = [], {}
    for model in MODEL_ORDER:
        for form in INDEX_FORMS:
            group = groups.get((model, form))
            if not group:
                continue
            label = group[0].row_label
            cells = {name: float(median(s.re[name] for s in group)) for name in variables}
            rows.append((label, cells))
            seeds[label] = sorted(s.seed for s in group)
    return ComparisonTable(systems.pop(), variables, rows, seeds)
