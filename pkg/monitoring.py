"""Run metrics for the DAE-KAN benchmark: loss evaluations, optimizer progress, stage timings."""

import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

from logging_config import get_logger

logger = get_logger(__name__)


@dataclass
class StageMetrics:
    """Timing of one pipeline stage (train, evaluate, write_report, ...)."""
    stage: str
    total_runs: int = 0
    successful_runs: int = 0
    failed_runs: int = 0
    total_time: float = 0.0
    min_time: float = float("inf")
    max_time: float = 0.0
    error_count_by_type: Dict[str, int] = field(default_factory=dict)

    @property
    def average_time(self) -> float:
        return self.total_time / self.total_runs if self.total_runs > 0 else 0.0

    @property
    def success_rate(self) -> float:
        return (self.successful_runs / self.total_runs * 100) if self.total_runs > 0 else 0.0


@dataclass
class OptimizerMetrics:
    """Counters of one training process."""
    loss_evaluations: int = 0
    total_loss_time: float = 0.0
    iterations: int = 0
    line_search_fallbacks: int = 0
    best_loss: float = float("inf")

    @property
    def average_loss_time(self) -> float:
        return self.total_loss_time / self.loss_evaluations if self.loss_evaluations > 0 else 0.0


@dataclass
class SystemMetrics:
    """Process-wide metrics."""
    start_time: datetime
    runs_started: int = 0
    runs_completed: int = 0
    runs_failed: int = 0


class MonitoringSystem:
    """Collects metrics of training runs and pipeline stages."""

    def __init__(self, max_recent_events: int = 1000):
        self.stage_metrics: Dict[str, StageMetrics] = {}
        self.optimizer_metrics = OptimizerMetrics()
        self.system_metrics = SystemMetrics(start_time=datetime.now())
        self.recent_events: deque = deque(maxlen=max_recent_events)
        self.lock = threading.Lock()

    def record_loss_evaluation(self, elapsed: float, total: float) -> None:
        with self.lock:
            metrics = self.optimizer_metrics
            metrics.loss_evaluations += 1
            metrics.total_loss_time += elapsed
            if total < metrics.best_loss:
                metrics.best_loss = total

    def record_iteration(self, iteration: int, loss: float, grad_norm: float) -> None:
        with self.lock:
            self.optimizer_metrics.iterations = iteration
            self.recent_events.append({
                "timestamp": datetime.now().isoformat(),
                "type": "iteration",
                "iteration": iteration,
                "loss": loss,
                "grad_norm": grad_norm,
            })

    def record_line_search_fallback(self, iteration: int, reason: str) -> None:
        with self.lock:
            self.optimizer_metrics.line_search_fallbacks += 1
            self.recent_events.append({
                "timestamp": datetime.now().isoformat(),
                "type": "line_search_fallback",
                "iteration": iteration,
                "reason": reason,
            })

    def record_stage(self, stage: str, execution_time: float, success: bool,
                     error_type: Optional[str] = None) -> None:
        with self.lock:
            metrics = self.stage_metrics.setdefault(stage, StageMetrics(stage=stage))
            metrics.total_runs += 1
            metrics.total_time += execution_time
            metrics.min_time = min(metrics.min_time, execution_time)
            metrics.max_time = max(metrics.max_time, execution_time)
            if success:
                metrics.successful_runs += 1
            else:
                metrics.failed_runs += 1
                if error_type:
                    metrics.error_count_by_type[error_type] = metrics.error_count_by_type.get(error_type, 0) + 1
            self.recent_events.append({
                "timestamp": datetime.now().isoformat(),
                "type": "stage",
                "stage": stage,
                "execution_time": execution_time,
                "success": success,
                "error_type": error_type,
            })

    def record_run(self, success: bool) -> None:
        with self.lock:
            self.system_metrics.runs_started += 1
            if success:
                self.system_metrics.runs_completed += 1
            else:
                self.system_metrics.runs_failed += 1

    def reset_optimizer(self) -> None:
        with self.lock:
            self.optimizer_metrics = OptimizerMetrics()

    def reset(self) -> None:
        with self.lock:
            self.stage_metrics.clear()
            self.optimizer_metrics = OptimizerMetrics()
            self.system_metrics = SystemMetrics(start_time=datetime.now())
            self.recent_events.clear()

    def get_optimizer_summary(self) -> Dict[str, Any]:
        with self.lock:
            metrics = self.optimizer_metrics
            return {
                "loss_evaluations": metrics.loss_evaluations,
                "average_loss_time_seconds": round(metrics.average_loss_time, 6),
                "iterations": metrics.iterations,
                "line_search_fallbacks": metrics.line_search_fallbacks,
                "best_loss": metrics.best_loss,
            }

    def get_stage_summary(self) -> Dict[str, Any]:
        with self.lock:
            return {
                name: {
                    "total_runs": m.total_runs,
                    "success_rate": round(m.success_rate, 2),
                    "average_time_seconds": round(m.average_time, 4),
                    "max_time_seconds": round(m.max_time, 4),
                    "errors": dict(m.error_count_by_type),
                }
                for name, m in self.stage_metrics.items()
            }

    def get_recent_events(self, limit: int = 100, event_type: Optional[str] = None) -> List[Dict[str, Any]]:
        with self.lock:
            events = list(self.recent_events)
            if event_type:
                events = [e for e in events if e["type"] == event_type]
            return events[-limit:]


# Global monitoring instance
monitoring = MonitoringSystem()
