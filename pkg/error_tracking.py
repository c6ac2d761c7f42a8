"""Exception hierarchy and error tracking for the DAE-KAN benchmark."""

import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from logging_config import get_logger

logger = get_logger(__name__)


# ============================================================================
# EXCEPTIONS
# ============================================================================

class DaeKanError(Exception):
    """Base class for every error raised by this package."""


class AutodiffError(DaeKanError):
    """Misuse of a computation record or an invalid elementary operation."""


class RecordMismatchError(AutodiffError):
    """Two operands belong to different computation records."""


class StaleRecordError(AutodiffError):
    """A closed record, or a value from another record, was used."""


class InputAlreadySeededError(AutodiffError):
    """The time input was seeded twice in one record."""


class ADDivisionByZeroError(AutodiffError):
    """Division by a zero denominator."""

    def __init__(self, message: str, node_id: int):
        super().__init__(f"{message} (node {node_id})")
        self.node_id = node_id


class NonFiniteValueError(AutodiffError):
    """An elementary operation produced NaN or infinity."""

    def __init__(self, message: str, node_id: int):
        super().__init__(f"{message} (node {node_id})")
        self.node_id = node_id


class SplineGridError(DaeKanError):
    """Degenerate spline grid or mismatched coefficient vector."""


class NetworkShapeError(DaeKanError):
    """Invalid network shape or mismatched network/system dimensions."""


class ParameterLengthError(DaeKanError):
    """Flat parameter vector of the wrong length."""


class NonFiniteForwardError(DaeKanError):
    """A network layer produced a non-finite activation."""

    def __init__(self, message: str, layer_index: int):
        super().__init__(f"{message} (layer {layer_index})")
        self.layer_index = layer_index


class UnknownSystemError(DaeKanError):
    """No benchmark system is registered under the requested name."""


class UnknownIndexFormError(DaeKanError):
    """The requested index form does not exist for a system."""


class ConfigError(DaeKanError):
    """Invalid experiment configuration."""


class NonFiniteLossError(DaeKanError):
    """The training loss became non-finite at a collocation point."""

    def __init__(self, message: str, collocation_index: int):
        super().__init__(f"{message} (collocation index {collocation_index})")
        self.collocation_index = collocation_index


class IntegratorError(DaeKanError):
    """Failure of the reference Runge-Kutta integrator."""


class MaxStepsExceededError(IntegratorError):
    """Step budget exhausted; the partial trajectory is attached."""

    def __init__(self, message: str, trajectory: Any):
        super().__init__(message)
        self.trajectory = trajectory


class NonFiniteRhsError(IntegratorError):
    """The right-hand side returned NaN or infinity."""


class MetricError(DaeKanError):
    """Error metric undefined for the given series."""


class PlotError(DaeKanError):
    """A report cannot be rendered."""


class ReportError(DaeKanError):
    """A run directory or report file is missing or malformed."""


# ============================================================================
# TRACKING
# ============================================================================

class ErrorSeverity(Enum):
    """Error severity levels."""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error categories for classification."""
    AUTODIFF_ERROR = "autodiff_error"
    TRAINING_ERROR = "training_error"
    OPTIMIZER_ERROR = "optimizer_error"
    INTEGRATOR_ERROR = "integrator_error"
    CONFIG_ERROR = "config_error"
    IO_ERROR = "io_error"
    UNKNOWN_ERROR = "unknown_error"


_SOURCE_CATEGORIES = (
    ("daekan.autodiff", ErrorCategory.AUTODIFF_ERROR),
    ("daekan.optimizer", ErrorCategory.OPTIMIZER_ERROR),
    ("daekan.training", ErrorCategory.TRAINING_ERROR),
    ("daekan.reference_integrator", ErrorCategory.INTEGRATOR_ERROR),
    ("daekan.config", ErrorCategory.CONFIG_ERROR),
    ("daekan.reporting", ErrorCategory.IO_ERROR),
    ("daekan.plotting", ErrorCategory.IO_ERROR),
    ("daekan.stages.load_config", ErrorCategory.CONFIG_ERROR),
    ("daekan.stages.train", ErrorCategory.TRAINING_ERROR),
    ("daekan.stages.evaluate", ErrorCategory.TRAINING_ERROR),
    ("daekan.stages.driftoff", ErrorCategory.INTEGRATOR_ERROR),
    ("daekan.stages.write_report", ErrorCategory.IO_ERROR),
    ("daekan.stages.compare", ErrorCategory.IO_ERROR),
)


@dataclass
class ErrorEvent:
    """Represents a single error event."""
    id: str
    timestamp: datetime
    error_type: str
    error_message: str
    severity: ErrorSeverity
    category: ErrorCategory
    source: str  # logger-style dotted name of the failing component
    context: Dict[str, Any]
    stack_trace: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "id": self.id,
            "timestamp": self.timestamp.isoformat(),
            "error_type": self.error_type,
            "error_message": self.error_message,
            "severity": self.severity.value,
            "category": self.category.value,
            "source": self.source,
            "context": self.context,
            "stack_trace": self.stack_trace,
        }


@dataclass
class ErrorPattern:
    """A recurring (error type, source) pair."""
    pattern_id: str
    error_type: str
    source: str
    count: int
    first_occurrence: datetime
    last_occurrence: datetime
    severity: ErrorSeverity
    category: ErrorCategory
    sample_messages: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pattern_id": self.pattern_id,
            "error_type": self.error_type,
            "source": self.source,
            "count": self.count,
            "first_occurrence": self.first_occurrence.isoformat(),
            "last_occurrence": self.last_occurrence.isoformat(),
            "severity": self.severity.value,
            "category": self.category.value,
            "sample_messages": self.sample_messages[:5],
        }


class ErrorTracker:
    """Classifies, counts and alerts on solver failures."""

    def __init__(self, max_events: int = 10000, pattern_threshold: int = 3):
        self.errors: deque = deque(maxlen=max_events)
        self.error_patterns: Dict[str, ErrorPattern] = {}
        self.error_counts: Dict[str, int] = defaultdict(int)
        self.severity_counts: Dict[ErrorSeverity, int] = defaultdict(int)
        self.category_counts: Dict[ErrorCategory, int] = defaultdict(int)
        self.pattern_threshold = pattern_threshold
        self.lock = threading.Lock()
        self.alert_thresholds = {
            ErrorSeverity.CRITICAL: 1,
            ErrorSeverity.HIGH: 3,
            ErrorSeverity.MEDIUM: 10,
            ErrorSeverity.LOW: 50,
        }

    def classify_error(self, error_type: str, error_message: str,
                       source: str) -> Tuple[ErrorSeverity, ErrorCategory]:
        """Classify an error by its source component and message."""
        category = ErrorCategory.UNKNOWN_ERROR
        for prefix, candidate in _SOURCE_CATEGORIES:
            if source.startswith(prefix):
                category = candidate
                break
        if error_type in ("ConfigError", "UnknownSystemError", "UnknownIndexFormError"):
            category = ErrorCategory.CONFIG_ERROR

        message = error_message.lower()
        if "non-finite" in message or error_type in ("NonFiniteLossError", "NonFiniteForwardError"):
            severity = ErrorSeverity.HIGH
        elif category is ErrorCategory.CONFIG_ERROR:
            severity = ErrorSeverity.MEDIUM
        elif "fallback" in message:
            severity = ErrorSeverity.LOW
        elif category in (ErrorCategory.TRAINING_ERROR, ErrorCategory.INTEGRATOR_ERROR):
            severity = ErrorSeverity.HIGH
        else:
            severity = ErrorSeverity.MEDIUM

        return severity, category

    def track_error(self, error_type: str, error_message: str, source: str,
                    context: Optional[Dict[str, Any]] = None,
                    stack_trace: Optional[str] = None) -> str:
        """Record an error event and return its id."""
        with self.lock:
            error_id = f"err_{int(time.time() * 1000)}_{len(self.errors)}"
            severity, category = self.classify_error(error_type, error_message, source)

            event = ErrorEvent(
                id=error_id,
                timestamp=datetime.now(),
                error_type=error_type,
                error_message=error_message,
                severity=severity,
                category=category,
                source=source,
                context=context or {},
                stack_trace=stack_trace,
            )
            self.errors.append(event)

            key = f"{error_type}:{source}"
            self.error_counts[key] += 1
            self.severity_counts[severity] += 1
            self.category_counts[category] += 1

            self._update_error_patterns(event)
            self._check_alert_thresholds(event)

            logger.debug("Error tracked", extra={
                "error_id": error_id,
                "error_type": error_type,
                "severity": severity.value,
                "category": category.value,
                "source": source,
            })
            return error_id

    def _update_error_patterns(self, event: ErrorEvent) -> None:
        key = f"{event.error_type}:{event.source}"
        pattern = self.error_patterns.get(key)
        if pattern is None:
            self.error_patterns[key] = ErrorPattern(
                pattern_id=f"pattern_{len(self.error_patterns)}",
                error_type=event.error_type,
                source=event.source,
                count=1,
                first_occurrence=event.timestamp,
                last_occurrence=event.timestamp,
                severity=event.severity,
                category=event.category,
                sample_messages=[event.error_message],
            )
            return
        pattern.count += 1
        pattern.last_occurrence = event.timestamp
        if len(pattern.sample_messages) < 5:
            pattern.sample_messages.append(event.error_message)

    def _check_alert_thresholds(self, event: ErrorEvent) -> None:
        threshold = self.alert_thresholds.get(event.severity, 10)
        count = self.error_counts[f"{event.error_type}:{event.source}"]
        # alert once, when the threshold is crossed
        if count == threshold:
            logger.warning("Error alert triggered", extra={
                "error_id": event.id,
                "error_type": event.error_type,
                "severity": event.severity.value,
                "source": event.source,
                "count": count,
            })

    def get_error_summary(self, hours: int = 24) -> Dict[str, Any]:
        """Error counts for the specified time window."""
        with self.lock:
            cutoff = datetime.now() - timedelta(hours=hours)
            recent = [e for e in self.errors if e.timestamp >= cutoff]
            return {
                "time_period_hours": hours,
                "total_errors": len(recent),
                "errors_by_severity": {
                    severity.value: sum(1 for e in recent if e.severity == severity)
                    for severity in ErrorSeverity
                },
                "errors_by_category": {
                    category.value: sum(1 for e in recent if e.category == category)
                    for category in ErrorCategory
                },
            }

    def get_error_patterns(self, min_count: Optional[int] = None) -> List[Dict[str, Any]]:
        with self.lock:
            min_count = min_count or self.pattern_threshold
            patterns = [p.to_dict() for p in self.error_patterns.values() if p.count >= min_count]
            return sorted(patterns, key=lambda p: p["count"], reverse=True)

    def get_recent_errors(self, limit: int = 100,
                          severity: Optional[ErrorSeverity] = None) -> List[Dict[str, Any]]:
        with self.lock:
            errors = list(self.errors)
            if severity:
                errors = [e for e in errors if e.severity == severity]
            errors.sort(key=lambda e: e.timestamp, reverse=True)
            return [e.to_dict() for e in errors[:limit]]

    def reset(self) -> None:
        with self.lock:
            self.errors.clear()
            self.error_patterns.clear()
            self.error_counts.clear()
            self.severity_counts.clear()
            self.category_counts.clear()


# Global error tracker instance
error_tracker = ErrorTracker()
