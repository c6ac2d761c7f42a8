"""Error classification, run monitoring, stage logging and structured log records."""

import json
import logging

import pytest

from daekan.logging_utils import log_stage
from error_tracking import (
    ConfigError,
    DaeKanError,
    ErrorCategory,
    ErrorSeverity,
    ErrorTracker,
    IntegratorError,
    MaxStepsExceededError,
    NonFiniteLossError,
    error_tracker,
)
from logging_config import LoggingConfig, StructuredFormatter, TRAINING_LOGGER_PREFIXES
from monitoring import MonitoringSystem, monitoring

pytestmark = pytest.mark.unit


class TestErrorHierarchy:
    """Exception types and their payloads."""

    def test_everything_derives_from_base(self):
        assert issubclass(ConfigError, DaeKanError)
        assert issubclass(MaxStepsExceededError, IntegratorError)

    def test_payloads(self):
        assert NonFiniteLossError("nan", 4).collocation_index == 4
        assert MaxStepsExceededError("budget", trajectory="partial").trajectory == "partial"


class TestErrorTracker:
    """Classification, counting and patterns."""

    @pytest.mark.parametrize("error_type,message,source,severity,category", [
        ("ConfigError", "bad key", "daekan.stages.load_config", ErrorSeverity.MEDIUM, ErrorCategory.CONFIG_ERROR),
        ("UnknownSystemError", "nope", "daekan.stages.train", ErrorSeverity.MEDIUM, ErrorCategory.CONFIG_ERROR),
        ("NonFiniteLossError", "loss is not finite", "daekan.stages.train", ErrorSeverity.HIGH,
         ErrorCategory.TRAINING_ERROR),
        ("LineSearchFallback", "Line search fallback: no decrease", "daekan.optimizer", ErrorSeverity.LOW,
         ErrorCategory.OPTIMIZER_ERROR),
        ("MaxStepsExceededError", "budget", "daekan.stages.driftoff", ErrorSeverity.HIGH,
         ErrorCategory.INTEGRATOR_ERROR),
        ("ReportError", "missing file", "daekan.stages.compare", ErrorSeverity.MEDIUM, ErrorCategory.IO_ERROR),
        ("RuntimeError", "odd", "somewhere.else", ErrorSeverity.MEDIUM, ErrorCategory.UNKNOWN_ERROR),
    ])
    def test_classification(self, error_type, message, source, severity, category):
        assert ErrorTracker().classify_error(error_type, message, source) == (severity, category)

    def test_track_and_summarize(self):
        tracker = ErrorTracker(pattern_threshold=2)
        for _ in range(3):
            tracker.track_error("NonFiniteLossError", "loss is not finite", "daekan.stages.train",
                                context={"run": "particle-kan-index3-seed0"})
        tracker.track_error("ConfigError", "bad key", "daekan.stages.load_config")

        summary = tracker.get_error_summary()
        assert summary["total_errors"] == 4
        assert summary["errors_by_severity"]["high"] == 3
        assert summary["errors_by_category"]["config_error"] == 1

        patterns = tracker.get_error_patterns()
        assert len(patterns) == 1
        assert patterns[0]["count"] == 3
        assert patterns[0]["source"] == "daekan.stages.train"

        recent = tracker.get_recent_errors(limit=2, severity=ErrorSeverity.HIGH)
        assert len(recent) == 2
        assert recent[0]["context"] == {"run": "particle-kan-index3-seed0"}

    def test_alert_fires_once_at_threshold(self, caplog):
        tracker = ErrorTracker()
        with caplog.at_level(logging.WARNING, logger="error_tracking"):
            for _ in range(5):
                tracker.track_error("NonFiniteForwardError", "overflow", "daekan.stages.train")
        alerts = [r for r in caplog.records if r.getMessage() == "Error alert triggered"]
        assert len(alerts) == 1
        assert alerts[0].count == 3

    def test_reset(self):
        tracker = ErrorTracker()
        tracker.track_error("ConfigError", "bad key", "daekan.config")
        tracker.reset()
        assert tracker.get_error_summary()["total_errors"] == 0
        assert tracker.get_error_patterns(min_count=1) == []


class TestMonitoring:
    """Optimizer and stage metrics."""

    def test_optimizer_metrics(self):
        system = MonitoringSystem()
        system.record_loss_evaluation(0.5, 2.0)
        system.record_loss_evaluation(1.5, 1.0)
        system.record_iteration(10, 1.0, 0.1)
        system.record_line_search_fallback(11, "no decrease")
        summary = system.get_optimizer_summary()
        assert summary["loss_evaluations"] == 2
        assert summary["average_loss_time_seconds"] == 1.0
        assert summary["best_loss"] == 1.0
        assert summary["iterations"] == 10
        assert summary["line_search_fallbacks"] == 1
        assert [e["type"] for e in system.get_recent_events()] == ["iteration", "line_search_fallback"]

    def test_stage_metrics(self):
        system = MonitoringSystem()
        system.record_stage("train", 2.0, success=True)
        system.record_stage("train", 4.0, success=False, error_type="NonFiniteLossError")
        stage = system.get_stage_summary()["train"]
        assert stage["total_runs"] == 2
        assert stage["success_rate"] == 50.0
        assert stage["average_time_seconds"] == 3.0
        assert stage["errors"] == {"NonFiniteLossError": 1}

    def test_runs_and_reset(self):
        system = MonitoringSystem()
        system.record_run(True)
        system.record_run(False)
        assert (system.system_metrics.runs_completed, system.system_metrics.runs_failed) == (1, 1)
        system.reset()
        assert system.system_metrics.runs_started == 0
        assert system.get_recent_events() == []


class TestLogStage:
    """The stage decorator."""

    def test_success_is_timed(self, caplog):
        @log_stage("evaluate", context=lambda value: {"run": f"run-{value}"})
        def double(value):
            return [value, value]

        with caplog.at_level(logging.INFO, logger="daekan.stages.evaluate"):
            assert double(3) == [3, 3]
        messages = [r.getMessage() for r in caplog.records if r.name == "daekan.stages.evaluate"]
        assert messages == ["Stage started", "Stage completed"]
        assert caplog.records[0].run == "run-3"
        assert monitoring.get_stage_summary()["evaluate"]["total_runs"] == 1

    def test_failure_is_tracked_and_reraised(self):
        @log_stage("train")
        def explode():
            raise NonFiniteLossError("loss is not finite", 2)

        with pytest.raises(NonFiniteLossError):
            explode()
        recent = error_tracker.get_recent_errors(limit=1)[0]
        assert recent["source"] == "daekan.stages.train"
        assert recent["category"] == "training_error"
        assert recent["stack_trace"]
        assert monitoring.get_stage_summary()["train"]["errors"] == {"NonFiniteLossError": 1}

    def test_failing_context_is_ignored(self):
        @log_stage("compare", context=lambda: 1 / 0)
        def ok():
            return "done"

        assert ok() == "done"


class TestStructuredLogging:
    """JSON records and logging configuration."""

    def test_json_record_keeps_extra_fields(self):
        record = logging.LogRecord("daekan.training", logging.INFO, __file__, 1, "Training started", None, None)
        record.run = "particle-kan-index3-seed0"
        entry = json.loads(StructuredFormatter().format(record))
        assert entry["logger"] == "daekan.training"
        assert entry["message"] == "Training started"
        assert entry["extra"] == {"run": "particle-kan-index3-seed0"}

    def test_training_loggers(self):
        assert "daekan.optimizer" in TRAINING_LOGGER_PREFIXES

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            LoggingConfig(log_level="LOUD")

    def test_json_format_selects_structured_formatter(self):
        assert isinstance(LoggingConfig(log_format="json").get_formatter(), StructuredFormatter)
