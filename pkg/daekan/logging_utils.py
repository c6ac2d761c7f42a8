"""
Logging utilities for pipeline stages of the DAE-KAN benchmark.

This module provides:
- A decorator that logs stage start/end with timing
- Stage metrics recorded in the monitoring system
- Failure reporting to the error tracker
"""

import functools
import time
import traceback
from typing import Any, Callable, Dict, Optional

from error_tracking import error_tracker
from logging_config import get_logger
from monitoring import monitoring


def _summarize(value: Any) -> Dict[str, Any]:
    """Small description of a stage result for the log."""
    if isinstance(value, dict):
        return {"type": "dict", "keys": sorted(str(k) for k in value)[:10]}
    if isinstance(value, (list, tuple)):
        return {"type": type(value).__name__, "length": len(value)}
    return {"type": type(value).__name__}


def log_stage(stage: str, context: Optional[Callable[..., Dict[str, Any]]] = None) -> Callable:
    """
    Decorator to log a pipeline stage with timing, metrics and error tracking.

    Args:
        stage: Stage name used in logs, metrics and error sources
        context: Optional callable receiving the stage arguments and returning
            extra fields for the start record (e.g. the run name)
    """
    def decorator(func: Callable) -> Callable:
        logger = get_logger(f"daekan.stages.{stage}")

        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            extra = {"stage": stage, "function": func.__name__}
            if context is not None:
                try:
                    extra.update(context(*args, **kwargs))
                except Exception:  # context is best effort
                    pass
            logger.info("Stage started", extra=extra)
            start_time = time.perf_counter()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                execution_time = time.perf_counter() - start_time
                error_type = type(e).__name__
                logger.error("Stage failed", extra={
                    **extra,
                    "execution_time_seconds": round(execution_time, 4),
                    "error_type": error_type,
                    "error_message": str(e),
                }, exc_info=True)
                monitoring.record_stage(stage, execution_time, success=False, error_type=error_type)
                error_tracker.track_error(
                    error_type=error_type,
                    error_message=str(e),
                    source=f"daekan.stages.{stage}",
                    context={**extra, "execution_time_seconds": round(execution_time, 4)},
                    stack_trace=traceback.format_exc(),
                )
                raise

            execution_time = time.perf_counter() - start_time
            logger.info("Stage completed", extra={
                **extra,
                "execution_time_seconds": round(execution_time, 4),
                "result_summary": _summarize(result),
            })
            monitoring.record_stage(stage, execution_time, success=True)
            return result

        return wrapper

    return decorator
