"""
Centralized logging configuration for the DAE-KAN benchmark.

This module provides:
- Structured logging with JSON format
- Console and rotating file handlers
- A dedicated training log that collects optimizer and trainer records
- Configuration through environment variables
"""

import json
import logging
import logging.handlers
import os
import sys
import traceback
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Optional


class LogLevel(Enum):
    """Available log levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class LogFormat(Enum):
    """Available log formats."""
    SIMPLE = "simple"
    DETAILED = "detailed"
    JSON = "json"


# Attributes every LogRecord carries; anything else was passed through `extra=`.
_RESERVED_RECORD_KEYS = frozenset({
    "name", "msg", "args", "levelname", "levelno", "pathname", "filename",
    "module", "lineno", "funcName", "created", "msecs", "relativeCreated",
    "thread", "threadName", "processName", "process", "getMessage",
    "exc_info", "exc_text", "stack_info", "taskName", "message", "asctime",
})

TRAINING_LOGGER_PREFIXES = ("daekan.training", "daekan.optimizer")


class StructuredFormatter(logging.Formatter):
    """Formatter emitting one JSON object per record."""

    def __init__(self, include_extra: bool = True):
        super().__init__()
        self.include_extra = include_extra

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
            "process": record.process,
        }

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": traceback.format_exception(*record.exc_info),
            }

        if self.include_extra:
            extra_fields = {
                key: value for key, value in record.__dict__.items()
                if key not in _RESERVED_RECORD_KEYS
            }
            if extra_fields:
                log_entry["extra"] = extra_fields

        return json.dumps(log_entry, default=str, ensure_ascii=False)


def _is_training_record(record: logging.LogRecord) -> bool:
    return record.name.startswith(TRAINING_LOGGER_PREFIXES)


class LoggingConfig:
    """Centralized logging configuration manager."""

    def __init__(
        self,
        log_level: str = "INFO",
        log_format: str = "detailed",
        log_dir: Optional[str] = None,
        enable_file_logging: bool = False,
        enable_console_logging: bool = True,
        max_file_size: int = 10 * 1024 * 1024,  # 10MB
        backup_count: int = 5,
        enable_json_logging: bool = False
    ):
        """
        Initialize logging configuration.

        Args:
            log_level: Minimum log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            log_format: Log format type (simple, detailed, json)
            log_dir: Directory for log files (defaults to ./logs)
            enable_file_logging: Whether to write rotating log files
            enable_console_logging: Whether to log to stderr
            max_file_size: Maximum size of log files before rotation
            backup_count: Number of backup files to keep
            enable_json_logging: Whether file handlers use JSON records
        """
        self.log_level = log_level.upper()
        self.log_format = log_format.lower()
        self.log_dir = Path(log_dir) if log_dir else Path("logs")
        self.enable_file_logging = enable_file_logging
        self.enable_console_logging = enable_console_logging
        self.max_file_size = max_file_size
        self.backup_count = backup_count
        self.enable_json_logging = enable_json_logging

        if self.log_level not in LogLevel.__members__:
            raise ValueError(f"Unknown log level: {log_level}")

        if self.enable_file_logging:
            try:
                self.log_dir.mkdir(parents=True, exist_ok=True)
            except (OSError, PermissionError) as e:
                print(f"Warning: Cannot create log directory {self.log_dir}: {e}", file=sys.stderr)
                print("Disabling file logging and using console logging only.", file=sys.stderr)
                self.enable_file_logging = False

    def get_formatter(self, format_type: Optional[str] = None) -> logging.Formatter:
        """Get appropriate formatter based on configuration."""
        format_type = format_type or self.log_format

        if format_type == LogFormat.JSON.value or self.enable_json_logging:
            return StructuredFormatter()
        elif format_type == LogFormat.SIMPLE.value:
            return logging.Formatter(
                fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S"
            )
        else:  # detailed
            return logging.Formatter(
                fmt="%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(funcName)s:%(lineno)d - %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S"
            )

    def _rotating_handler(self, filename: str, level: int) -> logging.Handler:
        handler = logging.handlers.RotatingFileHandler(
            self.log_dir / filename,
            maxBytes=self.max_file_size,
            backupCount=self.backup_count,
            encoding="utf-8",
        )
        handler.setLevel(level)
        handler.setFormatter(self.get_formatter())
        return handler

    def setup_logging(self) -> None:
        """Install handlers on the root logger, replacing existing ones."""
        root_logger = logging.getLogger()
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)

        level = getattr(logging, self.log_level)
        root_logger.setLevel(level)

        handlers = []

        if self.enable_console_logging:
            # stderr keeps stdout free for `--dry-run` output
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setLevel(level)
            console_handler.setFormatter(self.get_formatter(LogFormat.SIMPLE.value))
            handlers.append(console_handler)

        if self.enable_file_logging:
            handlers.append(self._rotating_handler("app.log", level))
            handlers.append(self._rotating_handler("error.log", logging.ERROR))

            training_handler = self._rotating_handler("training.log", logging.INFO)
            training_handler.addFilter(_is_training_record)
            handlers.append(training_handler)

        for handler in handlers:
            root_logger.addHandler(handler)

        logger = logging.getLogger(__name__)
        logger.debug("Logging configured", extra={
            "log_level": self.log_level,
            "log_format": self.log_format,
            "log_dir": str(self.log_dir.absolute()),
            "console": self.enable_console_logging,
            "file": self.enable_file_logging,
        })


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


def setup_logging_from_env(log_level: Optional[str] = None) -> LoggingConfig:
    """Setup logging configuration from environment variables."""
    config = LoggingConfig(
        log_level=log_level or os.getenv("LOG_LEVEL", "INFO"),
        log_format=os.getenv("LOG_FORMAT", "detailed"),
        log_dir=os.getenv("LOG_DIR", "logs"),
        enable_file_logging=_env_flag("ENABLE_FILE_LOGGING", "false"),
        enable_console_logging=_env_flag("ENABLE_CONSOLE_LOGGING", "true"),
        max_file_size=int(os.getenv("MAX_LOG_FILE_SIZE", str(10 * 1024 * 1024))),
        backup_count=int(os.getenv("LOG_BACKUP_COUNT", "5")),
        enable_json_logging=_env_flag("ENABLE_JSON_LOGGING", "false"),
    )

    config.setup_logging()
    return config


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance with the specified name."""
    return logging.getLogger(name)


def initialize_logging(config: Optional[LoggingConfig] = None,
                       log_level: Optional[str] = None) -> LoggingConfig:
    """Initialize global logging configuration."""
    if config is None:
        config = setup_logging_from_env(log_level=log_level)
    else:
        config.setup_logging()

    return config
