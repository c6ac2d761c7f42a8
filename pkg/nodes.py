"""Workflow nodes of one experiment run: load config, train, evaluate, write report."""

import functools
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List

from daekan.config import apply_overrides, load_config
from daekan.dae_systems import get_system
from daekan.logging_utils import log_stage
from daekan.metrics import EvaluationGrid, build_comparison, build_run_report
from daekan.networks import save_checkpoint
from daekan.plotting import emit_plots
from daekan.reporting import (
    CONFIG_ECHO_NAME, TRACE_FILE, write_comparison_csv, write_config_echo, write_manifest,
    write_run_report, write_trace_csv,
)
from daekan.training import train
from error_tracking import ConfigError, UnknownIndexFormError, UnknownSystemError
from logging_config import get_logger
from monitoring import monitoring
from state import ExperimentState, ExperimentStatus

logger = get_logger(__name__)

CONFIG_ERRORS = (ConfigError, UnknownSystemError, UnknownIndexFormError)
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
TABLE_FILE = "table.csv"
DIFFERENTIAL_CHECKPOINT = "differential.ckpt"
ALGEBRAIC_CHECKPOINT = "algebraic.ckpt"

NodeFunction = Callable[[ExperimentState], Dict[str, Any]]


def _run_context(state: ExperimentState) -> Dict[str, Any]:
    config = state.get("config")
    return {"run": config.run_name if config is not None else state.get("config_path")}


def _failure(step: str, error: Exception) -> Dict[str, Any]:
    return {
        "current_step": step,
        "status": ExperimentStatus.FAILED,
        "error_message": str(error) or type(error).__name__,
        "error_type": type(error).__name__,
        "failed_step": step,
        "exit_code": EXIT_CONFIG if isinstance(error, CONFIG_ERRORS) else EXIT_FAILURE,
    }


def workflow_node(step: str) -> Callable[[NodeFunction], NodeFunction]:
    """Wrap a stage so a raised error becomes an error state instead of escaping the graph."""
    def decorator(func: NodeFunction) -> NodeFunction:
        staged = log_stage(step, context=_run_context)(func)

        @functools.wraps(func)
        def node(state: ExperimentState) -> Dict[str, Any]:
            try:
                update = staged(state)
            except Exception as e:  # reported by log_stage; routed to the error handler
                return _failure(step, e)
            return {"current_step": step, **update}

        return node

    return decorator


def _with_files(state: ExperimentState, *names: str) -> List[str]:
    files = list(state.get("files") or [])
    for name in names:
        if name not in files:
            files.append(name)
    return files


@workflow_node("load_config")
def load_config_node(state: ExperimentState) -> Dict[str, Any]:
    """Load and validate the config, create the run directory and mark it incomplete."""
    config = load_config(state["config_path"])
    config = apply_overrides(config, seed=state.get("seed_override"), n_test=state.get("n_test_override"))
    system = get_system(config.system)
    if config.net_kind == "kan" and (config.differential_shape[-1], config.algebraic_shape[-1]) != (system.n_u, system.n_z):
        raise ConfigError(
            f"{state['config_path']}: network outputs {config.differential_shape[-1]}/{config.algebraic_shape[-1]} "
            f"do not match {system.name} ({system.n_u} differential, {system.n_z} algebraic variables)")

    run_dir = Path(state["output_dir"]) / config.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(config, run_dir)
    files = _with_files(state, CONFIG_ECHO_NAME)
    write_manifest(run_dir, config.run_name, complete=False, files=files)
    logger.info("Run directory prepared", extra={"run": config.run_name, "run_dir": str(run_dir)})
    return {
        "config": config,
        "run_dir": str(run_dir),
        "files": files,
        "status": ExperimentStatus.TRAINING,
    }


@workflow_node("train")
def train_node(state: ExperimentState) -> Dict[str, Any]:
    """Train the solver pair and keep its checkpoints and loss trace."""
    config = state["config"]
    run_dir = Path(state["run_dir"])
    trace, pair = train(config)

    written = [save_checkpoint(pair.differential, run_dir / DIFFERENTIAL_CHECKPOINT).name]
    if pair.algebraic is not None:
        written.append(save_checkpoint(pair.algebraic, run_dir / ALGEBRAIC_CHECKPOINT).name)
    written.append(write_trace_csv(trace, run_dir / TRACE_FILE).name)
    files = _with_files(state, *written)
    write_manifest(run_dir, config.run_name, complete=False, files=files)
    return {"pair": pair, "trace": trace, "files": files, "status": ExperimentStatus.EVALUATING}


@workflow_node("evaluate")
def evaluate_node(state: ExperimentState) -> Dict[str, Any]:
    """Compare the trained networks with the exact solution on the evaluation grid."""
    config = state["config"]
    grid = EvaluationGrid(config.t_end, config.n_test)
    report = build_run_report(config, state["pair"], get_system(config.system), state["trace"], grid)
    return {"report": report, "status": ExperimentStatus.WRITING_REPORT}


@workflow_node("write_report")
def write_report_node(state: ExperimentState) -> Dict[str, Any]:
    """Write CSVs, the one-run comparison table, SVG plots and the final manifest."""
    config = state["config"]
    report = state["report"]
    trace = state["trace"]
    run_dir = Path(state["run_dir"])

    names = write_run_report(report, run_dir)
    names.append(write_comparison_csv(build_comparison([report.summary()]), run_dir / TABLE_FILE).name)
    names.extend(path.name for path in emit_plots(report, run_dir))
    files = _with_files(state, *names)

    summary = {
        "termination": trace.status.value,
        "iterations": trace.iterations,
        "evaluations": trace.evaluations,
        "final_loss": trace.final_loss,
        "line_search_fallbacks": trace.line_search_fallbacks,
        "re": dict(report.re),
    }
    write_manifest(run_dir, config.run_name, complete=True, files=files, extra={"summary": summary})
    monitoring.record_run(success=True)
    return {
        "files": files,
        "summary": summary,
        "status": ExperimentStatus.COMPLETED,
        "exit_code": EXIT_OK,
        "end_time": datetime.now().isoformat(),
    }


def error_handler_node(state: ExperimentState) -> Dict[str, Any]:
    """Keep partial artifacts and record the failure in the manifest."""
    error_message = state.get("error_message") or "Unknown error occurred"
    logger.error("Experiment failed", extra={
        "workflow_step": "error_handler",
        "failed_step": state.get("failed_step"),
        "error_type": state.get("error_type"),
        "error_message": error_message,
        "config_path": state.get("config_path"),
    })

    run_dir = state.get("run_dir")
    config = state.get("config")
    if run_dir and config is not None:
        try:
            write_manifest(run_dir, config.run_name, complete=False, files=state.get("files") or [],
                           error=f"{state.get('failed_step')}: {error_message}")
        except OSError as e:
            logger.error("Could not write failure manifest", extra={"run_dir": run_dir, "error": str(e)})

    monitoring.record_run(success=False)
    return {
        "current_step": "error_handled",
        "status": ExperimentStatus.FAILED,
        "exit_code": state.get("exit_code") or EXIT_FAILURE,
        "end_time": datetime.now().isoformat(),
    }
