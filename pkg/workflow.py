from datetime import datetime
from pathlib import Path
from typing import Optional, Union

from langgraph.graph import END, StateGraph

from logging_config import get_logger
from nodes import error_handler_node, evaluate_node, load_config_node, train_node, write_report_node
from state import ExperimentState, ExperimentStatus

logger = get_logger(__name__)

STAGES = ("load_config", "train", "evaluate", "write_report")


def should_continue(state: ExperimentState) -> str:
    """Determine the next step in the workflow based on state."""
    if state.get("error_message"):
        logger.info("Routing to error handler due to error message", extra={
            "failed_step": state.get("failed_step"),
            "error_message": state.get("error_message"),
        })
        return "error"
    logger.debug("Continuing with normal workflow", extra={"current_step": state.get("current_step")})
    return "continue"


def create_experiment_workflow() -> StateGraph:
    """Create the experiment workflow graph: load_config -> train -> evaluate -> write_report."""
    logger.info("Creating experiment workflow graph")

    try:
        workflow = StateGraph(ExperimentState)

        workflow.add_node("load_config", load_config_node)
        workflow.add_node("train", train_node)
        workflow.add_node("evaluate", evaluate_node)
        workflow.add_node("write_report", write_report_node)
        workflow.add_node("error_handler", error_handler_node)

        workflow.set_entry_point("load_config")
        for stage, following in zip(STAGES, STAGES[1:] + (END,)):
            workflow.add_conditional_edges(
                stage,
                should_continue,
                {
                    "continue": following,
                    "error": "error_handler",
                }
            )
        workflow.add_edge("error_handler", END)

        logger.info("Experiment workflow graph created successfully", extra={
            "nodes": list(STAGES) + ["error_handler"],
            "entry_point": "load_config",
        })
        return workflow

    except Exception as e:
        logger.error("Failed to create experiment workflow graph", extra={
            "error": str(e),
            "error_type": type(e).__name__,
        }, exc_info=True)
        raise


def run_experiment(config_path: Union[str, Path], output_dir: Union[str, Path],
                   seed: Optional[int] = None, n_test: Optional[int] = None) -> ExperimentState:
    """Train, evaluate and report one config; the returned state carries ``exit_code``."""
    initial: ExperimentState = {
        "config_path": str(config_path),
        "output_dir": str(output_dir),
        "seed_override": seed,
        "n_test_override": n_test,
        "current_step": "start",
        "status": ExperimentStatus.INITIALIZING,
        "error_message": None,
        "files": [],
        "start_time": datetime.now().isoformat(),
    }
    app = create_experiment_workflow().compile()
    final = app.invoke(initial)
    logger.info("Experiment finished", extra={
        "config_path": str(config_path),
        "status": final["status"].value,
        "exit_code": final.get("exit_code"),
        "run_dir": final.get("run_dir"),
    })
    return final
