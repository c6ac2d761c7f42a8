from enum import Enum
from typing import Any, Dict, List, Optional, TypedDict


class ExperimentStatus(Enum):
    """Status of one experiment run."""
    INITIALIZING = "initializing"
    LOADING_CONFIG = "loading_config"
    TRAINING = "training"
    EVALUATING = "evaluating"
    WRITING_REPORT = "writing_report"
    COMPLETED = "completed"
    FAILED = "failed"


class ExperimentState(TypedDict, total=False):
    """State carried through the experiment workflow."""
    # Inputs
    config_path: str
    output_dir: str
    seed_override: Optional[int]
    n_test_override: Optional[int]

    # Core workflow state
    current_step: str
    status: ExperimentStatus
    error_message: Optional[str]
    error_type: Optional[str]
    failed_step: Optional[str]
    exit_code: int

    # Run artifacts (in memory)
    config: Any  # daekan.config.TrainingConfig
    run_dir: str
    pair: Any  # daekan.networks.SolverPair
    trace: Any  # daekan.training.TrainingTrace
    report: Any  # daekan.metrics.RunReport

    # Files written so far, relative to run_dir
    files: List[str]

    # Metadata
    start_time: Optional[str]
    end_time: Optional[str]
    summary: Dict[str, Any]
