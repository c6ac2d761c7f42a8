"""Shared pytest fixtures and configuration."""

from pathlib import Path
from typing import Callable, Dict

import numpy as np
import pytest

from daekan.config import TrainingConfig, config_from_mapping
from daekan.dae_systems import DaeSystem, particle_system, pendulum_system, robot_arm_system
from error_tracking import error_tracker
from monitoring import monitoring


TINY_RUN = {
    "system": "particle",
    "index_form": "3",
    "net_kind": "kan",
    "differential_shape": "1,2,4",
    "algebraic_shape": "1,2,1",
    "n_collocation": "12",
    "n_initial": "1",
    "epochs": "3",
    "eval_every": "2",
    "n_test": "25",
    "seed": "7",
}


@pytest.fixture(autouse=True)
def reset_global_trackers():
    """Keep the process-wide tracker and monitor independent between tests."""
    error_tracker.reset()
    monitoring.reset()
    yield
    error_tracker.reset()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def particle() -> DaeSystem:
    return particle_system()


@pytest.fixture
def pendulum() -> DaeSystem:
    return pendulum_system()


@pytest.fixture
def robot_arm() -> DaeSystem:
    return robot_arm_system()


@pytest.fixture(params=["pendulum", "particle", "robot-arm"])
def any_system(request) -> DaeSystem:
    return {"pendulum": pendulum_system, "particle": particle_system, "robot-arm": robot_arm_system}[request.param]()


@pytest.fixture
def tiny_config() -> TrainingConfig:
    """A few L-BFGS iterations on a very small particle network."""
    return config_from_mapping(dict(TINY_RUN))


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """Write a config file from ``TINY_RUN`` with overrides; ``None`` drops a key."""
    def _write(name: str = "run.env", **overrides) -> Path:
        values: Dict[str, str] = dict(TINY_RUN)
        for key, value in overrides.items():
            if value is None:
                values.pop(key, None)
            else:
                values[key] = str(value)
        path = tmp_path / name
        path.write_text("# test config\n" + "".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
        return path

    return _write
