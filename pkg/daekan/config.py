"""Experiment configuration: the ``TrainingConfig`` model and its key-value file format."""

import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from daekan.dae_systems import INDEX_FORMS, SYSTEM_FACTORIES
from error_tracking import ConfigError
from logging_config import get_logger

logger = get_logger(__name__)

PARTICLE_MLP_HIDDEN = (60, 60, 60, 60, 60)
ROBOT_ARM_MLP_HIDDEN = (80, 80, 80, 80, 80)


class GridSettings(BaseModel):
    """Spline grid of every KAN layer; the input layer spans ``[0, t_end]``."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    intervals: int = Field(default=5, ge=1, description="Grid intervals G")
    order: int = Field(default=3, ge=1, description="Spline degree k")
    hidden_min: float = Field(default=-1.0, description="Lower end of the hidden-layer grid")
    hidden_max: float = Field(default=1.0, description="Upper end of the hidden-layer grid")

    @model_validator(mode="after")
    def _check_domain(self) -> "GridSettings":
        if self.hidden_max <= self.hidden_min:
            raise ValueError("hidden_max must exceed hidden_min")
        return self


class LbfgsSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    history: int = Field(default=50, ge=1)
    c1: float = Field(default=1e-4, gt=0.0)
    c2: float = Field(default=0.9, lt=1.0)
    max_line_search: int = Field(default=25, ge=1)
    gradient_tolerance: float = Field(default=1e-9, ge=0.0)
    loss_change_tolerance: float = Field(default=1e-16, ge=0.0)
    max_consecutive_failures: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _check_wolfe(self) -> "LbfgsSettings":
        if not self.c1 < self.c2:
            raise ValueError("Wolfe constants need 0 < c1 < c2 < 1")
        return self


class TrainingConfig(BaseModel):
    """Everything one training run depends on."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    system: str
    index_form: int
    net_kind: Literal["kan", "mlp"] = "kan"
    n_initial: int = Field(default=1, ge=1)
    n_collocation: int = Field(default=200, ge=1)
    t_end: float = Field(default=1.0, gt=0.0)
    epochs: int = Field(default=1000, ge=1, description="L-BFGS iterations")
    seed: int = Field(default=0, ge=0)
    differential_shape: Tuple[int, ...] = (1, 5, 5, 4)
    algebraic_shape: Tuple[int, ...] = (1, 5, 5, 1)
    mlp_hidden: Tuple[int, ...] = PARTICLE_MLP_HIDDEN
    grid: GridSettings = Field(default_factory=GridSettings)
    lbfgs: LbfgsSettings = Field(default_factory=LbfgsSettings)
    eval_every: int = Field(default=10, ge=1)
    n_test: int = Field(default=1000, ge=2)

    @field_validator("system")
    @classmethod
    def _known_system(cls, value: str) -> str:
        if value not in SYSTEM_FACTORIES:
            raise ValueError(f"unknown system '{value}' (known: {', '.join(SYSTEM_FACTORIES)})")
        return value

    @field_validator("index_form")
    @classmethod
    def _known_form(cls, value: int) -> int:
        if value not in INDEX_FORMS:
            raise ValueError(f"index_form must be one of {INDEX_FORMS}")
        return value

    @field_validator("differential_shape", "algebraic_shape")
    @classmethod
    def _network_shape(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) < 2 or value[0] != 1 or any(n < 1 for n in value):
            raise ValueError("network shapes start with 1 input and have positive widths")
        return value

    @field_validator("mlp_hidden")
    @classmethod
    def _hidden_widths(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(n < 1 for n in value):
            raise ValueError("mlp_hidden needs at least one positive width")
        return value

    @property
    def model_label(self) -> str:
        return "DAE-KAN" if self.net_kind == "kan" else "PINNs"

    @property
    def run_name(self) -> str:
        return f"{self.system}-{self.net_kind}-index{self.index_form}-seed{self.seed}"


# config file key -> (section, field)
CONFIG_KEYS: Dict[str, Tuple[Union[str, None], str]] = {
    "system": (None, "system"),
    "index_form": (None, "index_form"),
    "net_kind": (None, "net_kind"),
    "n_initial": (None, "n_initial"),
    "n_collocation": (None, "n_collocation"),
    "t_end": (None, "t_end"),
    "epochs": (None, "epochs"),
    "seed": (None, "seed"),
    "differential_shape": (None, "differential_shape"),
    "algebraic_shape": (None, "algebraic_shape"),
    "mlp_hidden": (None, "mlp_hidden"),
    "eval_every": (None, "eval_every"),
    "n_test": (None, "n_test"),
    "grid_intervals": ("grid", "intervals"),
    "spline_order": ("grid", "order"),
    "hidden_grid_min": ("grid", "hidden_min"),
    "hidden_grid_max": ("grid", "hidden_max"),
    "lbfgs_history": ("lbfgs", "history"),
    "lbfgs_c1": ("lbfgs", "c1"),
    "lbfgs_c2": ("lbfgs", "c2"),
    "lbfgs_max_line_search": ("lbfgs", "max_line_search"),
    "lbfgs_gradient_tolerance": ("lbfgs", "gradient_tolerance"),
    "lbfgs_loss_change_tolerance": ("lbfgs", "loss_change_tolerance"),
    "lbfgs_max_failures": ("lbfgs", "max_consecutive_failures"),
}

_TUPLE_KEYS = {"differential_shape", "algebraic_shape", "mlp_hidden"}


def _parse_value(key: str, raw: str) -> Any:
    if key in _TUPLE_KEYS:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    return raw


def config_from_mapping(values: Dict[str, Any], source: str = "<mapping>") -> TrainingConfig:
    """Build a config from flat ``key -> value`` pairs of the file format."""
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {unknown}")
    nested: Dict[str, Any] = {"grid": {}, "lbfgs": {}}
    try:
        for key, raw in values.items():
            if raw is None or (isinstance(raw, str) and not raw.strip()):
                raise ConfigError(f"{source}: key '{key}' has no value")
            section, name = CONFIG_KEYS[key]
            value = _parse_value(key, raw) if isinstance(raw, str) else raw
            if section is None:
                nested[name] = value
            else:
                nested[section][name] = value
        return TrainingConfig(**nested)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{source}: {problems}") from e
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: Union[str, Path]) -> TrainingConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    config = config_from_mapping(dict(dotenv_values(path)), source=str(path))
    logger.info("Config loaded", extra={"path": str(path), "run": config.run_name})
    return config


def config_to_mapping(config: TrainingConfig) -> Dict[str, str]:
    """Flat string form, the inverse of :func:`config_from_mapping`."""
    flat = {}
    for key, (section, name) in CONFIG_KEYS.items():
        value = getattr(config if section is None else getattr(config, section), name)
        if isinstance(value, tuple):
            flat[key] = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            flat[key] = repr(value)
        else:
            flat[key] = str(value)
    return flat


def render_config(config: TrainingConfig) -> str:
    return "".join(f"{key}={value}\n" for key, value in config_to_mapping(config).items())


class BenchSettings(BaseModel):
    """Process-level settings of the benchmark CLI, read from the environment."""
    output_dir: str = Field(default_factory=lambda: os.getenv("DAEKAN_OUTPUT_DIR", "runs"))
    jobs: int = Field(default_factory=lambda: int(os.getenv("DAEKAN_JOBS", "1")), ge=1)
    # overrides the per-config evaluation grid size when set
    n_test: Optional[int] = Field(
        default_factory=lambda: int(os.environ["DAEKAN_N_TEST"]) if os.getenv("DAEKAN_N_TEST") else None,
        ge=2)


def apply_overrides(config: TrainingConfig, seed: Optional[int] = None,
                    n_test: Optional[int] = None) -> TrainingConfig:
    """Re-validated copy of ``config`` with the command-line overrides applied."""
    if seed is None and n_test is None:
        return config
    values = config_to_mapping(config)
    if seed is not None:
        values["seed"] = str(seed)
    if n_test is not None:
        values["n_test"] = str(n_test)
    return config_from_mapping(values, source="<overrides>")
