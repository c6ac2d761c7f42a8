"""Tests for the experiment config model and its key-value file format."""

import pytest

from daekan.config import (
    BenchSettings,
    CONFIG_KEYS,
    apply_overrides,
    config_from_mapping,
    config_to_mapping,
    load_config,
    render_config,
)
from error_tracking import ConfigError
from tests.conftest import TINY_RUN

pytestmark = pytest.mark.unit


class TestConfigFile:
    """Parsing config files."""

    def test_load(self, write_config):
        config = load_config(write_config())
        assert config.system == "particle"
        assert config.index_form == 3
        assert config.differential_shape == (1, 2, 4)
        assert config.algebraic_shape == (1, 2, 1)
        assert config.epochs == 3
        assert config.model_label == "DAE-KAN"
        assert config.run_name == "particle-kan-index3-seed7"

    def test_defaults(self):
        config = config_from_mapping({"system": "pendulum", "index_form": "1"})
        assert (config.grid.intervals, config.grid.order) == (5, 3)
        assert (config.grid.hidden_min, config.grid.hidden_max) == (-1.0, 1.0)
        assert config.lbfgs.history == 50
        assert (config.lbfgs.c1, config.lbfgs.c2) == (1e-4, 0.9)
        assert config.n_collocation == 200
        assert config.t_end == 1.0

    def test_comments_and_nested_keys(self, tmp_path):
        path = tmp_path / "nested.env"
        path.write_text(
            "# grid and optimizer\nsystem=robot-arm\nindex_form=2\nnet_kind=mlp\n"
            "mlp_hidden=80,80\ngrid_intervals=8\nlbfgs_history=10\n", encoding="utf-8")
        config = load_config(path)
        assert config.model_label == "PINNs"
        assert config.mlp_hidden == (80, 80)
        assert config.grid.intervals == 8
        assert config.lbfgs.history == 10

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.env")

    def test_unknown_key(self, write_config):
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(write_config(learning_rate="0.1"))

    def test_missing_required_key(self, write_config):
        with pytest.raises(ConfigError, match="index_form"):
            load_config(write_config(index_form=None))

    @pytest.mark.parametrize("key,value", [
        ("system", "double-pendulum"),
        ("index_form", "4"),
        ("net_kind", "transformer"),
        ("n_collocation", "0"),
        ("epochs", "-1"),
        ("epochs", "0"),
        ("t_end", "0"),
        ("differential_shape", "2,5,4"),
        ("grid_intervals", "0"),
        ("hidden_grid_max", "-2"),
        ("lbfgs_c1", "0.95"),
        ("n_test", "1"),
        ("seed", "abc"),
    ])
    def test_invalid_values(self, write_config, key, value):
        with pytest.raises(ConfigError):
            load_config(write_config(**{key: value}))

    def test_empty_value(self):
        with pytest.raises(ConfigError, match="no value"):
            config_from_mapping({**TINY_RUN, "epochs": ""})

    def test_single_epoch_is_smallest_budget(self):
        assert config_from_mapping({**TINY_RUN, "epochs": "1"}).epochs == 1


class TestRendering:
    """Flat string form used for the run directory echo and dry runs."""

    def test_round_trip(self, tiny_config):
        assert config_from_mapping(config_to_mapping(tiny_config)) == tiny_config

    def test_render_lists_every_key(self, tiny_config):
        lines = render_config(tiny_config).splitlines()
        assert [line.split("=", 1)[0] for line in lines] == list(CONFIG_KEYS)
        assert "differential_shape=1,2,4" in lines

    def test_rendered_file_loads(self, tiny_config, tmp_path):
        path = tmp_path / "echo.env"
        path.write_text(render_config(tiny_config), encoding="utf-8")
        assert load_config(path) == tiny_config


class TestOverrides:
    """Command-line seed and evaluation-grid overrides."""

    def test_no_overrides_returns_same_object(self, tiny_config):
        assert apply_overrides(tiny_config) is tiny_config

    def test_seed_and_n_test(self, tiny_config):
        changed = apply_overrides(tiny_config, seed=3, n_test=50)
        assert (changed.seed, changed.n_test) == (3, 50)
        assert changed.run_name.endswith("seed3")
        assert changed.epochs == tiny_config.epochs

    def test_invalid_override(self, tiny_config):
        with pytest.raises(ConfigError):
            apply_overrides(tiny_config, n_test=1)


class TestBenchSettings:
    """Environment-driven CLI settings."""

    def test_defaults(self, monkeypatch):
        for name in ("DAEKAN_OUTPUT_DIR", "DAEKAN_JOBS", "DAEKAN_N_TEST"):
            monkeypatch.delenv(name, raising=False)
        settings = BenchSettings()
        assert (settings.output_dir, settings.jobs, settings.n_test) == ("runs", 1, None)

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("DAEKAN_OUTPUT_DIR", "/tmp/daekan-runs")
        monkeypatch.setenv("DAEKAN_JOBS", "4")
        monkeypatch.setenv("DAEKAN_N_TEST", "200")
        settings = BenchSettings()
        assert (settings.output_dir, settings.jobs, settings.n_test) == ("/tmp/daekan-runs", 4, 200)
