"""Integration tests for the benchmark command line."""

import pytest

import bench_cli
from daekan.reporting import read_csv, read_manifest
from nodes import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK

pytestmark = pytest.mark.integration


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch, tmp_path):
    for name in ("DAEKAN_OUTPUT_DIR", "DAEKAN_JOBS", "DAEKAN_N_TEST", "ENABLE_FILE_LOGGING"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


class TestSolve:
    """The ``solve`` command."""

    def test_dry_run_prints_resolved_config(self, write_config, capsys):
        path = write_config()
        code = bench_cli.main(["solve", "--config", str(path), "--dry-run", "--seed", "4"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert f"# {path} -> particle-kan-index3-seed4" in out
        assert "seed=4\n" in out
        assert not (path.parent / "runs").exists()

    def test_dry_run_reports_config_errors(self, write_config, capsys):
        code = bench_cli.main(["solve", "--config", str(write_config(index_form="5")), "--dry-run"])
        assert code == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_solve_writes_run_directory(self, write_config, tmp_path, capsys):
        code = bench_cli.main(["solve", "--config", str(write_config()), "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        run_dir = tmp_path / "out" / "particle-kan-index3-seed7"
        assert read_manifest(run_dir)["complete"] is True
        assert f"-> {run_dir}" in capsys.readouterr().out

    def test_environment_output_dir(self, write_config, tmp_path, monkeypatch):
        monkeypatch.setenv("DAEKAN_OUTPUT_DIR", str(tmp_path / "env-runs"))
        monkeypatch.setenv("DAEKAN_N_TEST", "6")
        assert bench_cli.main(["solve", "--config", str(write_config())]) == EXIT_OK
        run_dir = tmp_path / "env-runs" / "particle-kan-index3-seed7"
        assert len(read_csv(run_dir / "ae.csv")) == 6

    def test_config_error_wins_over_success(self, write_config, tmp_path):
        good = write_config("good.env")
        bad = write_config("bad.env", system="unknown")
        code = bench_cli.main(["solve", "--config", str(good), "--config", str(bad), "--out", str(tmp_path)])
        assert code == EXIT_CONFIG
        assert read_manifest(tmp_path / "particle-kan-index3-seed7")["complete"] is True

    def test_invalid_jobs(self, write_config):
        assert bench_cli.main(["solve", "--config", str(write_config()), "--jobs", "0"]) == EXIT_CONFIG


class TestDriftoff:
    """The ``driftoff`` command."""

    def test_short_pendulum_run(self, tmp_path, capsys):
        code = bench_cli.main(["driftoff", "--system", "pendulum", "--horizon", "2", "--rtol", "1e-6",
                               "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        rows = read_csv(tmp_path / "driftoff_pendulum.csv")
        assert list(rows[0]) == ["t", "c3_residual", "c2_residual"]
        assert float(rows[-1]["t"]) == 2.0
        assert (tmp_path / "driftoff_pendulum.svg").is_file()
        assert "max |level-3| on [0, 2]" in out

    def test_step_budget_is_a_failure(self, tmp_path):
        code = bench_cli.main(["driftoff", "--horizon", "50", "--rtol", "1e-10", "--max-steps", "10",
                               "--out", str(tmp_path)])
        assert code == EXIT_FAILURE

    def test_invalid_tolerance(self, tmp_path):
        assert bench_cli.main(["driftoff", "--rtol", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG


class TestCompare:
    """The ``compare`` command over finished runs."""

    def test_table_from_two_seeds(self, write_config, tmp_path, capsys):
        config = write_config()
        runs = tmp_path / "runs"
        for seed in ("1", "2"):
            assert bench_cli.main(["solve", "--config", str(config), "--seed", seed, "--out", str(runs)]) == EXIT_OK
        capsys.readouterr()

        code = bench_cli.main(["compare", "--runs", str(runs), "--out", str(tmp_path / "table.csv")])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        rows = read_csv(tmp_path / "table.csv")
        assert [row["model"] for row in rows] == ["DAE-KAN(index-3)"]
        assert "seeds=[1, 2]" in out
        assert (tmp_path / "table_particle_daekan_driftoff.svg").is_file()

    def test_incomplete_runs_are_skipped(self, write_config, tmp_path):
        runs = tmp_path / "runs"
        assert bench_cli.main(["solve", "--config", str(write_config()), "--out", str(runs)]) == EXIT_OK
        partial = runs / "partial"
        partial.mkdir()
        (partial / "MANIFEST.json").write_text('{"run": "partial", "complete": false, "files": []}\n',
                                               encoding="utf-8")
        assert bench_cli.main(["compare", "--runs", str(runs), "--out", str(tmp_path / "t.csv")]) == EXIT_OK
        assert len(read_csv(tmp_path / "t.csv")) == 1

    def test_nothing_to_compare(self, tmp_path):
        assert bench_cli.main(["compare", "--runs", str(tmp_path / "missing")]) == EXIT_FAILURE
