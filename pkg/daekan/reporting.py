"""Report files of a run: CSV tables, config echo and ``MANIFEST.json``.

Floats are written with 17 significant digits. Every file is written to a
temporary sibling and renamed into place.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from daekan.config import TrainingConfig, load_config, render_config
from daekan.metrics import ComparisonTable, RunReport, RunSummary
from daekan.reference_integrator import DriftTable
from daekan.training import TrainingTrace
from error_tracking import ConfigError, ReportError
from logging_config import get_logger

logger = get_logger(__name__)

MANIFEST_NAME = "MANIFEST.json"
CONFIG_ECHO_NAME = "config.env"
AE_FILE = "ae.csv"
RE_FILE = "re.csv"
SUMMARY_FILE = "summary.csv"
DRIFT_FILE = "driftoff.csv"
TRACE_FILE = "trace.csv"

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    return f"{float(value):.17g}"


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False)
    try:
        with handle:
            handle.write(payload)
        os.replace(handle.name, path)
    except BaseException:
        if os.path.exists(handle.name):
            os.unlink(handle.name)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    path = atomic_write_text(Path(path), buffer.getvalue())
    logger.debug("CSV written", extra={"path": str(path), "columns": len(header)})
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"Missing report file: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


# ============================================================================
# RUN FILES
# ============================================================================

def write_trace_csv(trace: TrainingTrace, path: PathLike) -> Path:
    return write_csv(path, ("iteration", "loss_total", "mse_f", "mse_i", "grad_norm"),
                     ((r.iteration, r.loss_total, r.mse_f, r.mse_i, r.grad_norm) for r in trace.rows))


def write_ae_csv(report: RunReport, path: PathLike) -> Path:
    names = report.variable_names
    columns = [report.ae[name] for name in names]
    rows = ((t, *(float(column[i]) for column in columns)) for i, t in enumerate(report.times))
    return write_csv(path, ("t",) + tuple(names), rows)


def write_re_csv(report: RunReport, path: PathLike) -> Path:
    return write_csv(path, ("variable", "re"), ((name, report.re[name]) for name in report.variable_names))


def write_summary_csv(report: RunReport, path: PathLike) -> Path:
    sums, maxima = report.ae_sum, report.ae_max
    return write_csv(path, ("variable", "re", "ae_sum", "ae_max"),
                     ((name, report.re[name], sums[name], maxima[name]) for name in report.variable_names))


def write_driftoff_csv(times: np.ndarray, curves: Dict[int, np.ndarray], path: PathLike) -> Path:
    rows = ((t, float(curves[1][i]), float(curves[2][i]), float(curves[3][i])) for i, t in enumerate(times))
    return write_csv(path, ("t", "level1", "level2", "level3"), rows)


def write_drift_table_csv(table: DriftTable, path: PathLike) -> Path:
    rows = zip(table.times.tolist(), table.c3_residual.tolist(), table.c2_residual.tolist())
    return write_csv(path, ("t", "c3_residual", "c2_residual"), rows)


def write_comparison_csv(table: ComparisonTable, path: PathLike) -> Path:
    rows = ((label, *(cells[name] for name in table.variables)) for label, cells in table.rows)
    return write_csv(path, ("model",) + tuple(table.variables), rows)


def write_manifest(run_dir: PathLike, run: str, complete: bool, files: Sequence[str],
                   error: Optional[str] = None, extra: Optional[Dict[str, Any]] = None) -> Path:
    manifest: Dict[str, Any] = {"run": run, "complete": complete, "files": sorted(files)}
    if error:
        manifest["error"] = error
    if extra:
        manifest.update(extra)
    return atomic_write_text(Path(run_dir) / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir: PathLike) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ReportError(f"No manifest in {run_dir}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportError(f"Malformed manifest {path}: {e}") from e


def write_config_echo(config: TrainingConfig, run_dir: PathLike) -> Path:
    return atomic_write_text(Path(run_dir) / CONFIG_ECHO_NAME, render_config(config))


def write_run_report(report: RunReport, run_dir: PathLike) -> List[str]:
    """Write every CSV of a run; returns the file names written."""
    run_dir = Path(run_dir)
    written = [
        write_ae_csv(report, run_dir / AE_FILE),
        write_re_csv(report, run_dir / RE_FILE),
        write_summary_csv(report, run_dir / SUMMARY_FILE),
        write_driftoff_csv(report.times, report.drift, run_dir / DRIFT_FILE),
    ]
    if report.trace is not None:
        written.append(write_trace_csv(report.trace, run_dir / TRACE_FILE))
    logger.info("Run report written", extra={"run_dir": str(run_dir), "files": len(written)})
    return [path.name for path in written]


# ============================================================================
# READING RUNS BACK
# ============================================================================

def read_run_summary(run_dir: PathLike) -> RunSummary:
    """Config echo, relative errors and drift-off curves of a finished run."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    if not manifest.get("complete"):
        raise ReportError(f"Run in {run_dir} is incomplete")
    try:
        config = load_config(run_dir / CONFIG_ECHO_NAME)
    except ConfigError as e:
        raise ReportError(f"Unreadable config echo in {run_dir}: {e}") from e
    try:
        re = {row["variable"]: float(row["re"]) for row in read_csv(run_dir / RE_FILE)}
        drift_rows = read_csv(run_dir / DRIFT_FILE)
        times = np.array([float(row["t"]) for row in drift_rows])
        drift = {level: np.array([float(row[f"level{level}"]) for row in drift_rows]) for level in (1, 2, 3)}
    except (KeyError, ValueError) as e:
        raise ReportError(f"Malformed report in {run_dir}: {e}") from e
    return RunSummary(config.system, config.model_label, config.index_form, config.seed, re, drift, times)
