"""Static SVG plots: absolute-error curves and drift-off panels.

Identical inputs give byte-identical files (fixed SVG id salt, no date metadata).
"""

import io
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from daekan.dae_systems import INDEX_FORMS
from daekan.metrics import DRIFT_LEVELS, RunReport
from daekan.reporting import atomic_write_bytes
from error_tracking import PlotError
from logging_config import get_logger

logger = get_logger(__name__)

SVG_RC = {"svg.hashsalt": "daekan", "svg.fonttype": "path", "path.simplify": False}
FLOOR = 1e-300

# (trained form, evaluated level) -> (times, |residual|)
DriftPanel = Mapping[Tuple[int, int], Tuple[np.ndarray, np.ndarray]]


def _render(figure: Figure) -> bytes:
    buffer = io.BytesIO()
    with matplotlib.rc_context(SVG_RC):
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def _check_series(times: np.ndarray, values: np.ndarray, what: str) -> None:
    if len(times) == 0 or len(values) == 0:
        raise PlotError(f"Refusing to plot an empty trajectory ({what})")
    if len(times) != len(values):
        raise PlotError(f"Times and values differ in length ({what})")


def plot_absolute_error(times: np.ndarray, curve: np.ndarray, variable: str, path: Path,
                        title: Optional[str] = None) -> Path:
    times, curve = np.asarray(times), np.asarray(curve)
    _check_series(times, curve, variable)
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(6.0, 4.0))
        axes = figure.add_subplot(1, 1, 1)
        axes.semilogy(times, np.maximum(curve, FLOOR), linewidth=1.2)
        axes.set_xlabel("t")
        axes.set_ylabel(f"AE({variable})")
        axes.set_title(title or f"Absolute error of {variable}")
        axes.grid(True, which="both", linewidth=0.3)
        figure.tight_layout()
        return atomic_write_bytes(path, _render(figure))


def plot_drift_panel(panel: DriftPanel, path: Path, title: str) -> Path:
    """3x3 grid: rows are trained index forms, columns evaluated constraint levels."""
    if not panel:
        raise PlotError("Refusing to plot an empty drift-off panel")
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(10.0, 8.0))
        for row, form in enumerate(INDEX_FORMS):
            for column, level in enumerate(DRIFT_LEVELS):
                axes = figure.add_subplot(3, 3, row * 3 + column + 1)
                entry = panel.get((form, level))
                if entry is None:
                    axes.text(0.5, 0.5, "not run", ha="center", va="center", transform=axes.transAxes)
                    axes.set_xticks([])
                    axes.set_yticks([])
                else:
                    times, curve = (np.asarray(a) for a in entry)
                    _check_series(times, curve, f"form {form}, level {level}")
                    axes.semilogy(times, np.maximum(curve, FLOOR), linewidth=1.0)
                if row == 0:
                    axes.set_title(f"level-{level} constraint", fontsize=9)
                if column == 0:
                    axes.set_ylabel(f"trained index-{form}", fontsize=9)
        figure.suptitle(title)
        figure.tight_layout()
        return atomic_write_bytes(path, _render(figure))


def emit_plots(report: RunReport, output_dir: Path) -> List[Path]:
    """One AE plot per variable and the run's drift-off panel."""
    output_dir = Path(output_dir)
    if len(report.times) == 0:
        raise PlotError("Refusing to plot an empty report")
    paths = []
    for name in report.variable_names:
        paths.append(plot_absolute_error(report.times, report.ae[name], name, output_dir / f"ae_{name}.svg",
                                         title=f"{report.config.model_label} index-{report.config.index_form}: {name}"))
    panel: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {
        (report.config.index_form, level): (report.times, report.drift[level]) for level in DRIFT_LEVELS
    }
    paths.append(plot_drift_panel(panel, output_dir / "driftoff.svg",
                                  f"{report.config.model_label} drift-off ({report.config.system})"))
    logger.info("Plots written", extra={"output_dir": str(output_dir), "files": len(paths)})
    return paths


def plot_classical_drift(times: np.ndarray, c3: np.ndarray, c2: np.ndarray, path: Path, title: str) -> Path:
    """Position and velocity constraint violation of a classical trajectory."""
    times = np.asarray(times)
    _check_series(times, np.asarray(c3), "c3")
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(6.0, 4.0))
        axes = figure.add_subplot(1, 1, 1)
        axes.semilogy(times, np.maximum(c3, FLOOR), label="level-3", linewidth=1.0)
        axes.semilogy(times, np.maximum(c2, FLOOR), label="level-2", linewidth=1.0)
        axes.set_xlabel("t")
        axes.set_ylabel("|constraint|")
        axes.set_title(title)
        axes.legend()
        axes.grid(True, which="both", linewidth=0.3)
        figure.tight_layout()
        return atomic_write_bytes(path, _render(figure))
