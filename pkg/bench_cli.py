#!/usr/bin/env python3
"""
DAE-KAN benchmark command line.

Usage:
    python bench_cli.py solve --config configs/particle-kan-index3.env --out runs
    python bench_cli.py solve --config a.env --config b.env --jobs 2 --out runs
    python bench_cli.py solve --config configs/smoke.env --dry-run
    python bench_cli.py driftoff --system pendulum --horizon 100 --rtol 1e-8 --out drift
    python bench_cli.py compare --runs runs --out table.csv

Exit codes: 0 success, 2 configuration error, 1 training/evaluation failure.
"""

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from daekan.config import BenchSettings, apply_overrides, load_config, render_config
from daekan.dae_systems import SYSTEM_FACTORIES, get_system
from daekan.logging_utils import log_stage
from daekan.metrics import RunSummary, build_comparison
from daekan.plotting import plot_classical_drift, plot_drift_panel
from daekan.reference_integrator import IntegratorSettings, system_driftoff
from daekan.reporting import MANIFEST_NAME, format_float, read_run_summary, write_comparison_csv, write_drift_table_csv
from error_tracking import DaeKanError, ReportError
from logging_config import get_logger, initialize_logging
from nodes import CONFIG_ERRORS, EXIT_CONFIG, EXIT_FAILURE, EXIT_OK

logger = get_logger(__name__)

# (config path, exit code, run dir, error message)
SolveOutcome = Tuple[str, int, Optional[str], Optional[str]]


# ============================================================================
# SOLVE
# ============================================================================

def _init_worker(log_level: Optional[str]) -> None:
    initialize_logging(log_level=log_level)


def solve_one(config_path: str, output_dir: str, seed: Optional[int], n_test: Optional[int]) -> SolveOutcome:
    from workflow import run_experiment

    final = run_experiment(config_path, output_dir, seed=seed, n_test=n_test)
    return config_path, final.get("exit_code", EXIT_FAILURE), final.get("run_dir"), final.get("error_message")


def dry_run(config_paths: Sequence[str], seed: Optional[int], n_test: Optional[int]) -> int:
    """Validate every config and print its resolved settings."""
    for path in config_paths:
        try:
            config = apply_overrides(load_config(path), seed=seed, n_test=n_test)
        except CONFIG_ERRORS as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"# {path} -> {config.run_name}")
        print(render_config(config), end="")
    return EXIT_OK


def solve(args: argparse.Namespace, settings: BenchSettings) -> int:
    n_test = args.n_test if args.n_test is not None else settings.n_test
    if args.dry_run:
        return dry_run(args.config, args.seed, n_test)

    output_dir = args.out or settings.output_dir
    jobs = min(args.jobs or settings.jobs, len(args.config))
    logger.info("Solving configs", extra={"configs": args.config, "jobs": jobs, "output_dir": output_dir})

    if jobs == 1:
        outcomes = [solve_one(path, output_dir, args.seed, n_test) for path in args.config]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(args.log_level,)) as pool:
            futures = [pool.submit(solve_one, path, output_dir, args.seed, n_test) for path in args.config]
            outcomes = [future.result() for future in futures]

    for path, code, run_dir, error in outcomes:
        if code == EXIT_OK:
            print(f"ok      {path} -> {run_dir}")
        else:
            print(f"failed  {path}: {error}", file=sys.stderr)
    codes = {code for _, code, _, _ in outcomes}
    if EXIT_CONFIG in codes:
        return EXIT_CONFIG
    return EXIT_FAILURE if EXIT_FAILURE in codes else EXIT_OK


# ============================================================================
# DRIFTOFF
# ============================================================================

@log_stage("driftoff", context=lambda system, settings, horizon, out: {"system": system})
def classical_driftoff(system: str, settings: IntegratorSettings, horizon: float, out: Path) -> List[Path]:
    """Integrate the multiplier-free ODE form and write its constraint drift."""
    table = system_driftoff(get_system(system), settings, horizon)
    csv_path = write_drift_table_csv(table, out / f"driftoff_{system}.csv")
    svg_path = plot_classical_drift(table.times, table.c3_residual, table.c2_residual,
                                    out / f"driftoff_{system}.svg",
                                    f"{system}: constraint drift, rtol={settings.rtol:g}")
    window = min(10.0, horizon)
    early = table.window_max(0.0, window)
    late = table.window_max(horizon - window, horizon)
    print(f"{system}: steps={table.trajectory.accepted_steps} rejected={table.trajectory.rejected_steps} "
          f"rhs_calls={table.trajectory.rhs_calls}")
    print(f"max |level-3| on [0, {window:g}] = {format_float(early)}")
    print(f"max |level-3| on [{horizon - window:g}, {horizon:g}] = {format_float(late)}")
    return [csv_path, svg_path]


def driftoff(args: argparse.Namespace, settings: BenchSettings) -> int:
    try:
        integrator = IntegratorSettings(rtol=args.rtol, atol=args.atol if args.atol is not None else args.rtol,
                                        max_steps=args.max_steps)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or settings.output_dir)
    try:
        paths = classical_driftoff(args.system, integrator, args.horizon, out)
    except CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DaeKanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


# ============================================================================
# COMPARE
# ============================================================================

def discover_runs(paths: Iterable[str]) -> List[Path]:
    """Run directories given directly or one level below a given directory."""
    found = []
    for raw in paths:
        path = Path(raw)
        if (path / MANIFEST_NAME).is_file():
            found.append(path)
        elif path.is_dir():
            found.extend(sorted(child for child in path.iterdir() if (child / MANIFEST_NAME).is_file()))
        else:
            raise ReportError(f"Not a run directory: {path}")
    return found


def _slug(model: str) -> str:
    return model.lower().replace("-", "")


def _drift_panel(summaries: Sequence[RunSummary]) -> Dict[Tuple[int, int], tuple]:
    """Drift curves of the lowest seed per trained form."""
    panel = {}
    for summary in sorted(summaries, key=lambda s: (s.index_form, s.seed)):
        for level, curve in summary.drift.items():
            panel.setdefault((summary.index_form, level), (summary.times, curve))
    return panel


@log_stage("compare")
def compare_runs(run_dirs: Sequence[Path], out: Path) -> List[Path]:
    summaries = []
    for run_dir in run_dirs:
        try:
            summaries.append(read_run_summary(run_dir))
        except ReportError as e:
            logger.warning("Skipping run", extra={"run_dir": str(run_dir), "reason": str(e)})
    if not summaries:
        raise ReportError("No complete runs to compare")

    by_system: Dict[str, List[RunSummary]] = {}
    for summary in summaries:
        by_system.setdefault(summary.system, []).append(summary)

    written = []
    for system, group in sorted(by_system.items()):
        table = build_comparison(group)
        target = out if len(by_system) == 1 else out.with_name(f"{out.stem}_{system}{out.suffix}")
        written.append(write_comparison_csv(table, target))
        print(f"# {system} (median RE over seeds)")
        print("model," + ",".join(table.variables))
        for label, cells in table.rows:
            print(label + "," + ",".join(f"{cells[name]:.3e}" for name in table.variables)
                  + f"  seeds={table.seeds[label]}")

        for model in sorted({s.model for s in group}):
            runs = [s for s in group if s.model == model]
            svg = out.with_name(f"{out.stem}_{system}_{_slug(model)}_driftoff.svg")
            written.append(plot_drift_panel(_drift_panel(runs), svg, f"{model} drift-off ({system})"))
    return written


def compare(args: argparse.Namespace, settings: BenchSettings) -> int:
    try:
        paths = compare_runs(discover_runs(args.runs), Path(args.out))
    except DaeKanError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


# ============================================================================
# ENTRY POINT
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Solve DAE benchmarks with Kolmogorov-Arnold networks and measure drift-off",
    )
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    solve_parser = commands.add_parser("solve", help="Train, evaluate and report experiment configs")
    solve_parser.add_argument("--config", action="append", required=True, help="Config file (repeatable)")
    solve_parser.add_argument("--out", help="Output directory (default DAEKAN_OUTPUT_DIR or ./runs)")
    solve_parser.add_argument("--dry-run", action="store_true", help="Validate and print settings, train nothing")
    solve_parser.add_argument("--seed", type=int, help="Override the config seed")
    solve_parser.add_argument("--n-test", type=int, help="Override the evaluation grid size")
    solve_parser.add_argument("--jobs", type=int, help="Parallel worker processes (default DAEKAN_JOBS or 1)")
    solve_parser.set_defaults(handler=solve)

    drift_parser = commands.add_parser("driftoff", help="Classical integrator drift-off of a system")
    drift_parser.add_argument("--system", default="pendulum", choices=sorted(SYSTEM_FACTORIES))
    drift_parser.add_argument("--horizon", type=float, default=100.0)
    drift_parser.add_argument("--rtol", type=float, default=1e-8)
    drift_parser.add_argument("--atol", type=float, help="Absolute tolerance (default: rtol)")
    drift_parser.add_argument("--max-steps", type=int, default=1_000_000)
    drift_parser.add_argument("--out", help="Output directory")
    drift_parser.set_defaults(handler=driftoff)

    compare_parser = commands.add_parser("compare", help="Median-RE table and drift-off panels of finished runs")
    compare_parser.add_argument("--runs", nargs="+", required=True, help="Run directories or their parents")
    compare_parser.add_argument("--out", default="table.csv", help="Comparison table path")
    compare_parser.set_defaults(handler=compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # process environment wins over a local .env
    load_dotenv(Path.cwd() / ".env")
    initialize_logging(log_level=args.log_level)
    try:
        settings = BenchSettings()
    except ValueError as e:
        print(f"error: invalid environment settings: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.handler(args, settings)


if __name__ == "__main__":
    sys.exit(main())
