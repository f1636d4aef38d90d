"""Command-line front end: ``validate``, ``schedule``, ``run`` and ``simulate``.

Every command reads one JSON experiment config. Results go to stdout or the
``-o`` path; logs go to stderr. Exit codes: 0 success, 2 validation or config
failure, 3 partial method failure, 4 I/O or data failure.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd

from .config import APP_VERSION, resolve_seed
from .engine import RunResult, crossfit_multi, split_folds
from .errors import (
    CrossfitError,
    ErrorCode,
    ExitCode,
    SpecificationError,
    error_body,
    exit_code_for,
)
from .folds import FoldAssignment, ScheduleRow, audit_schedule
from .logging_config import configure_logging, get_logger
from .models import (
    ExperimentConfig,
    MethodConfig,
    build_method,
    build_methods,
    load_config,
    load_data,
)
from .simulation import ORACLE_METHOD, render_simulation_csv, run_simulation
from .spec import MethodSpec, ValidationReport, validate_method
from .tabular import Dataset

logger = get_logger(__name__)


def _canonical_json(payload: Any) -> str:
    """Sorted-key, indented JSON with a trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _emit(text: str, output: str | None) -> None:
    """Write ``text`` to ``output`` or stdout.

    Raises:
        CrossfitError: ``IO_ERROR`` when the output file cannot be written.
    """
    if output is None:
        sys.stdout.write(text)
        return
    try:
        Path(output).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CrossfitError(
            ErrorCode.IO_ERROR, f"Cannot write {output}: {exc.strerror}", {"path": output}
        ) from None


def _config_dir(path: str) -> Path:
    """Directory that relative data paths in the config resolve against."""
    return Path(path).resolve().parent


def _output_path(args: argparse.Namespace, config: ExperimentConfig) -> str | None:
    """The ``-o`` path as given, else the config's ``output`` beside the config file."""
    if args.output is not None:
        return args.output
    if config.output is None:
        return None
    return str(_config_dir(args.config) / config.output)


def _needs_data(config: ExperimentConfig) -> bool:
    """Whether building the methods requires the dataset (fold columns)."""
    return any(method.fold_column is not None for method in config.methods)


def cmd_validate(args: argparse.Namespace) -> int:
    """Validate every method and print one report per method."""
    config: ExperimentConfig = load_config(args.config)
    data: Dataset | None = None
    if _needs_data(config):
        data, _ = load_data(config, resolve_seed(config.seed), _config_dir(args.config))
    reports: dict[str, ValidationReport] = {
        name: validate_method(method) for name, method in build_methods(config, data).items()
    }
    ok: bool = all(report.ok for report in reports.values())
    print(
        _canonical_json(
            {"ok": ok, "methods": {name: report.to_dict() for name, report in reports.items()}}
        ),
        end="",
    )
    return ExitCode.OK if ok else ExitCode.VALIDATION_FAILED


def _schedule_frame(
    rows: Sequence[ScheduleRow], folds: FoldAssignment | None
) -> pd.DataFrame:
    """Schedule rows as a table; with a fold assignment, add row counts."""
    records: list[dict[str, Any]] = []
    for row in rows:
        record: dict[str, Any] = {
            "panel": row.panel,
            "instance": row.instance,
            "path": row.path,
            "window": _fold_set(row.window),
            "eval_folds": _fold_set(row.eval_folds),
        }
        if folds is not None:
            record["n_train"] = int(folds.rows_in(row.window).shape[0])
            record["n_eval"] = int(folds.rows_in(row.eval_folds).shape[0])
        records.append(record)
    return pd.DataFrame.from_records(records)


def _fold_set(folds: Sequence[int]) -> str:
    """Render fold indices as ``{a,b}`` in window order."""
    return "{" + ",".join(str(fold) for fold in folds) + "}"


def _schedule_text(frame: pd.DataFrame, K: int) -> str:
    """One line per panel: ``panel p: eval:{..}; inst:{..}; ...``."""
    lines: list[str] = []
    for panel in range(K):
        panel_rows: pd.DataFrame = frame[frame["panel"] == panel] if not frame.empty else frame
        eval_folds: str = str(panel_rows["eval_folds"].iloc[0]) if not panel_rows.empty else "{}"
        parts: list[str] = [f"eval:{eval_folds}"]
        for record in panel_rows.to_dict("records"):
            part: str = f"{record['instance']}:{record['window']}"
            if "n_train" in record:
                part += f" (n={record['n_train']})"
            parts.append(part)
        lines.append(f"panel {panel}: " + "; ".join(parts))
    return "\n".join(lines) + "\n"


def cmd_schedule(args: argparse.Namespace) -> int:
    """Print the audit table of one method's repetition schedule."""
    config: ExperimentConfig = load_config(args.config)
    method_config: MethodConfig = config.method_config(args.method)
    seed: int = resolve_seed(config.seed)
    data: Dataset | None = None
    if args.rep is not None or method_config.fold_column is not None:
        data, _ = load_data(config, seed, _config_dir(args.config))

    method: MethodSpec = build_method(method_config, data)
    report: ValidationReport = validate_method(method)
    if not report.ok:
        raise SpecificationError(report)

    folds: FoldAssignment | None = None
    if args.rep is not None and data is not None:
        folds = split_folds(data, method, seed, args.rep)
    frame: pd.DataFrame = _schedule_frame(audit_schedule(method), folds)
    if args.format == "csv":
        print(frame.to_csv(index=False, lineterminator="\n"), end="")
    else:
        print(_schedule_text(frame, method.K), end="")
    return ExitCode.OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run every method over shared schedules and write the JSON results."""
    config: ExperimentConfig = load_config(args.config)
    seed: int = resolve_seed(config.seed)
    data, _ = load_data(config, seed, _config_dir(args.config))
    results: dict[str, RunResult] = crossfit_multi(
        data, build_methods(config, data), seed=seed, cache_policy=config.cache_policy
    )
    payload: dict[str, Any] = {
        "seed": seed,
        "methods": {name: result.to_payload(data) for name, result in results.items()},
    }
    _emit(_canonical_json(payload), _output_path(args, config))
    failed: list[str] = []
    for name, result in results.items():
        if result.n_success == 0:
            failed.append(name)
    if failed:
        logger.warning("methods_failed", methods=failed)
        return ExitCode.PARTIAL_FAILURE
    return ExitCode.OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Run the Monte-Carlo study and write the replication CSV with its footer."""
    config: ExperimentConfig = load_config(args.config)
    rows, summaries = run_simulation(config, resolve_seed(config.seed))
    _emit(render_simulation_csv(rows, summaries), _output_path(args, config))
    for summary in summaries:
        if summary.method != ORACLE_METHOD and summary.n == 0:
            return ExitCode.PARTIAL_FAILURE
    return ExitCode.OK


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser: argparse.ArgumentParser = argparse.ArgumentParser(
        prog="crossfit", description="Cross-fitting engine with auditable fold schedules."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="check every method in a config")
    validate.add_argument("config", help="experiment config (JSON)")
    validate.set_defaults(handler=cmd_validate)

    schedule = commands.add_parser("schedule", help="print one method's fold schedule")
    schedule.add_argument("config", help="experiment config (JSON)")
    schedule.add_argument("--method", required=True, help="method name")
    schedule.add_argument("--rep", type=int, default=None, help="add row counts for repetition R")
    schedule.add_argument("--format", choices=("text", "csv"), default="text")
    schedule.set_defaults(handler=cmd_schedule)

    run = commands.add_parser("run", help="cross-fit every method once")
    run.add_argument("config", help="experiment config (JSON)")
    run.add_argument("-o", "--output", default=None, help="results JSON path (default stdout)")
    run.set_defaults(handler=cmd_run)

    simulate = commands.add_parser("simulate", help="Monte-Carlo study over a generator")
    simulate.add_argument("config", help="experiment config (JSON)")
    simulate.add_argument("-o", "--output", default=None, help="results CSV path (default stdout)")
    simulate.set_defaults(handler=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, dispatch, and map errors onto exit codes."""
    configure_logging()
    args: argparse.Namespace = build_parser().parse_args(argv)
    try:
        return int(args.handler(args))
    except CrossfitError as exc:
        logger.error("cli_error", command=args.command, code=str(exc.code), error=exc.message)
        print(_canonical_json(error_body(exc)), end="")
        return int(exit_code_for(exc.code))


if __name__ == "__main__":
    sys.exit(main())
