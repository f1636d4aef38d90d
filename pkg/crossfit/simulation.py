"""Monte-Carlo studies: fresh data per replication, shared schedules per call.

Every replication draws a new dataset from the configured generator with a
seed derived from the experiment seed and the replication index, runs all
methods through one ``crossfit_multi`` call, and records one row per method.
When the generator knows the true parameter, an ``oracle`` row is added and the
summary reports bias against it.
"""

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
import numpy.typing as npt
import pandas as pd

from .engine import RunResult, crossfit_multi
from .errors import CrossfitError, ErrorCode, SpecificationError
from .folds import derive_seed
from .logging_config import get_logger
from .models import CsvSource, DgpSource, ExperimentConfig, build_methods, dgp_params
from .recipes import DGPS, PLRParams
from .spec import MethodSpec, Mode, ValidationReport, validate_method
from .tabular import CSV_FLOAT_FORMAT, Dataset

logger = get_logger(__name__)

ORACLE_METHOD: str = "oracle"

# Seed streams: one for data draws, one for fold splits.
DATA_STREAM: int = 0
SPLIT_STREAM: int = 1


@dataclass(frozen=True)
class SimulationRow:
    """One (replication, method) outcome."""

    replication: int
    method: str
    estimate: float | None
    n_success: int
    n_fail: int
    fit_calls: int
    cache_hits: int
    fold_digest: str


@dataclass(frozen=True)
class MethodSummary:
    """Monte-Carlo mean, bias against the true parameter, and standard deviation."""

    method: str
    n: int
    mean: float | None
    bias: float | None
    mc_std: float | None


def _row(replication: int, method: str, result: RunResult) -> SimulationRow:
    """Flatten a run result into a CSV row."""
    return SimulationRow(
        replication=replication,
        method=method,
        estimate=None if result.estimate is None else float(result.estimate),
        n_success=result.n_success,
        n_fail=result.n_fail,
        fit_calls=result.fit_calls,
        cache_hits=result.cache_hits,
        fold_digest=";".join(result.fold_digests),
    )


def _validated(methods: dict[str, MethodSpec]) -> dict[str, MethodSpec]:
    """Reject invalid or predict-mode methods before the first replication."""
    for name, method in methods.items():
        report: ValidationReport = validate_method(method)
        if not report.ok:
            raise SpecificationError(report)
        if method.mode is Mode.PREDICT:
            raise CrossfitError(
                ErrorCode.CONFIG_ERROR,
                f"Method {name!r}: simulate needs estimate-mode methods",
                {"method": name},
            )
    return methods


def run_simulation(
    config: ExperimentConfig, seed: int
) -> tuple[list[SimulationRow], list[MethodSummary]]:
    """Run ``config.monte_carlo_reps`` replications and summarize them.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` unless the data source is a generator.
        SpecificationError: When a method fails validation.
    """
    source: CsvSource | DgpSource = config.data
    if not isinstance(source, DgpSource):
        raise CrossfitError(ErrorCode.CONFIG_ERROR, "simulate needs a dgp data source")

    rows: list[SimulationRow] = []
    truth: float | None = None
    for replication in range(config.monte_carlo_reps):
        params: PLRParams = dgp_params(
            source, derive_seed(derive_seed(seed, DATA_STREAM), replication)
        )
        _, generate, oracle = DGPS[source.name]
        data: Dataset = generate(params)
        methods: dict[str, MethodSpec] = _validated(build_methods(config, data))
        results: dict[str, RunResult] = crossfit_multi(
            data,
            methods,
            seed=derive_seed(derive_seed(seed, SPLIT_STREAM), replication),
            cache_policy=config.cache_policy,
        )
        for name, result in results.items():
            rows.append(_row(replication, name, result))

        truth = params.theta0
        rows.append(
            SimulationRow(replication, ORACLE_METHOD, oracle(data, params), 1, 0, 0, 0, "")
        )
        logger.info(
            "simulation_replication_complete",
            replication=replication,
            estimates={name: result.estimate for name, result in results.items()},
        )

    return rows, summarize(rows, truth)


def summarize(rows: Sequence[SimulationRow], truth: float | None) -> list[MethodSummary]:
    """Per-method mean, bias and Monte-Carlo std over the non-missing estimates.

    Methods appear in first-seen order; the std uses ``ddof=1`` and is ``None``
    below two estimates.
    """
    by_method: dict[str, list[float]] = {}
    for row in rows:
        collected: list[float] = by_method.setdefault(row.method, [])
        if row.estimate is not None:
            collected.append(row.estimate)
    summaries: list[MethodSummary] = []
    for method, values in by_method.items():
        estimates: npt.NDArray[np.float64] = np.asarray(values, dtype=np.float64)
        if estimates.size == 0:
            summaries.append(MethodSummary(method, 0, None, None, None))
            continue
        mean: float = float(np.mean(estimates))
        summaries.append(
            MethodSummary(
                method=method,
                n=int(estimates.size),
                mean=mean,
                bias=None if truth is None else mean - truth,
                mc_std=float(np.std(estimates, ddof=1)) if estimates.size > 1 else None,
            )
        )
    return summaries


def render_simulation_csv(
    rows: Sequence[SimulationRow], summaries: Sequence[MethodSummary]
) -> str:
    """Render the replication table, a blank line, and the summary footer table."""
    table: pd.DataFrame = pd.DataFrame(
        [asdict(row) for row in rows], columns=list(SimulationRow.__dataclass_fields__)
    )
    footer: pd.DataFrame = pd.DataFrame(
        [asdict(summary) for summary in summaries],
        columns=list(MethodSummary.__dataclass_fields__),
    )
    body: str = table.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    summary: str = footer.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return f"{body}\n{summary}"

