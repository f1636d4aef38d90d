"""Tests for Monte-Carlo replications, summaries, and the simulation CSV."""

import io
import math
from typing import Any

import pandas as pd
import pytest

from crossfit.errors import CrossfitError, ErrorCode
from crossfit.folds import Allocation
from crossfit.models import ExperimentConfig
from crossfit.recipes import covariate_names
from crossfit.simulation import (
    ORACLE_METHOD,
    SimulationRow,
    render_simulation_csv,
    run_simulation,
    summarize,
)

X = list(covariate_names(5))


def _row(replication: int, method: str, estimate: float | None) -> SimulationRow:
    """A row with only the fields the summary reads filled in."""
    return SimulationRow(replication, method, estimate, 1, 0, 2, 0, "")


def _plr_config(n: int, reps: int, K: int = 3, repeats: int = 1, **overrides: Any) -> ExperimentConfig:
    """PLR with OLS outcome and logistic propensity on ``x1..x5``."""
    body: dict[str, Any] = {
        "data": {"kind": "dgp", "params": {"n": n}},
        "monte_carlo_reps": reps,
        "methods": [
            {
                "name": "plr",
                "target": "plr",
                "K": K,
                "repeats": repeats,
                "nuisances": [
                    {"name": "nuis_g", "learner": {"name": "ols", "params": {"y": "y", "x": X}}},
                    {"name": "nuis_m", "learner": {"name": "logistic", "params": {"y": "d", "x": X}}},
                ],
            }
        ],
    }
    body.update(overrides)
    return ExperimentConfig.model_validate(body)


class TestSummarize:
    """Per-method Monte-Carlo summaries."""

    def test_mean_bias_std(self) -> None:
        """The std uses ``ddof=1`` and bias is measured against the truth."""
        (summary,) = summarize([_row(0, "plr", 1.0), _row(1, "plr", 3.0)], truth=2.0)
        assert (summary.n, summary.mean, summary.bias) == (2, 2.0, 0.0)
        assert summary.mc_std == pytest.approx(math.sqrt(2.0))

    def test_single_estimate_has_no_std(self) -> None:
        """One estimate has a mean but no spread."""
        (summary,) = summarize([_row(0, "plr", 1.5)], truth=None)
        assert summary.mean == 1.5
        assert summary.bias is None
        assert summary.mc_std is None

    def test_missing_estimates_skipped(self) -> None:
        """Failed replications do not count; all-failed methods report nothing."""
        rows = [_row(0, "a", None), _row(1, "a", 4.0), _row(0, "b", None)]
        a, b = summarize(rows, truth=None)
        assert (a.method, a.n, a.mean) == ("a", 1, 4.0)
        assert (b.method, b.n, b.mean, b.mc_std) == ("b", 0, None, None)


class TestRender:
    """The two-table CSV layout."""

    def test_table_blank_line_footer(self) -> None:
        """Rows come first, then a blank line, then one summary per method."""
        rows = [_row(0, "plr", 2.0), _row(0, ORACLE_METHOD, 2.1)]
        text = render_simulation_csv(rows, summarize(rows, truth=2.0))
        table, footer = text.split("\n\n")
        assert list(pd.read_csv(io.StringIO(table)).columns) == [
            "replication", "method", "estimate", "n_success", "n_fail",
            "fit_calls", "cache_hits", "fold_digest",
        ]
        summary = pd.read_csv(io.StringIO(footer))
        assert list(summary.columns) == ["method", "n", "mean", "bias", "mc_std"]
        assert summary["bias"].tolist() == pytest.approx([0.0, 0.1])


class TestRunSimulation:
    """End-to-end replications."""

    def test_single_replication(self) -> None:
        """One replication gives one method row, one oracle row, and the footer."""
        rows, summaries = run_simulation(_plr_config(n=300, reps=1), seed=1)
        assert [row.method for row in rows] == ["plr", ORACLE_METHOD]
        assert rows[0].n_success == 1
        assert rows[0].fit_calls == 6
        assert [summary.n for summary in summaries] == [1, 1]
        assert all(summary.mc_std is None for summary in summaries)

    def test_deterministic(self) -> None:
        """Equal seeds give equal tables; replications draw different data."""
        first, _ = run_simulation(_plr_config(n=200, reps=2), seed=5)
        second, _ = run_simulation(_plr_config(n=200, reps=2), seed=5)
        assert first == second
        assert first[0].estimate != first[2].estimate

    def test_predict_mode_rejected(self) -> None:
        """Predictors have no scalar to summarize."""
        config = _plr_config(n=200, reps=1)
        config.methods[0].target = "identity_pred"
        config.methods[0].nuisances = config.methods[0].nuisances[1:]
        with pytest.raises(CrossfitError) as exc_info:
            run_simulation(config, seed=0)
        assert exc_info.value.code is ErrorCode.CONFIG_ERROR

    def test_csv_source_rejected(self) -> None:
        """Only generator sources can be resampled."""
        config = _plr_config(n=200, reps=1, data={"kind": "csv", "path": "data.csv"})
        with pytest.raises(CrossfitError, match="dgp"):
            run_simulation(config, seed=0)

    def test_allocations_share_folds(self) -> None:
        """The three allocation modes see the same fold assignment per replication."""
        config = _plr_config(n=300, reps=2)
        base = config.methods[0]
        config.methods = [
            base.model_copy(update={"name": str(allocation), "allocation": allocation})
            for allocation in Allocation
        ]
        rows, _ = run_simulation(config, seed=3)
        for replication in (0, 1):
            digests = {
                row.fold_digest
                for row in rows
                if row.replication == replication and row.method != ORACLE_METHOD
            }
            assert len(digests) == 1
        assert rows[0].fold_digest != rows[4].fold_digest

    @pytest.mark.slow
    def test_plr_acceptance(self) -> None:
        """Fifty replications of PLR at n=2000 stay close to theta0 and to the oracle."""
        config = _plr_config(n=2000, reps=50, K=5, repeats=2)
        _, summaries = run_simulation(config, seed=2024)
        by_method = {summary.method: summary for summary in summaries}
        plr, oracle = by_method["plr"], by_method[ORACLE_METHOD]
        assert plr.n == oracle.n == 50
        for summary in (plr, oracle):
            assert summary.mean == pytest.approx(2.0, abs=0.05)
            assert summary.mc_std is not None and summary.mc_std <= 0.15
        assert plr.mc_std <= 2.0 * oracle.mc_std

    @pytest.mark.slow
    def test_allocation_sweep_acceptance(self) -> None:
        """Every allocation of the propensity-augmented graph centres on theta0."""
        config = _plr_config(n=2000, reps=50, K=5)
        base = config.methods[0]
        augmented = base.nuisances[0].model_copy(
            update={
                "learner": base.nuisances[0].learner.model_copy(
                    update={"name": "ridge", "params": {"y": "y", "x": X, "lam": 0.0}}
                ),
                "deps": ["nuis_m"],
            }
        )
        config.methods = [
            base.model_copy(
                update={
                    "name": str(allocation),
                    "allocation": allocation,
                    "nuisances": [augmented, base.nuisances[1]],
                }
            )
            for allocation in Allocation
        ]
        _, summaries = run_simulation(config, seed=7)
        by_method = {summary.method: summary for summary in summaries}
        for allocation in Allocation:
            summary = by_method[str(allocation)]
            assert summary.n == 50
            assert summary.mean == pytest.approx(2.0, abs=0.05)
