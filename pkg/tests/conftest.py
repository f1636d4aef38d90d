"""Shared fixtures for the crossfit test suite."""

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from crossfit.constants import FOLD_COLUMN
from crossfit.learners import constant, trace
from crossfit.recipes import PLRParams, dgp_plr
from crossfit.spec import NuisanceSpec
from crossfit.tabular import Dataset


def round_robin_labels(n: int, K: int) -> np.ndarray:
    """Fold labels ``0, 1, ..., K-1, 0, 1, ...`` for ``n`` rows."""
    return np.arange(n) % K


@pytest.fixture()
def constant_data() -> Dataset:
    """Twenty rows where ``y`` is identically 3 and ``x1`` varies."""
    return Dataset({"y": np.full(20, 3.0), "x1": np.linspace(-1.0, 1.0, 20)})


@pytest.fixture()
def plr_data() -> Dataset:
    """A small draw (n=400) from the default partially linear DGP."""
    return dgp_plr(PLRParams(n=400, seed=7))


@pytest.fixture()
def trace_data() -> Callable[[int, int], Dataset]:
    """Factory for datasets with an embedded round-robin fold column."""

    def _make(n: int, K: int) -> Dataset:
        """Rows ``0..n-1`` labelled ``i % K`` in the fold column."""
        return Dataset(
            {
                "y": np.arange(n, dtype=np.float64),
                FOLD_COLUMN: round_robin_labels(n, K).astype(np.float64),
            }
        )

    return _make


@pytest.fixture()
def triangle() -> Callable[..., dict[str, NuisanceSpec]]:
    """Factory for the triangle graph: target <- nui1, nui2; nui1 <- nui2."""

    def _make(width: int = 1, learner: str = "constant") -> dict[str, NuisanceSpec]:
        """Both nodes share ``width``; ``learner`` is ``constant`` or ``trace``."""
        make = trace if learner == "trace" else (lambda: constant(1.0))
        return {
            "nui1": make().nuisance("nui1", train_fold=width, deps=("nui2",)),
            "nui2": make().nuisance("nui2", train_fold=width),
        }

    return _make


@pytest.fixture()
def write_config(tmp_path: Path) -> Callable[[dict[str, Any]], Path]:
    """Factory that writes an experiment config dict to ``tmp_path`` and returns its path."""

    def _write(body: dict[str, Any], name: str = "experiment.json") -> Path:
        """Serialize ``body`` as JSON."""
        path: Path = tmp_path / name
        path.write_text(json.dumps(body), encoding="utf-8")
        return path

    return _write
