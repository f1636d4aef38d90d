"""Panel and repetition aggregators for estimates and cross-fitted predictors."""

from collections.abc import Callable, Sequence
from typing import Any, Protocol

import numpy as np
import numpy.typing as npt

from .errors import CrossfitError, ErrorCode
from .tabular import Dataset

Reducer = Callable[..., npt.NDArray[np.float64]]


class Predictor(Protocol):
    """Anything that maps a dataset to one prediction per row."""

    def __call__(self, data: Dataset) -> npt.NDArray[Any]: ...


def _finite_values(xs: Sequence[float], name: str) -> npt.NDArray[np.float64]:
    """Convert to a float vector, rejecting empty or non-finite input."""
    values: npt.NDArray[np.float64] = np.asarray(xs, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise CrossfitError(ErrorCode.AGGREGATION_ERROR, f"{name}: empty input")
    if not np.all(np.isfinite(values)):
        raise CrossfitError(ErrorCode.AGGREGATION_ERROR, f"{name}: non-finite input")
    return values


def mean_estimate(xs: Sequence[float]) -> float:
    """Arithmetic mean of scalar estimates."""
    return float(np.mean(_finite_values(xs, "mean_estimate")))


def median_estimate(xs: Sequence[float]) -> float:
    """Median of scalar estimates; even lengths average the two middle values."""
    return float(np.median(_finite_values(xs, "median_estimate")))


class EnsemblePredictor:
    """Pointwise reduction (mean or median) over component predictors."""

    def __init__(self, components: Sequence[Predictor], reducer: Reducer, name: str) -> None:
        """Keep the components in input order; summation follows that order."""
        if not components:
            raise CrossfitError(ErrorCode.AGGREGATION_ERROR, f"{name}: empty input")
        self.components: tuple[Predictor, ...] = tuple(components)
        self._reducer: Reducer = reducer
        self._name: str = name

    def __call__(self, data: Dataset) -> npt.NDArray[np.float64]:
        """Apply every component to ``data`` and reduce row by row."""
        outputs: list[npt.NDArray[np.float64]] = [
            np.asarray(component(data), dtype=np.float64).reshape(-1)
            for component in self.components
        ]
        lengths: set[int] = {output.shape[0] for output in outputs}
        if len(lengths) != 1:
            raise CrossfitError(
                ErrorCode.AGGREGATION_ERROR,
                f"{self._name}: component outputs have differing lengths {sorted(lengths)}",
            )
        return self._reducer(np.vstack(outputs), axis=0)

    def __repr__(self) -> str:
        return f"{self._name}({len(self.components)} components)"


def mean_predictor(ps: Sequence[Predictor]) -> EnsemblePredictor:
    """Predictor returning the pointwise mean of ``ps``."""
    return EnsemblePredictor(ps, np.mean, "mean_predictor")


def median_predictor(ps: Sequence[Predictor]) -> EnsemblePredictor:
    """Predictor returning the pointwise median of ``ps``."""
    return EnsemblePredictor(ps, np.median, "median_predictor")


# Registry used by experiment configs: name -> (estimate aggregator, predictor aggregator).
AGGREGATORS: dict[str, tuple[Callable[..., Any], Callable[..., Any]]] = {
    "mean": (mean_estimate, mean_predictor),
    "median": (median_estimate, median_predictor),
}


def aggregator_for(name: str, mode: str) -> Callable[..., Any]:
    """Look up aggregator ``name`` in the flavour matching ``mode``."""
    try:
        estimate, predictor = AGGREGATORS[name]
    except KeyError:
        raise CrossfitError(
            ErrorCode.CONFIG_ERROR,
            f"Unknown aggregator {name!r}; available: {', '.join(AGGREGATORS)}",
        ) from None
    return predictor if mode == "predict" else estimate


def default_aggregators(mode: str) -> tuple[Callable[..., Any], Callable[..., Any]]:
    """Return (panels, repeats) defaults: mean over panels, median over repetitions."""
    return aggregator_for("mean", mode), aggregator_for("median", mode)
