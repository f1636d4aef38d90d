"""Built-in deterministic learners for nuisance nodes.

Every learner is a ``Learner``: a ``fit(data, **deps)`` / ``predict(model, data,
**deps)`` pair plus a structural token built from its parameters, so two nodes
created from the same parameters share cache entries. Dependency predictions
reaching a linear or logistic learner are appended to its design as extra
regressors named after the dependency.
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from .constants import (
    FOLD_COLUMN,
    IRLS_MAX_ITER,
    IRLS_RIDGE_EPS,
    IRLS_TOL,
    PROBABILITY_FLOOR,
    RANK_JITTER,
)
from .errors import CrossfitError, ErrorCode
from .logging_config import get_logger
from .spec import NuisanceSpec, create_nuisance
from .tabular import Dataset

logger = get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
Subset = tuple[str, float]


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``intercept + X @ coefficients`` over ``feature_names``."""

    coefficients: FloatArray
    intercept: float
    feature_names: tuple[str, ...]
    rank_deficient: bool = False

    def predict(self, data: Dataset) -> FloatArray:
        """Linear predictor on every row of ``data``."""
        return self.intercept + data.matrix(self.feature_names) @ self.coefficients


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Logistic regression fitted by IRLS; ``predict`` returns P(y=1)."""

    coefficients: FloatArray
    intercept: float
    feature_names: tuple[str, ...]
    converged: bool
    iterations: int

    def decision_function(self, data: Dataset) -> FloatArray:
        """Linear index ``intercept + X @ coefficients``."""
        return self.intercept + data.matrix(self.feature_names) @ self.coefficients

    def predict(self, data: Dataset) -> FloatArray:
        """Class-1 probabilities, strictly inside (0, 1)."""
        return sigmoid(self.decision_function(data))


def sigmoid(eta: npt.ArrayLike) -> FloatArray:
    """Overflow-free logistic function, clipped away from 0 and 1."""
    values: FloatArray = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(eta, dtype=np.float64)))
    return np.clip(values, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


def _design(data: Dataset, y_col: str, x_cols: Sequence[str]) -> tuple[FloatArray, FloatArray]:
    """Extract the response vector and feature matrix; zero rows is an error."""
    if data.n_rows == 0:
        raise CrossfitError(ErrorCode.LEARNER_ERROR, "Cannot fit on zero rows")
    return data.matrix(x_cols), data.column(y_col)


def ridge_fit(data: Dataset, y_col: str, x_cols: Sequence[str], lam: float) -> LinearModel:
    """Minimize ``||y - Xb - c||^2 + lam * ||b||^2`` with the intercept ``c`` unpenalized.

    Solved on centred data through the normal equations. When ``lam`` is zero
    and the centred Gram matrix is rank deficient a jitter of ``RANK_JITTER`` is
    added and the model is flagged ``rank_deficient``.

    Raises:
        CrossfitError: ``LEARNER_ERROR`` for zero rows or a negative ``lam``.
    """
    if lam < 0:
        raise CrossfitError(ErrorCode.LEARNER_ERROR, f"Ridge penalty must be >= 0 (got {lam})")
    features: tuple[str, ...] = tuple(x_cols)
    X, y = _design(data, y_col, features)
    y_mean: float = float(np.mean(y))
    if not features:
        return LinearModel(np.zeros(0, dtype=np.float64), y_mean, features)

    x_mean: FloatArray = X.mean(axis=0)
    centred: FloatArray = X - x_mean
    gram: FloatArray = centred.T @ centred
    penalty: float = float(lam)
    rank_deficient: bool = False
    if penalty == 0.0 and np.linalg.matrix_rank(gram) < len(features):
        rank_deficient = True
        penalty = RANK_JITTER
        logger.warning("rank_deficient_design", features=list(features), n_rows=data.n_rows)

    coefficients: FloatArray = np.linalg.solve(
        gram + penalty * np.eye(len(features)), centred.T @ (y - y_mean)
    )
    intercept: float = y_mean - float(x_mean @ coefficients)
    return LinearModel(coefficients, intercept, features, rank_deficient)


def ols_fit(data: Dataset, y_col: str, x_cols: Sequence[str]) -> LinearModel:
    """Least squares with intercept; rank deficiency falls back to a tiny ridge."""
    return ridge_fit(data, y_col, x_cols, 0.0)


def logistic_fit(
    data: Dataset,
    y_col: str,
    x_cols: Sequence[str],
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
    ridge_eps: float = IRLS_RIDGE_EPS,
) -> LogisticModel:
    """Fit a logistic regression by iteratively reweighted least squares.

    Newton steps on the log-likelihood with an ``ridge_eps / 2 * ||beta||^2``
    penalty on every parameter (intercept included), starting from zero. Stops
    when ``max |step| < tol`` or after ``max_iter`` iterations.

    Raises:
        CrossfitError: ``LEARNER_ERROR`` for zero rows or labels outside {0, 1}.
    """
    features: tuple[str, ...] = tuple(x_cols)
    X, y = _design(data, y_col, features)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise CrossfitError(
            ErrorCode.LEARNER_ERROR, f"Logistic response {y_col!r} must be 0/1", {"column": y_col}
        )

    design: FloatArray = np.column_stack([np.ones(X.shape[0]), X])
    beta: FloatArray = np.zeros(design.shape[1], dtype=np.float64)
    identity: FloatArray = np.eye(design.shape[1])
    converged: bool = False
    iterations: int = 0
    for iterations in range(1, max_iter + 1):
        mu: FloatArray = sigmoid(design @ beta)
        weights: FloatArray = mu * (1.0 - mu)
        hessian: FloatArray = design.T @ (design * weights[:, None]) + ridge_eps * identity
        gradient: FloatArray = design.T @ (y - mu) - ridge_eps * beta
        step: FloatArray = np.linalg.solve(hessian, gradient)
        beta = beta + step
        if float(np.max(np.abs(step))) < tol:
            converged = True
            break

    if not converged:
        logger.warning("irls_not_converged", response=y_col, iterations=iterations)
    return LogisticModel(beta[1:].copy(), float(beta[0]), features, converged, iterations)


@dataclass(frozen=True, eq=False)
class Learner:
    """A fit/predict pair usable as a nuisance node, with its structural token."""

    name: str
    fit: Callable[..., Any]
    predict: Callable[..., Any]
    token: str

    def nuisance(self, id: str, train_fold: int = 1, deps: Sequence[str] = ()) -> NuisanceSpec:
        """Wrap the learner into a ``NuisanceSpec``."""
        return create_nuisance(id, self.fit, self.predict, train_fold, deps, token=self.token)


def _augment(data: Dataset, deps: Mapping[str, npt.ArrayLike]) -> Dataset:
    """Add dependency predictions as columns named after the dependency."""
    if not deps:
        return data
    return data.with_columns({name: np.asarray(values, dtype=np.float64) for name, values in deps.items()})


def _restrict(data: Dataset, subset: Subset | None) -> Dataset:
    """Keep only rows where ``subset[0] == subset[1]``."""
    if subset is None:
        return data
    name, value = subset
    return data.select_rows(np.flatnonzero(data.column(name) == value))


def _token(name: str, **params: Any) -> str:
    """Stable text identity of a parametrized learner."""
    fields: str = ",".join(f"{key}={value!r}" for key, value in params.items())
    return f"{name}({fields})"


def ridge(
    y: str = "y", x: Sequence[str] = (), lam: float = 1.0, subset: Subset | None = None
) -> Learner:
    """Ridge regression of ``y`` on ``x`` plus any dependency predictions."""
    features: tuple[str, ...] = tuple(x)
    if lam < 0:
        raise CrossfitError(ErrorCode.LEARNER_ERROR, f"Ridge penalty must be >= 0 (got {lam})")

    def fit(data: Dataset, **deps: npt.ArrayLike) -> LinearModel:
        """Fit on the (optionally restricted) training rows."""
        augmented: Dataset = _restrict(_augment(data, deps), subset)
        return ridge_fit(augmented, y, (*features, *deps), lam)

    def predict(model: LinearModel, data: Dataset, **deps: npt.ArrayLike) -> FloatArray:
        """Predict on every row of ``data``."""
        return model.predict(_augment(data, deps))

    name: str = "ols" if lam == 0 else "ridge"
    return Learner(name, fit, predict, _token(name, y=y, x=features, lam=float(lam), subset=subset))


def ols(y: str = "y", x: Sequence[str] = (), subset: Subset | None = None) -> Learner:
    """Least-squares regression of ``y`` on ``x`` plus any dependency predictions."""
    return ridge(y, x, 0.0, subset)


def logistic(
    y: str = "d",
    x: Sequence[str] = (),
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
    ridge_eps: float = IRLS_RIDGE_EPS,
    subset: Subset | None = None,
) -> Learner:
    """Logistic regression of binary ``y`` on ``x``; predictions are probabilities."""
    features: tuple[str, ...] = tuple(x)

    def fit(data: Dataset, **deps: npt.ArrayLike) -> LogisticModel:
        """IRLS on the (optionally restricted) training rows."""
        augmented: Dataset = _restrict(_augment(data, deps), subset)
        return logistic_fit(augmented, y, (*features, *deps), max_iter, tol, ridge_eps)

    def predict(model: LogisticModel, data: Dataset, **deps: npt.ArrayLike) -> FloatArray:
        """Class-1 probabilities on every row of ``data``."""
        return model.predict(_augment(data, deps))

    token: str = _token(
        "logistic", y=y, x=features, max_iter=max_iter, tol=tol, ridge_eps=ridge_eps, subset=subset
    )
    return Learner("logistic", fit, predict, token)


def constant(c: float = 0.0) -> Learner:
    """Ignore the data and predict ``c`` for every row."""
    value: float = float(c)

    def fit(data: Dataset, **deps: npt.ArrayLike) -> float:
        """The model is the constant itself."""
        return value

    def predict(model: float, data: Dataset, **deps: npt.ArrayLike) -> FloatArray:
        """``model`` repeated once per row."""
        return np.full(data.n_rows, model, dtype=np.float64)

    return Learner("constant", fit, predict, _token("constant", c=value))


def _fold_labels(data: Dataset, fold_column: str) -> npt.NDArray[np.int64]:
    """Integer fold labels embedded in ``data``."""
    if fold_column not in data:
        raise CrossfitError(
            ErrorCode.LEARNER_ERROR,
            f"Trace learner needs the fold column {fold_column!r}",
            {"column": fold_column},
        )
    return data.column(fold_column).astype(np.int64)


def trace(fold_column: str = FOLD_COLUMN) -> Learner:
    """Learner whose outputs record which folds were trained on and predicted.

    ``fit`` returns ``"T<sorted training folds>"`` followed by ``[...]`` with the
    distinct dependency traces seen in training, one group per dependency.
    ``predict`` returns ``"<model>|P<row fold>"`` per row followed by each
    dependency's trace for that row in ``<...>``.
    """

    def fit(data: Dataset, **deps: npt.ArrayLike) -> str:
        """Summarize training folds and upstream traces into one token."""
        folds: list[int] = sorted({int(label) for label in _fold_labels(data, fold_column)})
        token: str = "T" + ",".join(str(fold) for fold in folds)
        for name in sorted(deps):
            upstream: list[str] = sorted({str(value) for value in np.asarray(deps[name]).tolist()})
            token += "[" + ";".join(upstream) + "]"
        return token

    def predict(model: str, data: Dataset, **deps: npt.ArrayLike) -> npt.NDArray[np.str_]:
        """One trace string per row."""
        labels: npt.NDArray[np.int64] = _fold_labels(data, fold_column)
        upstream: list[list[str]] = [
            [str(value) for value in np.asarray(deps[name]).tolist()] for name in sorted(deps)
        ]
        rows: list[str] = []
        for position, label in enumerate(labels.tolist()):
            suffix: str = "".join(f"<{values[position]}>" for values in upstream)
            rows.append(f"{model}|P{label}{suffix}")
        return np.asarray(rows, dtype=np.str_)

    return Learner("trace", fit, predict, _token("trace", fold_column=fold_column))


# Learner registry used by experiment configs: name -> factory(**params).
LEARNERS: dict[str, Callable[..., Learner]] = {
    "ols": ols,
    "ridge": ridge,
    "logistic": logistic,
    "constant": constant,
    "trace": trace,
}


def learner_for(name: str, params: Mapping[str, Any] | None = None) -> Learner:
    """Build registry learner ``name`` from keyword ``params``.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` for an unknown name or bad parameters.
    """
    try:
        factory: Callable[..., Learner] = LEARNERS[name]
    except KeyError:
        raise CrossfitError(
            ErrorCode.CONFIG_ERROR,
            f"Unknown learner {name!r}; available: {', '.join(LEARNERS)}",
        ) from None
    try:
        return factory(**dict(params or {}))
    except TypeError as exc:
        raise CrossfitError(ErrorCode.CONFIG_ERROR, f"Learner {name!r}: {exc}") from None
