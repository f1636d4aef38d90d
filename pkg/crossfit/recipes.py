"""Target functionals, ready-made methods, and the synthetic partially linear DGP.

Targets take the evaluation rows plus named nuisance predictions. Estimate-mode
targets return a scalar; predict-mode targets return one value per row.
"""

import re
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .constants import (
    DGP_G_COEFS,
    DGP_M_COEFS,
    DGP_N,
    DGP_NOISE_SD,
    DGP_P,
    DGP_THETA0,
    FOLD_COLUMN,
    PROPENSITY_CLIP,
)
from .errors import CrossfitError, ErrorCode
from .folds import Allocation
from .learners import logistic, ols, ridge
from .spec import MethodSpec, Mode, NuisanceSpec, create_method
from .tabular import Dataset

FloatArray = npt.NDArray[np.float64]

TRAINING_GROUP: re.Pattern[str] = re.compile(r"T(\d+(?:,\d+)*)")


def _predictions(predicted: npt.ArrayLike, n_rows: int, name: str) -> FloatArray:
    """Float vector of nuisance predictions, one per evaluation row."""
    values: FloatArray = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if values.shape[0] != n_rows:
        raise CrossfitError(
            ErrorCode.TARGET_ERROR, f"{name}: {values.shape[0]} predictions for {n_rows} rows"
        )
    return values


def _residuals(observed: FloatArray, predicted: npt.ArrayLike, name: str) -> FloatArray:
    """``observed - predicted`` after checking the lengths agree."""
    return observed - _predictions(predicted, observed.shape[0], name)


def plr_target(data: Dataset, nuis_g: npt.ArrayLike, nuis_m: npt.ArrayLike) -> float:
    """Partialling-out estimate ``sum(d~ * y~) / sum(d~^2)`` on the evaluation rows.

    Raises:
        CrossfitError: ``TARGET_ERROR`` when the residualized treatment is all zero.
    """
    y_tilde: FloatArray = _residuals(data.column("y"), nuis_g, "nuis_g")
    d_tilde: FloatArray = _residuals(data.column("d"), nuis_m, "nuis_m")
    denominator: float = float(np.sum(d_tilde**2))
    if denominator <= np.finfo(np.float64).tiny:
        raise CrossfitError(
            ErrorCode.TARGET_ERROR, "Degenerate residualized treatment: sum(d~^2) = 0"
        )
    return float(np.sum(d_tilde * y_tilde)) / denominator


def mse_target(data: Dataset, nuis_y: npt.ArrayLike) -> float:
    """Mean squared residual of ``y`` against ``nuis_y``.

    Raises:
        CrossfitError: ``TARGET_ERROR`` for no rows or a length mismatch.
    """
    if data.n_rows == 0:
        raise CrossfitError(ErrorCode.TARGET_ERROR, "mse_target: no evaluation rows")
    residual: FloatArray = _residuals(data.column("y"), nuis_y, "nuis_y")
    return float(np.mean(residual**2))


def identity_pred_target(data: Dataset, **nuisances: npt.ArrayLike) -> FloatArray:
    """Pass the single nuisance's predictions through unchanged (predict mode)."""
    if len(nuisances) != 1:
        raise CrossfitError(
            ErrorCode.TARGET_ERROR,
            f"identity_pred_target takes exactly one nuisance (got {sorted(nuisances)})",
        )
    (values,) = nuisances.values()
    return np.asarray(values, dtype=np.float64).reshape(-1)


def aipw_target(
    data: Dataset,
    nuis_mu1: npt.ArrayLike,
    nuis_mu0: npt.ArrayLike,
    nuis_m: npt.ArrayLike,
) -> float:
    """Augmented inverse-propensity-weighted average treatment effect.

    Propensities are clipped to ``[PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]``.
    """
    y: FloatArray = data.column("y")
    d: FloatArray = data.column("d")
    if data.n_rows == 0:
        raise CrossfitError(ErrorCode.TARGET_ERROR, "aipw_target: no evaluation rows")
    mu1: FloatArray = _predictions(nuis_mu1, data.n_rows, "nuis_mu1")
    mu0: FloatArray = _predictions(nuis_mu0, data.n_rows, "nuis_mu0")
    propensity: FloatArray = np.clip(
        _predictions(nuis_m, data.n_rows, "nuis_m"), PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP
    )
    score: FloatArray = (
        mu1 - mu0 + d * (y - mu1) / propensity - (1.0 - d) * (y - mu0) / (1.0 - propensity)
    )
    return float(np.mean(score))


def t_learner_target(
    data: Dataset, nuis_mu1: npt.ArrayLike, nuis_mu0: npt.ArrayLike
) -> FloatArray:
    """Conditional effect ``mu1 - mu0`` per row (predict mode)."""
    return np.asarray(nuis_mu1, dtype=np.float64) - np.asarray(nuis_mu0, dtype=np.float64)


def _leaked_traces(data: Dataset, traces: dict[str, npt.ArrayLike]) -> list[str]:
    """Trace strings whose training folds include the row's own fold."""
    folds: list[int] = data.column(FOLD_COLUMN).astype(np.int64).tolist()
    leaked: list[str] = []
    for values in traces.values():
        for fold, text in zip(folds, np.asarray(values).tolist(), strict=True):
            for group in TRAINING_GROUP.findall(str(text)):
                if fold in {int(part) for part in group.split(",")}:
                    leaked.append(f"{text} (row fold {fold})")
    return leaked


def trace_target(data: Dataset, **traces: npt.ArrayLike) -> float:
    """Assert that no training-fold set in any trace contains the row's fold.

    Returns 0.0 when the evaluation rows are clean.

    Raises:
        CrossfitError: ``LEAKAGE_DETECTED`` naming the first offending traces.
    """
    leaked: list[str] = _leaked_traces(data, traces)
    if leaked:
        raise CrossfitError(
            ErrorCode.LEAKAGE_DETECTED,
            f"Evaluation fold used in training: {leaked[:3]}",
            {"count": len(leaked)},
        )
    return 0.0


def trace_pred_target(data: Dataset, **traces: npt.ArrayLike) -> FloatArray:
    """Predict-mode counterpart of ``trace_target``: zeros per row when clean."""
    trace_target(data, **traces)
    return np.zeros(data.n_rows, dtype=np.float64)


class PLRParams(BaseModel):
    """Parameters of the partially linear data-generating process.

    ``Y = theta0 * D + X @ g_coefs + U`` with ``X`` standard normal,
    ``D ~ Bernoulli(logistic(X @ m_coefs))`` and ``U ~ Normal(0, noise_sd^2)``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    theta0: float = DGP_THETA0
    g_coefs: tuple[float, ...] = DGP_G_COEFS
    m_coefs: tuple[float, ...] = DGP_M_COEFS
    n: int = Field(DGP_N, ge=10)
    p: int = Field(DGP_P, ge=1)
    noise_sd: float = Field(DGP_NOISE_SD, ge=0.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _coefficients_match_p(self) -> "PLRParams":
        """Both coefficient vectors have one entry per covariate."""
        for name in ("g_coefs", "m_coefs"):
            if len(getattr(self, name)) != self.p:
                raise ValueError(f"{name} must have p={self.p} entries")
        return self


def covariate_names(p: int) -> tuple[str, ...]:
    """Column names ``x1 .. xp``."""
    return tuple(f"x{index + 1}" for index in range(p))


def dgp_plr(params: PLRParams) -> Dataset:
    """Draw one dataset with columns ``y, d, x1 .. xp``; deterministic given ``seed``."""
    rng: np.random.Generator = np.random.default_rng(params.seed)
    X: FloatArray = rng.standard_normal((params.n, params.p))
    propensity: FloatArray = _logistic(X @ np.asarray(params.m_coefs))
    d: FloatArray = (rng.random(params.n) < propensity).astype(np.float64)
    noise: FloatArray = rng.normal(0.0, params.noise_sd, params.n)
    y: FloatArray = params.theta0 * d + X @ np.asarray(params.g_coefs) + noise
    columns: dict[str, FloatArray] = {"y": y, "d": d}
    for name, values in zip(covariate_names(params.p), X.T, strict=True):
        columns[name] = values
    return Dataset(columns)


def _logistic(eta: FloatArray) -> FloatArray:
    """Plain logistic function for data generation."""
    return 1.0 / (1.0 + np.exp(-eta))


def plr_oracle(data: Dataset, params: PLRParams) -> float:
    """Full-information estimate: through-origin OLS of ``y - X g`` on ``d - m(X)``."""
    X: FloatArray = data.matrix(covariate_names(params.p))
    y_tilde: FloatArray = data.column("y") - X @ np.asarray(params.g_coefs)
    d_tilde: FloatArray = data.column("d") - _logistic(X @ np.asarray(params.m_coefs))
    return float(np.sum(d_tilde * y_tilde) / np.sum(d_tilde**2))


def ps_augmented_outcome_nuisance(
    x: Sequence[str],
    id: str = "nuis_g_ps",
    y: str = "y",
    dep: str = "nuis_m",
    lam: float = 0.0,
    train_fold: int = 1,
) -> NuisanceSpec:
    """Outcome regression that also uses the propensity prediction as a regressor.

    The node declares ``dep`` as a dependency, so the method graph gains the
    edge ``dep -> id`` and both ``fit`` and ``predict`` receive the propensity
    predictions on the rows they touch.
    """
    return ridge(y, x, lam).nuisance(id, train_fold=train_fold, deps=(dep,))


def plr_method(
    x: Sequence[str],
    K: int = 5,
    repeats: int = 1,
    allocation: Allocation | str = Allocation.OVERLAP,
    train_fold: int = 1,
    max_fail: int | None = None,
) -> MethodSpec:
    """Double machine learning for the partially linear model.

    OLS outcome nuisance ``nuis_g`` of ``y`` on ``x`` and logistic propensity
    nuisance ``nuis_m`` of ``d`` on ``x``.
    """
    nuisances: dict[str, NuisanceSpec] = {
        "nuis_g": ols("y", x).nuisance("nuis_g", train_fold=train_fold),
        "nuis_m": logistic("d", x).nuisance("nuis_m", train_fold=train_fold),
    }
    return create_method(
        plr_target, nuisances, K=K, repeats=repeats, allocation=allocation, max_fail=max_fail
    )


def ps_augmented_plr_method(
    x: Sequence[str],
    K: int = 5,
    repeats: int = 1,
    allocation: Allocation | str = Allocation.OVERLAP,
    train_fold: int = 1,
) -> MethodSpec:
    """PLR whose outcome nuisance consumes the propensity nuisance (triangle graph)."""
    nuisances: dict[str, NuisanceSpec] = {
        "nuis_g": ps_augmented_outcome_nuisance(x, id="nuis_g", train_fold=train_fold),
        "nuis_m": logistic("d", x).nuisance("nuis_m", train_fold=train_fold),
    }
    return create_method(plr_target, nuisances, K=K, repeats=repeats, allocation=allocation)


def propensity_method(
    x: Sequence[str], K: int = 5, repeats: int = 1, eval_fold: int = 0
) -> MethodSpec:
    """Predict-mode method returning a cross-fitted propensity-score predictor."""
    nuisances: dict[str, NuisanceSpec] = {"nuis_m": logistic("d", x).nuisance("nuis_m")}
    return create_method(
        identity_pred_target,
        nuisances,
        K=K,
        repeats=repeats,
        eval_fold=eval_fold,
        mode=Mode.PREDICT,
    )


def aipw_method(x: Sequence[str], K: int = 5, repeats: int = 1) -> MethodSpec:
    """AIPW average treatment effect with arm-specific OLS outcome models."""
    nuisances: dict[str, NuisanceSpec] = {
        "nuis_mu1": ols("y", x, subset=("d", 1.0)).nuisance("nuis_mu1"),
        "nuis_mu0": ols("y", x, subset=("d", 0.0)).nuisance("nuis_mu0"),
        "nuis_m": logistic("d", x).nuisance("nuis_m"),
    }
    return create_method(aipw_target, nuisances, K=K, repeats=repeats)


# Target registry used by experiment configs: name -> (function, natural mode).
TARGETS: dict[str, tuple[Callable[..., Any], Mode]] = {
    "plr": (plr_target, Mode.ESTIMATE),
    "mse": (mse_target, Mode.ESTIMATE),
    "aipw": (aipw_target, Mode.ESTIMATE),
    "trace": (trace_target, Mode.ESTIMATE),
    "identity_pred": (identity_pred_target, Mode.PREDICT),
    "t_learner": (t_learner_target, Mode.PREDICT),
    "trace_pred": (trace_pred_target, Mode.PREDICT),
}


def target_for(name: str) -> Callable[..., Any]:
    """Look up a registered target function.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` for an unknown name.
    """
    try:
        return TARGETS[name][0]
    except KeyError:
        raise CrossfitError(
            ErrorCode.CONFIG_ERROR,
            f"Unknown target {name!r}; available: {', '.join(TARGETS)}",
        ) from None


Generator = Callable[[PLRParams], Dataset]
Oracle = Callable[[Dataset, PLRParams], float]

# Synthetic data generators: name -> (parameter model, generator, oracle).
DGPS: dict[str, tuple[type[PLRParams], Generator, Oracle]] = {
    "plr": (PLRParams, dgp_plr, plr_oracle),
}
