"""Cross-fitting execution: schedule, fit, predict, evaluate, aggregate.

For every repetition the rows are split into ``K`` folds and ``K`` panels are
run. A panel fits each nuisance instance on its allocated training window
(dependencies first, through the repetition's ``FitCache``), predicts the
target-level nuisances on the evaluation rows, and evaluates the target. Panel
values are aggregated into a repetition value and successful repetition values
into the final result.

Any exception raised by a learner, a predict call, the target or the panel
aggregator fails the whole repetition. It is logged and recorded in
``RunResult.errors`` and never escapes ``crossfit``. Specification problems
(an invalid method, a splitter returning a bad assignment) still raise.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt

from .cache import CacheStats, FitCache, InstanceKey, instance_key
from .config import resolve_seed
from .errors import CrossfitError, ErrorCode, SpecificationError
from .folds import (
    FoldAssignment,
    NuisanceInstance,
    PanelAllocation,
    Window,
    allocate,
    as_fold_assignment,
    default_fold_split,
    postorder,
    target_roots,
)
from .logging_config import get_logger
from .spec import MethodSpec, Mode, NuisanceSpec, ValidationReport, validate_method
from .tabular import Dataset

logger = get_logger(__name__)

DEFAULT_METHOD_NAME: str = "method"


@dataclass(frozen=True)
class FailureRecord:
    """Where and why a repetition failed.

    ``panel`` is ``None`` for failures outside a panel (repetition aggregation).
    ``where`` is ``fit:<instance>``, ``predict:<instance>``, ``target`` or
    ``aggregate_panels``/``aggregate_repeats``.
    """

    rep: int | None
    panel: int | None
    where: str
    message: str
    code: str | None = None

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON shape ``{rep, panel, where, message, code}``."""
        return {
            "rep": self.rep,
            "panel": self.panel,
            "where": self.where,
            "message": self.message,
            "code": self.code,
        }


@dataclass
class RunResult:
    """Outcome of one method: final value, per-repetition values, counters, errors.

    ``estimate`` is a float in estimate mode and a predictor in predict mode; it
    is ``None`` exactly when no repetition succeeded.
    """

    mode: Mode
    estimate: Any | None
    per_repetition: list[Any] = field(default_factory=list)
    n_success: int = 0
    n_fail: int = 0
    errors: list[FailureRecord] = field(default_factory=list)
    fit_calls: int = 0
    cache_hits: int = 0
    fit_calls_by_node: dict[str, int] = field(default_factory=dict)
    cache_hits_by_node: dict[str, int] = field(default_factory=dict)
    fold_digests: list[str] = field(default_factory=list)

    @property
    def predictor(self) -> Any | None:
        """The final cross-fitted predictor (predict mode only)."""
        return self.estimate if self.mode is Mode.PREDICT else None

    def to_payload(self, data: Dataset | None = None) -> dict[str, Any]:
        """Return a JSON-serializable summary.

        In predict mode ``estimate`` is ``null``; when ``data`` is given the final
        and per-repetition predictors are evaluated on it under ``predictions``
        and ``per_repetition``. A predictor that raises leaves both ``null`` and
        appends a ``predict`` entry to ``errors``.
        """
        payload: dict[str, Any] = {
            "mode": str(self.mode),
            "n_success": self.n_success,
            "n_fail": self.n_fail,
            "fit_calls": self.fit_calls,
            "cache_hits": self.cache_hits,
            "fit_calls_by_node": dict(sorted(self.fit_calls_by_node.items())),
            "cache_hits_by_node": dict(sorted(self.cache_hits_by_node.items())),
            "fold_digests": list(self.fold_digests),
            "errors": [error.to_dict() for error in self.errors],
        }
        if self.mode is Mode.ESTIMATE:
            payload["estimate"] = None if self.estimate is None else float(self.estimate)
            payload["per_repetition"] = [float(value) for value in self.per_repetition]
            return payload

        payload["estimate"] = None
        if data is None:
            payload["per_repetition"] = [None for _ in self.per_repetition]
            payload["predictions"] = None
            return payload
        try:
            per_repetition: list[list[float]] = [
                _predict_list(value, data) for value in self.per_repetition
            ]
            predictions: list[float] | None = (
                None if self.estimate is None else _predict_list(self.estimate, data)
            )
        except Exception as exc:
            failure = FailureRecord(
                rep=None,
                panel=None,
                where="predict",
                message=f"{type(exc).__name__}: {exc}",
                code=str(exc.code) if isinstance(exc, CrossfitError) else None,
            )
            logger.warning("predictor_failed", where=failure.where, message=failure.message)
            payload["errors"].append(failure.to_dict())
            payload["per_repetition"] = [None for _ in self.per_repetition]
            payload["predictions"] = None
            return payload
        payload["per_repetition"] = per_repetition
        payload["predictions"] = predictions
        return payload


def _predict_list(predictor: Any, data: Dataset) -> list[float]:
    """Evaluate a predictor on ``data`` as a plain float list."""
    return [float(value) for value in np.asarray(predictor(data), dtype=np.float64).reshape(-1)]


class ComponentFailure(Exception):
    """A learner, target or aggregator failure inside a repetition."""

    def __init__(self, where: str, cause: BaseException) -> None:
        """Keep the failing component and the original exception."""
        self.where: str = where
        self.cause: BaseException = cause
        self.code: str | None = str(cause.code) if isinstance(cause, CrossfitError) else None
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")

    @property
    def message(self) -> str:
        """Exception type and text of the cause."""
        return f"{type(self.cause).__name__}: {self.cause}"


@dataclass(frozen=True)
class PanelPlan:
    """One panel's allocation and the cache key of every instance in it."""

    allocation: PanelAllocation
    keys: Mapping[NuisanceInstance, InstanceKey]


@dataclass(frozen=True)
class MethodPlan:
    """A method's repetition schedule, identical for every repetition.

    ``roots`` maps each target argument to the instance it receives; ``instances``
    is the packing (dependencies-first) order.
    """

    roots: Mapping[str, NuisanceInstance]
    instances: Sequence[NuisanceInstance]
    panels: Sequence[PanelPlan]

    def keys(self) -> list[InstanceKey]:
        """Every fit request of one repetition, in execution order."""
        return [panel.keys[instance] for panel in self.panels for instance in self.instances]


def plan_method(method: MethodSpec) -> MethodPlan:
    """Allocate all ``K`` panels and key every instance request.

    Roots and packing order come from one expansion, so the instances the
    target receives are the very objects that were allocated.
    """
    roots: dict[str, NuisanceInstance] = target_roots(method)
    instances: list[NuisanceInstance] = postorder(roots.values())
    panels: list[PanelPlan] = []
    for p in range(method.K):
        allocation: PanelAllocation = allocate(
            method.allocation, instances, p, method.eval_fold, method.K
        )
        memo: dict[int, InstanceKey] = {}
        keys: dict[NuisanceInstance, InstanceKey] = {
            instance: instance_key(instance, allocation.training, method.nuisances, memo)
            for instance in instances
        }
        panels.append(PanelPlan(allocation, keys))
    return MethodPlan(roots, instances, panels)


def predict_instance(
    instance: NuisanceInstance,
    models: Mapping[NuisanceInstance, Any],
    rows: npt.ArrayLike | None,
    data: Dataset,
    nuisances: Mapping[str, NuisanceSpec],
) -> npt.NDArray[Any]:
    """Predict ``instance`` on ``rows`` of ``data`` (all rows when ``rows`` is None).

    Dependency predictions on the same rows are computed first and passed to
    the node's ``predict`` under their dependency names.

    Raises:
        ComponentFailure: When a ``predict`` call raises or returns the wrong length.
    """
    subset: Dataset = data if rows is None else data.select_rows(np.asarray(rows, dtype=np.intp))
    spec: NuisanceSpec = nuisances[instance.node_id]
    dep_predictions: dict[str, npt.NDArray[Any]] = {
        name: predict_instance(dep, models, None, subset, nuisances)
        for name, dep in zip(spec.deps, instance.deps, strict=True)
    }
    where: str = f"predict:{instance.label}"
    try:
        values: npt.NDArray[Any] = np.asarray(
            spec.predict(models[instance], subset, **dep_predictions)
        )
    except Exception as exc:
        raise ComponentFailure(where, exc) from exc
    if values.ndim != 1 or values.shape[0] != subset.n_rows:
        raise ComponentFailure(
            where,
            CrossfitError(
                ErrorCode.LEARNER_ERROR,
                f"predict returned shape {values.shape} for {subset.n_rows} rows",
            ),
        )
    return values


def fit_instance(
    instance: NuisanceInstance,
    window: Window,
    folds: FoldAssignment,
    data: Dataset,
    cache: FitCache,
    key: InstanceKey,
    models: Mapping[NuisanceInstance, Any],
    nuisances: Mapping[str, NuisanceSpec],
    stats: CacheStats,
) -> tuple[Any, InstanceKey]:
    """Return the model of ``instance`` trained on ``window``, fitting only on a cache miss.

    On a miss the training rows are the rows whose fold lies in ``window``; the
    dependencies (already present in ``models``) are predicted on those rows
    and passed to the node's ``fit``.

    Raises:
        ComponentFailure: When the node's ``fit`` or a dependency prediction raises.
    """
    spec: NuisanceSpec = nuisances[instance.node_id]

    def fit() -> Any:
        """Gather the training rows and call the node's ``fit``."""
        train: Dataset = data.select_rows(folds.rows_in(window.folds))
        dep_predictions: dict[str, npt.NDArray[Any]] = {
            name: predict_instance(dep, models, None, train, nuisances)
            for name, dep in zip(spec.deps, instance.deps, strict=True)
        }
        try:
            model: Any = spec.fit(train, **dep_predictions)
        except Exception as exc:
            raise ComponentFailure(f"fit:{instance.label}", exc) from exc
        logger.debug(
            "nuisance_fit",
            instance=instance.label,
            window=list(window.folds),
            n_train=train.n_rows,
        )
        return model

    return cache.fetch(key, fit, stats), key


class PanelPredictor:
    """Target evaluated on nuisance predictions from one panel's fitted models."""

    def __init__(
        self,
        method: MethodSpec,
        roots: Mapping[str, NuisanceInstance],
        models: Mapping[NuisanceInstance, Any],
        panel: int,
    ) -> None:
        """Hold the panel's fitted models; they are never refitted."""
        self._method: MethodSpec = method
        self._roots: dict[str, NuisanceInstance] = dict(roots)
        self._models: dict[NuisanceInstance, Any] = dict(models)
        self.panel: int = panel

    def __call__(self, data: Dataset) -> npt.NDArray[np.float64]:
        """Predict every target-level nuisance on ``data`` and apply the target.

        Raises:
            CrossfitError: ``UNKNOWN_COLUMN`` when ``data`` lacks a column a
                learner needs; other learner errors surface unchanged.
        """
        try:
            predictions: dict[str, npt.NDArray[Any]] = {
                arg: predict_instance(root, self._models, None, data, self._method.nuisances)
                for arg, root in self._roots.items()
            }
        except ComponentFailure as failure:
            raise failure.cause from None
        return np.asarray(self._method.target(data, **predictions), dtype=np.float64).reshape(-1)

    def __repr__(self) -> str:
        return f"PanelPredictor(panel={self.panel}, nuisances={list(self._roots)})"


def build_panel_predictor(
    method: MethodSpec,
    roots: Mapping[str, NuisanceInstance],
    models: Mapping[NuisanceInstance, Any],
    panel: int = 0,
) -> PanelPredictor:
    """Wrap one panel's fitted models into a predictor for new data."""
    return PanelPredictor(method, roots, models, panel)


def _scalar(value: Any) -> float:
    """Coerce a target's return value to a finite float."""
    array: npt.NDArray[np.float64] = np.asarray(value, dtype=np.float64)
    if array.size != 1:
        raise CrossfitError(
            ErrorCode.TARGET_ERROR, f"target returned {array.size} values, expected a scalar"
        )
    scalar: float = float(array.reshape(()))
    if not np.isfinite(scalar):
        raise CrossfitError(ErrorCode.TARGET_ERROR, f"target returned non-finite value {scalar}")
    return scalar


def _check_row_values(value: Any, n_rows: int) -> None:
    """A predict-mode target must return one value per row."""
    size: int = np.asarray(value).size
    if size != n_rows:
        raise CrossfitError(
            ErrorCode.TARGET_ERROR, f"target returned {size} values for {n_rows} rows"
        )


def run_panel(
    data: Dataset,
    method: MethodSpec,
    plan: MethodPlan,
    panel: PanelPlan,
    folds: FoldAssignment,
    cache: FitCache,
    stats: CacheStats,
    pending: list[InstanceKey],
) -> Any:
    """Fit the panel's instances and return its value (scalar or ``PanelPredictor``).

    Each consumed key is removed from ``pending`` so a failing repetition can
    cancel exactly the requests it never made. In predict mode the predictor is
    exercised once on the reserved eval rows (zero rows when ``eval_fold`` is 0)
    so that predict and target failures fail the repetition here.
    """
    models: dict[NuisanceInstance, Any] = {}
    for instance in plan.instances:
        key: InstanceKey = panel.keys[instance]
        models[instance], _ = fit_instance(
            instance,
            panel.allocation.training[instance],
            folds,
            data,
            cache,
            key,
            models,
            method.nuisances,
            stats,
        )
        pending.remove(key)

    eval_rows: npt.NDArray[np.intp] = folds.rows_in(panel.allocation.eval_window.folds)
    eval_data: Dataset = data.select_rows(eval_rows)
    predictions: dict[str, npt.NDArray[Any]] = {
        arg: predict_instance(root, models, None, eval_data, method.nuisances)
        for arg, root in plan.roots.items()
    }
    try:
        value: Any = method.target(eval_data, **predictions)
        if method.mode is Mode.ESTIMATE:
            return _scalar(value)
        _check_row_values(value, eval_data.n_rows)
    except Exception as exc:
        raise ComponentFailure("target", exc) from exc
    return build_panel_predictor(method, plan.roots, models, panel.allocation.panel_index)


@dataclass
class RepetitionOutcome:
    """A repetition's value, or the failure that stopped it."""

    rep: int
    value: Any | None = None
    failure: FailureRecord | None = None

    @property
    def ok(self) -> bool:
        """Whether every panel and the panel aggregation succeeded."""
        return self.failure is None


def run_repetition(
    data: Dataset,
    method: MethodSpec,
    r: int,
    folds: FoldAssignment,
    cache: FitCache,
    plan: MethodPlan | None = None,
    stats: CacheStats | None = None,
) -> RepetitionOutcome:
    """Run the ``K`` panels of repetition ``r`` and aggregate them.

    Failures are captured in the outcome; nothing raised by a learner, the
    target or ``aggregate_panels`` escapes. ``cache`` must be fresh for the
    repetition (or shared only with methods on the same fold assignment).
    """
    method_plan: MethodPlan = plan or plan_method(method)
    counters: CacheStats = stats if stats is not None else cache.stats
    pending: list[InstanceKey] = method_plan.keys()
    if plan is None:
        cache.plan(pending)

    panel_values: list[Any] = []
    for panel in method_plan.panels:
        p: int = panel.allocation.panel_index
        try:
            panel_values.append(
                run_panel(data, method, method_plan, panel, folds, cache, counters, pending)
            )
        except ComponentFailure as failure:
            cache.cancel(pending)
            return RepetitionOutcome(
                r, failure=FailureRecord(r, p, failure.where, failure.message, failure.code)
            )

    try:
        value: Any = method.aggregate_panels(panel_values)
        if method.mode is Mode.ESTIMATE:
            value = _scalar(value)
    except Exception as exc:
        failure = ComponentFailure("aggregate_panels", exc)
        return RepetitionOutcome(
            r, failure=FailureRecord(r, None, failure.where, failure.message, failure.code)
        )
    return RepetitionOutcome(r, value=value)


def _require_valid(name: str, method: MethodSpec) -> None:
    """Re-validate a method that may have been assembled without checks."""
    report: ValidationReport = validate_method(method)
    if not report.ok:
        logger.warning("method_invalid", method=name, violations=report.violations)
        raise SpecificationError(report)


@dataclass
class _MethodRun:
    """Accumulator for one method while its group executes."""

    name: str
    method: MethodSpec
    plan: MethodPlan
    stats: CacheStats = field(default_factory=CacheStats)
    values: list[Any] = field(default_factory=list)
    errors: list[FailureRecord] = field(default_factory=list)
    digests: list[str] = field(default_factory=list)
    n_fail: int = 0
    stopped: bool = False

    def record(self, outcome: RepetitionOutcome) -> None:
        """Add a repetition outcome and apply the ``max_fail`` budget."""
        if outcome.failure is None:
            self.values.append(outcome.value)
            logger.debug("repetition_complete", method=self.name, rep=outcome.rep)
            return
        self.n_fail += 1
        self.errors.append(outcome.failure)
        logger.warning(
            "repetition_failed",
            method=self.name,
            rep=outcome.failure.rep,
            panel=outcome.failure.panel,
            where=outcome.failure.where,
            error=outcome.failure.message,
        )
        max_fail: int | None = self.method.max_fail
        if max_fail is not None and self.n_fail > max_fail:
            self.stopped = True
            logger.warning(
                "max_fail_reached", method=self.name, n_fail=self.n_fail, max_fail=max_fail
            )

    def result(self) -> RunResult:
        """Aggregate successful repetitions into the final ``RunResult``."""
        estimate: Any | None = None
        errors: list[FailureRecord] = list(self.errors)
        if self.values:
            try:
                estimate = self.method.aggregate_repeats(self.values)
                if self.method.mode is Mode.ESTIMATE:
                    estimate = _scalar(estimate)
            except Exception as exc:
                failure = ComponentFailure("aggregate_repeats", exc)
                errors.append(FailureRecord(None, None, failure.where, failure.message, failure.code))
                estimate = None
        return RunResult(
            mode=self.method.mode,
            estimate=estimate,
            per_repetition=list(self.values),
            n_success=len(self.values),
            n_fail=self.n_fail,
            errors=errors,
            fit_calls=self.stats.fit_calls,
            cache_hits=self.stats.cache_hits,
            fit_calls_by_node=dict(self.stats.fit_calls_by_node),
            cache_hits_by_node=dict(self.stats.cache_hits_by_node),
            fold_digests=list(self.digests),
        )


def _group_key(method: MethodSpec) -> tuple[int, int, int | None]:
    """Methods sharing ``K``, ``repeats`` and the splitter object share a schedule."""
    splitter_identity: int | None = None if method.fold_split is None else id(method.fold_split)
    return method.K, method.repeats, splitter_identity


def split_folds(data: Dataset, method: MethodSpec, seed: int, r: int) -> FoldAssignment:
    """Fold assignment of repetition ``r`` from the method's splitter or the default."""
    if method.fold_split is None:
        return default_fold_split(data.n_rows, method.K, seed, r)
    return as_fold_assignment(method.fold_split(data.n_rows, method.K, seed, r), data.n_rows, method.K)


def crossfit_multi(
    data: Dataset,
    methods: Mapping[str, MethodSpec],
    seed: int | None = None,
    cache_policy: str | None = None,
) -> dict[str, RunResult]:
    """Run several methods over shared fold schedules.

    Methods with equal ``K``, ``repeats`` and splitter object form a group: per
    repetition they see one ``FoldAssignment`` and one ``FitCache``, so identical
    nuisance instances are fitted once for the whole group. A method's failures
    never affect the other methods.

    Raises:
        SpecificationError: When any method fails validation.
        CrossfitError: ``INVALID_FOLDS`` when the data has fewer rows than ``K``
            or a custom splitter returns an invalid assignment.
    """
    base_seed: int = resolve_seed(seed)
    for name, method in methods.items():
        _require_valid(name, method)
        if data.n_rows < method.K:
            raise CrossfitError(
                ErrorCode.INVALID_FOLDS,
                f"Method {name!r}: {data.n_rows} rows cannot fill K={method.K} folds",
                {"method": name, "n_rows": data.n_rows, "K": method.K},
            )

    groups: dict[tuple[int, int, int | None], list[_MethodRun]] = {}
    for name, method in methods.items():
        groups.setdefault(_group_key(method), []).append(
            _MethodRun(name, method, plan_method(method))
        )

    for group in groups.values():
        _run_group(data, group, base_seed, cache_policy)

    return {run.name: run.result() for group in groups.values() for run in group}


def _run_group(
    data: Dataset, runs: list[_MethodRun], seed: int, cache_policy: str | None
) -> None:
    """Execute every repetition of one schedule-sharing group."""
    leader: MethodSpec = runs[0].method
    for run in runs:
        logger.info(
            "run_started",
            method=run.name,
            K=run.method.K,
            repeats=run.method.repeats,
            allocation=str(run.method.allocation),
            mode=str(run.method.mode),
            seed=seed,
        )

    for r in range(leader.repeats):
        active: list[_MethodRun] = []
        for run in runs:
            if not run.stopped:
                active.append(run)
        if not active:
            break
        folds: FoldAssignment = split_folds(data, leader, seed, r)
        digest: str = folds.digest()
        cache: FitCache = FitCache(cache_policy)
        for run in active:
            cache.plan(run.plan.keys())
        for run in active:
            run.digests.append(digest)
            run.record(run_repetition(data, run.method, r, folds, cache, run.plan, run.stats))

    for run in runs:
        logger.info(
            "run_complete",
            method=run.name,
            n_success=len(run.values),
            n_fail=run.n_fail,
            fit_calls=run.stats.fit_calls,
            cache_hits=run.stats.cache_hits,
        )


def crossfit(
    data: Dataset,
    method: MethodSpec,
    seed: int | None = None,
    cache_policy: str | None = None,
) -> RunResult:
    """Cross-fit a single method; see ``crossfit_multi`` for semantics.

    Raises:
        SpecificationError: When the method fails validation.
        CrossfitError: ``INVALID_FOLDS`` for too few rows or a bad custom split.
    """
    return crossfit_multi(data, {DEFAULT_METHOD_NAME: method}, seed, cache_policy)[
        DEFAULT_METHOD_NAME
    ]
