"""Nuisance and method specifications with construction-time validation.

A method is a target functional plus a map of named nuisance nodes. Dependency
names are global within a method: a nuisance declaring ``deps=["nuis_m"]``
receives the predictions of whatever spec the method maps ``"nuis_m"`` to, as a
keyword argument of its ``fit``/``predict`` call.

``validate_method`` runs five check families (argument coverage, cycles,
target-nuisance consistency, fold constraints, allocation feasibility) and
returns every violation at once; ``create_method`` raises on the first failing
report so a bad schedule never reaches the engine.
"""

import inspect
from collections import Counter
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from types import MappingProxyType
from typing import Any

from .aggregators import default_aggregators
from .errors import CrossfitError, ErrorCode, SpecificationError
from .folds import Allocation, canonical_names, min_folds_required, reachable_nuisances
from .logging_config import get_logger

logger = get_logger(__name__)

FitFunction = Callable[..., Any]
PredictFunction = Callable[..., Any]
TargetFunction = Callable[..., Any]
Aggregator = Callable[[Sequence[Any]], Any]
FoldSplitter = Callable[[int, int, int, int], Any]

ARROW: str = "→"


class Mode(StrEnum):
    """What a method returns: a scalar estimate or a cross-fitted predictor."""

    ESTIMATE = "estimate"
    PREDICT = "predict"


@dataclass(frozen=True, eq=False)
class NuisanceSpec:
    """A named nuisance node.

    ``fit(train_data, **dep_predictions)`` returns a model and
    ``predict(model, data, **dep_predictions)`` returns one value per row of
    ``data``. Both must be deterministic given identical inputs; the engine's
    cache relies on it. Equality is identity, so two names mapped to the same
    spec object form one node.
    """

    id: str
    fit: FitFunction
    predict: PredictFunction
    train_fold: int = 1
    deps: tuple[str, ...] = ()
    token: str | None = None

    def structural_token(self) -> str:
        """Return the identity used in instance signatures.

        Specs built from identical learner parameters carry the same explicit
        ``token`` and therefore share cache entries; otherwise the token is
        derived from the callables themselves.
        """
        if self.token is not None:
            return f"{self.id}|{self.token}"
        return f"{self.id}|{_callable_name(self.fit)}#{id(self.fit):x}|{_callable_name(self.predict)}#{id(self.predict):x}"


@dataclass(frozen=True, eq=False)
class MethodSpec:
    """Target functional, nuisance map, fold geometry, aggregators, and failure policy."""

    target: TargetFunction
    nuisances: Mapping[str, NuisanceSpec]
    target_args: tuple[str, ...]
    K: int
    repeats: int
    eval_fold: int
    mode: Mode
    allocation: Allocation
    aggregate_panels: Aggregator
    aggregate_repeats: Aggregator
    max_fail: int | None = None
    fold_split: FoldSplitter | None = None

    def canonical(self, name: str) -> str:
        """Return the first declared name mapping to the same spec as ``name``."""
        return canonical_names(self.nuisances)[name]

    def dependency_names(self, name: str) -> tuple[str, ...]:
        """Return the declared dependency names of nuisance ``name``."""
        return self.nuisances[name].deps


@dataclass
class ValidationReport:
    """Outcome of ``validate_method``: violations fail the method, warnings do not."""

    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    min_folds_required: int | None = None

    @property
    def ok(self) -> bool:
        """Whether every check family passed."""
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-serializable view."""
        return {
            "ok": self.ok,
            "violations": list(self.violations),
            "warnings": list(self.warnings),
            "min_folds_required": self.min_folds_required,
        }


def _callable_name(function: Callable[..., Any]) -> str:
    """Return ``module.qualname`` for a callable, falling back to its type name."""
    module: str = getattr(function, "__module__", "") or ""
    qualname: str = getattr(function, "__qualname__", type(function).__name__)
    return f"{module}.{qualname}" if module else qualname


def create_nuisance(
    id: str,
    fit: FitFunction,
    predict: PredictFunction,
    train_fold: int = 1,
    deps: Sequence[str] = (),
    token: str | None = None,
) -> NuisanceSpec:
    """Define a nuisance node.

    Args:
        id: Unique node name; conventionally the name the method maps it under.
        fit: ``fit(train_data, **dep_predictions) -> model``.
        predict: ``predict(model, data, **dep_predictions) -> values``.
        train_fold: Number of folds the node trains on in every panel.
        deps: Names of the nuisances whose predictions ``fit``/``predict`` consume.
        token: Optional structural identity for cross-method cache sharing.

    Raises:
        CrossfitError: ``INVALID_NUISANCE`` for an empty id, ``train_fold < 1``,
            duplicate dependency names, or a self-dependency.
    """
    if not isinstance(id, str) or not id.strip():
        raise CrossfitError(ErrorCode.INVALID_NUISANCE, "Nuisance id must be non-empty")
    if isinstance(train_fold, bool) or not isinstance(train_fold, int) or train_fold < 1:
        raise CrossfitError(
            ErrorCode.INVALID_NUISANCE,
            f"Nuisance {id!r}: train_fold must be an integer >= 1 (got {train_fold!r})",
            {"nuisance": id},
        )
    if not callable(fit) or not callable(predict):
        raise CrossfitError(
            ErrorCode.INVALID_NUISANCE, f"Nuisance {id!r}: fit and predict must be callable"
        )
    dep_names: tuple[str, ...] = tuple(deps)
    duplicates: list[str] = []
    for name, count in Counter(dep_names).items():
        if count > 1:
            duplicates.append(name)
    duplicates.sort()
    if duplicates:
        raise CrossfitError(
            ErrorCode.INVALID_NUISANCE,
            f"Nuisance {id!r}: duplicate dependency names {duplicates}",
            {"nuisance": id, "duplicates": duplicates},
        )
    if id in dep_names:
        raise CrossfitError(
            ErrorCode.INVALID_NUISANCE,
            f"Nuisance {id!r}: self-dependency is not allowed",
            {"nuisance": id},
        )
    return NuisanceSpec(
        id=id, fit=fit, predict=predict, train_fold=train_fold, deps=dep_names, token=token
    )


def _signature(function: Callable[..., Any]) -> inspect.Signature | None:
    """Return the signature of ``function`` or ``None`` when it cannot be inspected."""
    try:
        return inspect.signature(function)
    except (TypeError, ValueError):
        return None


def _named_parameters(
    signature: inspect.Signature, positional: int
) -> tuple[list[inspect.Parameter], bool]:
    """Split off ``positional`` leading parameters; return named ones and a ``**kwargs`` flag."""
    parameters: list[inspect.Parameter] = list(signature.parameters.values())
    accepts_var_keyword: bool = any(
        parameter.kind is inspect.Parameter.VAR_KEYWORD for parameter in parameters
    )
    leading: int = 0
    named: list[inspect.Parameter] = []
    for parameter in parameters:
        if parameter.kind in (inspect.Parameter.VAR_POSITIONAL, inspect.Parameter.VAR_KEYWORD):
            continue
        if leading < positional and parameter.kind is not inspect.Parameter.KEYWORD_ONLY:
            leading += 1
            continue
        if parameter.kind is not inspect.Parameter.POSITIONAL_ONLY:
            named.append(parameter)
    return named, accepts_var_keyword


def resolve_target_args(
    target: TargetFunction,
    nuisances: Mapping[str, NuisanceSpec],
    target_args: Sequence[str] | None = None,
) -> tuple[str, ...]:
    """Return the nuisance names passed to ``target``.

    Explicit ``target_args`` win. Otherwise the target's named parameters after
    ``data`` are used (required ones always, defaulted ones when mapped); a
    ``**kwargs`` target receives every mapped nuisance.
    """
    if target_args is not None:
        return tuple(target_args)
    signature: inspect.Signature | None = _signature(target)
    if signature is None:
        return tuple(nuisances)
    named, accepts_var_keyword = _named_parameters(signature, positional=1)
    names: list[str] = []
    for parameter in named:
        if parameter.default is inspect.Parameter.empty or parameter.name in nuisances:
            names.append(parameter.name)
    if accepts_var_keyword:
        for name in nuisances:
            if name not in names:
                names.append(name)
    return tuple(names)


def assemble_method(
    target: TargetFunction,
    nuisances: Mapping[str, NuisanceSpec],
    K: int = 5,
    repeats: int = 1,
    eval_fold: int = 1,
    mode: Mode | str = Mode.ESTIMATE,
    allocation: Allocation | str = Allocation.OVERLAP,
    aggregate_panels: Aggregator | None = None,
    aggregate_repeats: Aggregator | None = None,
    max_fail: int | None = None,
    fold_split: FoldSplitter | None = None,
    target_args: Sequence[str] | None = None,
) -> MethodSpec:
    """Build a ``MethodSpec`` without validating it (see ``create_method``).

    Raises:
        CrossfitError: ``INVALID_METHOD`` for an unknown mode or allocation name.
    """
    try:
        resolved_mode: Mode = Mode(mode)
        resolved_allocation: Allocation = Allocation(allocation)
    except ValueError as exc:
        raise CrossfitError(ErrorCode.INVALID_METHOD, str(exc)) from None

    default_panels, default_repeats = default_aggregators(resolved_mode)
    frozen_nuisances: Mapping[str, NuisanceSpec] = MappingProxyType(dict(nuisances))
    return MethodSpec(
        target=target,
        nuisances=frozen_nuisances,
        target_args=resolve_target_args(target, frozen_nuisances, target_args),
        K=K,
        repeats=repeats,
        eval_fold=eval_fold,
        mode=resolved_mode,
        allocation=resolved_allocation,
        aggregate_panels=aggregate_panels or default_panels,
        aggregate_repeats=aggregate_repeats or default_repeats,
        max_fail=max_fail,
        fold_split=fold_split,
    )


def create_method(
    target: TargetFunction,
    nuisances: Mapping[str, NuisanceSpec],
    K: int = 5,
    repeats: int = 1,
    eval_fold: int = 1,
    mode: Mode | str = Mode.ESTIMATE,
    allocation: Allocation | str = Allocation.OVERLAP,
    aggregate_panels: Aggregator | None = None,
    aggregate_repeats: Aggregator | None = None,
    max_fail: int | None = None,
    fold_split: FoldSplitter | None = None,
    target_args: Sequence[str] | None = None,
) -> MethodSpec:
    """Define a validated method.

    Aggregators default to mean over panels and median over repetitions, in the
    estimate or predictor flavour matching ``mode``.

    Raises:
        SpecificationError: When ``validate_method`` reports any violation.
    """
    method: MethodSpec = assemble_method(
        target,
        nuisances,
        K=K,
        repeats=repeats,
        eval_fold=eval_fold,
        mode=mode,
        allocation=allocation,
        aggregate_panels=aggregate_panels,
        aggregate_repeats=aggregate_repeats,
        max_fail=max_fail,
        fold_split=fold_split,
        target_args=target_args,
    )
    report: ValidationReport = validate_method(method)
    if not report.ok:
        raise SpecificationError(report)
    logger.debug(
        "method_validated",
        nuisances=list(method.nuisances),
        allocation=str(method.allocation),
        K=method.K,
        min_folds_required=report.min_folds_required,
    )
    return method


def _check_coverage(method: MethodSpec, report: ValidationReport) -> bool:
    """Argument coverage: deps resolve and fit/predict arguments are declared deps."""
    covered: bool = True
    for name, spec in method.nuisances.items():
        for dep in spec.deps:
            if dep not in method.nuisances:
                report.violations.append(
                    f"coverage: nuisance {name!r} depends on {dep!r}, which has no nuisance mapping"
                )
                covered = False
        for role, function, positional in (("fit", spec.fit, 1), ("predict", spec.predict, 2)):
            signature: inspect.Signature | None = _signature(function)
            if signature is None:
                continue
            named, accepts_var_keyword = _named_parameters(signature, positional)
            accepted: set[str] = {parameter.name for parameter in named}
            for parameter in named:
                if parameter.default is inspect.Parameter.empty and parameter.name not in spec.deps:
                    report.violations.append(
                        f"coverage: nuisance {name!r} {role}() requires argument "
                        f"{parameter.name!r}, which is not a declared dependency"
                    )
            if not accepts_var_keyword:
                for dep in spec.deps:
                    if dep not in accepted:
                        report.violations.append(
                            f"coverage: nuisance {name!r} {role}() does not accept "
                            f"dependency argument {dep!r}"
                        )
    return covered


def _find_cycle(method: MethodSpec) -> list[str] | None:
    """Return one dependency cycle as a name path, or ``None`` for a DAG."""
    canonical: dict[str, str] = canonical_names(method.nuisances)
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        """Depth-first search with white/grey/black colouring."""
        state[node] = 1
        stack.append(node)
        for dep in method.nuisances[node].deps:
            child: str = canonical[dep]
            if state.get(child) == 1:
                return [*stack[stack.index(child) :], child]
            if child not in state:
                cycle: list[str] | None = visit(child)
                if cycle is not None:
                    return cycle
        stack.pop()
        state[node] = 2
        return None

    for name in method.nuisances:
        root: str = canonical[name]
        if root not in state:
            found: list[str] | None = visit(root)
            if found is not None:
                return found
    return None


def _check_target(method: MethodSpec, report: ValidationReport) -> None:
    """Target-nuisance consistency: every target argument is mapped and accepted."""
    if len(set(method.target_args)) != len(method.target_args):
        report.violations.append(f"target: duplicate nuisance arguments {list(method.target_args)}")
    for arg in method.target_args:
        if arg not in method.nuisances:
            report.violations.append(f"target: argument {arg!r} has no nuisance mapping")

    signature: inspect.Signature | None = _signature(method.target)
    if signature is None:
        return
    named, accepts_var_keyword = _named_parameters(signature, positional=1)
    accepted: set[str] = {parameter.name for parameter in named}
    for parameter in named:
        if parameter.default is inspect.Parameter.empty and parameter.name not in method.target_args:
            report.violations.append(
                f"target: required argument {parameter.name!r} has no nuisance mapping"
            )
    if not accepts_var_keyword:
        for arg in method.target_args:
            if arg not in accepted:
                report.violations.append(f"target: does not accept nuisance argument {arg!r}")


def _check_folds(method: MethodSpec, report: ValidationReport) -> None:
    """Fold constraints and mode-specific requirements."""
    if not isinstance(method.mode, Mode):
        report.violations.append(f"mode: unknown mode {method.mode!r}")
    if not isinstance(method.allocation, Allocation):
        report.violations.append(f"allocation: unknown allocation {method.allocation!r}")
    if method.K < 2:
        report.violations.append(f"folds: K must be >= 2 (got {method.K})")
    if method.repeats < 1:
        report.violations.append(f"folds: repeats must be >= 1 (got {method.repeats})")
    if method.eval_fold < 0:
        report.violations.append(f"folds: eval_fold must be >= 0 (got {method.eval_fold})")
    if method.eval_fold >= method.K:
        report.violations.append(
            f"folds: eval_fold must be < K (got eval_fold={method.eval_fold}, K={method.K})"
        )
    if method.mode is Mode.ESTIMATE and method.eval_fold < 1:
        report.violations.append("mode: estimate mode requires eval_fold ≥ 1")
    if method.max_fail is not None and method.max_fail < 0:
        report.violations.append(f"max_fail: must be >= 0 (got {method.max_fail})")

    reserved: int = max(method.eval_fold, 1) if method.mode is Mode.ESTIMATE else method.eval_fold
    available: int = method.K - reserved
    for name, spec in method.nuisances.items():
        if spec.train_fold > available:
            report.violations.append(
                f"folds: nuisance {name!r} train_fold={spec.train_fold} exceeds the "
                f"{available} folds left outside the evaluation window"
            )


def validate_method(method: MethodSpec) -> ValidationReport:
    """Run all five check families and collect every violation.

    Feasibility is only computed once the graph is known to be a covered DAG.
    """
    report: ValidationReport = ValidationReport()
    covered: bool = _check_coverage(method, report)

    acyclic: bool = False
    if covered:
        cycle: list[str] | None = _find_cycle(method)
        if cycle is None:
            acyclic = True
        else:
            report.violations.append(f"cycle: {ARROW.join(cycle)}")

    _check_target(method, report)
    _check_folds(method, report)

    graph_ok: bool = acyclic and all(arg in method.nuisances for arg in method.target_args)
    if graph_ok and isinstance(method.allocation, Allocation):
        used: set[str] = reachable_nuisances(method)
        for name in method.nuisances:
            if method.canonical(name) not in used:
                report.warnings.append(f"nuisance {name!r} is not reachable from the target")
        required: int = min_folds_required(method)
        report.min_folds_required = required
        if method.K < required:
            report.violations.append(
                f"feasibility: allocation {str(method.allocation)!r} requires K ≥ {required} "
                f"(got K={method.K})"
            )
    return report
