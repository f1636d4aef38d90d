"""Pydantic experiment-config models and their translation into methods and data."""

import json
from collections import Counter
from collections.abc import Callable
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .aggregators import AGGREGATORS, aggregator_for
from .config import CACHE_POLICIES
from .errors import CrossfitError, ErrorCode
from .folds import Allocation, FoldAssignment, fixed_fold_split
from .learners import LEARNERS, learner_for
from .recipes import DGPS, PLRParams, TARGETS, target_for
from .spec import MethodSpec, Mode, NuisanceSpec, assemble_method
from .tabular import Dataset, read_csv

FIELD_SEPARATOR: str = " → "


def _strip_str(cls: type, v: object) -> object:
    """Strip whitespace from strings; leave other types for Pydantic to reject."""
    return v.strip() if isinstance(v, str) else v


class LearnerConfig(BaseModel):
    """A registry learner and its keyword parameters."""

    model_config = ConfigDict(extra="forbid")

    name: str
    params: dict[str, Any] = Field(default_factory=dict)

    _strip_name = field_validator("name", mode="before")(_strip_str)

    @field_validator("name")
    @classmethod
    def _known_learner(cls, v: str) -> str:
        """Reject names missing from the learner registry."""
        if v not in LEARNERS:
            raise ValueError(f"unknown learner {v!r}; available: {', '.join(LEARNERS)}")
        return v


class NuisanceConfig(BaseModel):
    """One nuisance node of a method."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    learner: LearnerConfig
    train_fold: int = Field(1, ge=1)
    deps: list[str] = Field(default_factory=list)

    _strip_name = field_validator("name", mode="before")(_strip_str)


class MethodConfig(BaseModel):
    """A named method: target, nuisances, fold geometry, aggregation, failure budget.

    ``mode`` defaults to the target's natural mode and ``eval_fold`` to 1 in
    estimate mode and 0 in predict mode. ``fold_column`` replaces the random
    splitter with the fold labels stored in that data column.
    """

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    target: str
    nuisances: list[NuisanceConfig] = Field(..., min_length=1)
    target_args: list[str] | None = None
    K: int = Field(5, ge=2)
    repeats: int = Field(1, ge=1)
    eval_fold: int | None = Field(None, ge=0)
    mode: Mode | None = None
    allocation: Allocation = Allocation.OVERLAP
    aggregate_panels: str = "mean"
    aggregate_repeats: str = "median"
    max_fail: int | None = Field(None, ge=0)
    fold_column: str | None = None

    _strip_name = field_validator("name", mode="before")(_strip_str)

    @field_validator("target")
    @classmethod
    def _known_target(cls, v: str) -> str:
        """Reject names missing from the target registry."""
        if v not in TARGETS:
            raise ValueError(f"unknown target {v!r}; available: {', '.join(TARGETS)}")
        return v

    @field_validator("aggregate_panels", "aggregate_repeats")
    @classmethod
    def _known_aggregator(cls, v: str) -> str:
        """Reject names missing from the aggregator registry."""
        if v not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {v!r}; available: {', '.join(AGGREGATORS)}")
        return v

    @model_validator(mode="after")
    def _unique_nuisance_names(self) -> "MethodConfig":
        """Nuisance names are keys of the method's nuisance map."""
        names: list[str] = [nuisance.name for nuisance in self.nuisances]
        duplicates: list[str] = []
        for name, count in Counter(names).items():
            if count > 1:
                duplicates.append(name)
        duplicates.sort()
        if duplicates:
            raise ValueError(f"duplicate nuisance names {duplicates}")
        return self

    def resolved_mode(self) -> Mode:
        """Explicit mode, else the target's natural mode."""
        return self.mode or TARGETS[self.target][1]

    def resolved_eval_fold(self) -> int:
        """Explicit ``eval_fold``, else 1 for estimate mode and 0 for predict mode."""
        if self.eval_fold is not None:
            return self.eval_fold
        return 1 if self.resolved_mode() is Mode.ESTIMATE else 0


class CsvSource(BaseModel):
    """Data read from a CSV file (relative paths resolve against the config file)."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["csv"]
    path: str = Field(..., min_length=1)
    header: bool = True


class DgpSource(BaseModel):
    """Data drawn from a registered generator; ``params`` feed its parameter model."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["dgp"]
    name: str = "plr"
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known_dgp(cls, v: str) -> str:
        """Reject names missing from the generator registry."""
        if v not in DGPS:
            raise ValueError(f"unknown dgp {v!r}; available: {', '.join(DGPS)}")
        return v


DataSource = Annotated[CsvSource | DgpSource, Field(discriminator="kind")]


class ExperimentConfig(BaseModel):
    """Top-level experiment file: data source, methods, seed, and outputs."""

    model_config = ConfigDict(extra="forbid")

    data: DataSource
    methods: list[MethodConfig] = Field(..., min_length=1)
    seed: int | None = Field(None, ge=0)
    monte_carlo_reps: int = Field(1, ge=1)
    cache_policy: str | None = None
    output: str | None = None

    @field_validator("cache_policy")
    @classmethod
    def _known_policy(cls, v: str | None) -> str | None:
        """Reject unknown cache policies."""
        if v is not None and v not in CACHE_POLICIES:
            raise ValueError(f"unknown cache policy {v!r}; available: {', '.join(sorted(CACHE_POLICIES))}")
        return v

    @model_validator(mode="after")
    def _unique_method_names(self) -> "ExperimentConfig":
        """Method names key the results map."""
        names: list[str] = [method.name for method in self.methods]
        duplicates: list[str] = []
        for name, count in Counter(names).items():
            if count > 1:
                duplicates.append(name)
        duplicates.sort()
        if duplicates:
            raise ValueError(f"duplicate method names {duplicates}")
        return self

    def method_config(self, name: str) -> MethodConfig:
        """Return the method called ``name``.

        Raises:
            CrossfitError: ``UNKNOWN_METHOD`` listing the configured names.
        """
        for method in self.methods:
            if method.name == name:
                return method
        raise CrossfitError(
            ErrorCode.UNKNOWN_METHOD,
            f"Unknown method {name!r}; configured: {', '.join(m.name for m in self.methods)}",
            {"method": name},
        )


def validation_details(exc: ValidationError) -> list[dict[str, Any]]:
    """Flatten pydantic errors into ``{field, message, type}`` entries."""
    return [
        {
            "field": FIELD_SEPARATOR.join(str(loc) for loc in err["loc"]),
            "message": err["msg"],
            "type": err["type"],
        }
        for err in exc.errors()
    ]


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate an experiment config from JSON text.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` with per-field details (JSON syntax
            errors carry their line and column).
    """
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        details: list[dict[str, Any]] = validation_details(exc)
        summary: str = "; ".join(
            f"{detail['field'] or '(root)'}: {detail['message']}" for detail in details
        )
        raise CrossfitError(
            ErrorCode.CONFIG_ERROR, f"{source}: {summary}", {"errors": details}
        ) from None


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and parse the experiment config at ``path``.

    Raises:
        CrossfitError: ``IO_ERROR`` when unreadable, ``CONFIG_ERROR`` when invalid.
    """
    source: Path = Path(path)
    try:
        text: str = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise CrossfitError(
            ErrorCode.IO_ERROR, f"Cannot read config {source}: {exc.strerror}", {"path": str(source)}
        ) from None
    return parse_config(text, str(source))


def dump_config(config: ExperimentConfig) -> str:
    """Serialize a config back to canonical JSON."""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def build_nuisance(config: NuisanceConfig) -> NuisanceSpec:
    """Instantiate the registry learner as a nuisance node."""
    return learner_for(config.learner.name, config.learner.params).nuisance(
        config.name, train_fold=config.train_fold, deps=config.deps
    )


def _column_splitter(
    data: Dataset, column: str
) -> Callable[[int, int, int, int], FoldAssignment]:
    """Splitter that reads fold labels from ``column`` of ``data``."""
    labels: np.ndarray = data.column(column).astype(np.intp)
    return fixed_fold_split(labels)


def build_method(
    config: MethodConfig,
    data: Dataset | None = None,
    splitters: dict[str, Callable[[int, int, int, int], FoldAssignment]] | None = None,
) -> MethodSpec:
    """Assemble (without validating) the method described by ``config``.

    ``splitters`` caches column splitters by column name so methods reading
    the same fold column share one splitter object, and therefore one schedule.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` when ``fold_column`` is set without data,
            ``UNKNOWN_COLUMN`` when the column is missing.
    """
    mode: Mode = config.resolved_mode()
    fold_split: Callable[[int, int, int, int], FoldAssignment] | None = None
    if config.fold_column is not None:
        if data is None:
            raise CrossfitError(
                ErrorCode.CONFIG_ERROR,
                f"Method {config.name!r}: fold_column needs a dataset",
            )
        cache: dict[str, Callable[[int, int, int, int], FoldAssignment]] = (
            splitters if splitters is not None else {}
        )
        if config.fold_column not in cache:
            cache[config.fold_column] = _column_splitter(data, config.fold_column)
        fold_split = cache[config.fold_column]

    return assemble_method(
        target_for(config.target),
        {nuisance.name: build_nuisance(nuisance) for nuisance in config.nuisances},
        K=config.K,
        repeats=config.repeats,
        eval_fold=config.resolved_eval_fold(),
        mode=mode,
        allocation=config.allocation,
        aggregate_panels=aggregator_for(config.aggregate_panels, mode),
        aggregate_repeats=aggregator_for(config.aggregate_repeats, mode),
        max_fail=config.max_fail,
        fold_split=fold_split,
        target_args=config.target_args,
    )


def build_methods(config: ExperimentConfig, data: Dataset | None = None) -> dict[str, MethodSpec]:
    """Assemble every configured method, sharing column splitters."""
    splitters: dict[str, Callable[[int, int, int, int], FoldAssignment]] = {}
    return {method.name: build_method(method, data, splitters) for method in config.methods}


def dgp_params(source: DgpSource, seed: int) -> PLRParams:
    """Parameter model of the source's generator with ``seed`` applied.

    Raises:
        CrossfitError: ``CONFIG_ERROR`` with per-field details for bad parameters.
    """
    model: type[PLRParams] = DGPS[source.name][0]
    try:
        return model.model_validate({**source.params, "seed": seed})
    except ValidationError as exc:
        raise CrossfitError(
            ErrorCode.CONFIG_ERROR,
            f"Invalid parameters for dgp {source.name!r}",
            {"errors": validation_details(exc)},
        ) from None


def load_data(
    config: ExperimentConfig, seed: int, base_dir: Path | None = None
) -> tuple[Dataset, PLRParams | None]:
    """Materialize the configured data source.

    A generator's own ``params.seed`` wins over ``seed``. Returns the generator
    parameters alongside the data so callers can compute oracles.
    """
    source: CsvSource | DgpSource = config.data
    if isinstance(source, CsvSource):
        path: Path = Path(source.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return read_csv(path, header=source.header), None
    params: PLRParams = dgp_params(source, int(source.params.get("seed", seed)))
    return DGPS[source.name][1](params), params
