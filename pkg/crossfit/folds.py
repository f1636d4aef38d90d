"""Fold splitting, the cyclic panel schedule, and training-window allocation.

Within a repetition there are ``K`` panels. Panel ``p`` evaluates the target on
the cyclic window ``{p, ..., p + eval_fold - 1} mod K``; every nuisance instance
trains on a contiguous cyclic window that starts right after it. The three
allocation modes differ only in how those training windows are laid out:

* ``overlap``: every instance starts at the same fold (windows nest).
* ``disjoint``: one instance per DAG node, windows packed back to back.
* ``independence``: the DAG is tree-expanded (one instance per dependency path)
  and the resulting instances are packed back to back.

Packing order is ``instance_set`` order: depth-first over the target arguments
in declared order, dependencies before dependents. Every allocation for panel
``p`` is the panel-0 allocation shifted by ``p`` mod ``K``.
"""

import hashlib
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

from .errors import CrossfitError, ErrorCode

if TYPE_CHECKING:
    from .spec import MethodSpec, NuisanceSpec

TARGET_NODE: str = "target"

IntArray = npt.NDArray[np.intp]


class Allocation(StrEnum):
    """How training windows are assigned across nuisance instances in a panel."""

    OVERLAP = "overlap"
    DISJOINT = "disjoint"
    INDEPENDENCE = "independence"


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Per-row fold labels in ``[0, K)``; every fold labels at least one row."""

    labels: IntArray
    K: int

    def __post_init__(self) -> None:
        """Freeze the labels and check they partition the rows into ``K`` folds."""
        labels: IntArray = np.asarray(self.labels).reshape(-1)
        if labels.size and not np.all(np.equal(np.mod(labels, 1), 0)):
            raise CrossfitError(ErrorCode.INVALID_FOLDS, "Fold labels must be integers")
        labels = labels.astype(np.intp)
        if self.K < 1:
            raise CrossfitError(ErrorCode.INVALID_FOLDS, f"K must be >= 1 (got {self.K})")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise CrossfitError(
                ErrorCode.INVALID_FOLDS, f"Fold labels must lie in [0, {self.K})"
            )
        empty: list[int] = np.setdiff1d(np.arange(self.K), labels).tolist()
        if empty:
            raise CrossfitError(
                ErrorCode.INVALID_FOLDS,
                f"Folds {empty} label no rows",
                {"empty_folds": empty},
            )
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        """Number of labelled rows."""
        return int(self.labels.shape[0])

    def sizes(self) -> list[int]:
        """Row count of each fold, by fold index."""
        return [int(count) for count in np.bincount(self.labels, minlength=self.K)]

    def rows_in(self, folds: Iterable[int]) -> IntArray:
        """Return the indices of rows whose fold is in ``folds``, ascending."""
        return np.flatnonzero(np.isin(self.labels, list(folds))).astype(np.intp)

    def digest(self) -> str:
        """Return a sha256 digest of ``K`` and the labels (schedule fingerprint)."""
        hasher = hashlib.sha256()
        hasher.update(str(self.K).encode())
        hasher.update(self.labels.astype(np.int64).tobytes())
        return hasher.hexdigest()


@dataclass(frozen=True)
class Window:
    """Cyclic contiguous fold set ``{start, ..., start + width - 1} mod K``."""

    start: int
    width: int
    K: int

    def __post_init__(self) -> None:
        """Check ``0 <= width <= K``."""
        if not 0 <= self.width <= self.K:
            raise CrossfitError(
                ErrorCode.INVALID_FOLDS, f"Window width {self.width} outside [0, {self.K}]"
            )

    @property
    def folds(self) -> tuple[int, ...]:
        """Fold indices in window order."""
        return tuple((self.start + offset) % self.K for offset in range(self.width))

    @property
    def fold_set(self) -> frozenset[int]:
        """Fold indices as a set."""
        return frozenset(self.folds)

    def shifted(self, offset: int) -> "Window":
        """Return the window moved by ``offset`` folds mod ``K``."""
        return Window((self.start + offset) % self.K, self.width, self.K)

    def overlaps(self, other: "Window") -> bool:
        """Whether the two windows share a fold."""
        return not self.fold_set.isdisjoint(other.fold_set)

    def __str__(self) -> str:
        return "{" + ",".join(str(fold) for fold in self.folds) + "}"


@dataclass(frozen=True, eq=False)
class NuisanceInstance:
    """One fitted copy of a nuisance node within a panel.

    ``path`` lists the consumers from the target down to this instance's direct
    consumer; it is empty under overlap/disjoint, where each node has exactly
    one instance. ``width`` is the node's ``train_fold``.
    """

    node_id: str
    path: tuple[str, ...]
    deps: tuple["NuisanceInstance", ...]
    width: int

    @property
    def label(self) -> str:
        """``node`` or ``node@consumer/path`` for tree-expanded copies."""
        if not self.path:
            return self.node_id
        return f"{self.node_id}@{'/'.join(self.path)}"

    def __repr__(self) -> str:
        return f"NuisanceInstance({self.label}, width={self.width})"


@dataclass(frozen=True, eq=False)
class PanelAllocation:
    """Evaluation window and per-instance training windows of one panel."""

    panel_index: int
    eval_window: Window
    training: Mapping[NuisanceInstance, Window] = field(default_factory=dict)


@dataclass(frozen=True)
class ScheduleRow:
    """One (panel, instance) line of the schedule audit table."""

    panel: int
    instance: str
    path: str
    window: tuple[int, ...]
    eval_folds: tuple[int, ...]


def canonical_names(nuisances: Mapping[str, "NuisanceSpec"]) -> dict[str, str]:
    """Map every nuisance name to the first name bound to the same spec object."""
    first_by_spec: dict[int, str] = {}
    canonical: dict[str, str] = {}
    for name, spec in nuisances.items():
        canonical[name] = first_by_spec.setdefault(id(spec), name)
    return canonical


def default_fold_split(n: int, K: int, seed: int, rep_index: int) -> FoldAssignment:
    """Deal a seeded permutation of the rows round-robin into ``K`` folds.

    The generator is seeded with ``SeedSequence([seed, rep_index])``, so each
    repetition's split depends only on its own index and adding repetitions
    never changes earlier ones.

    Raises:
        CrossfitError: ``INVALID_FOLDS`` when ``n < K`` or the seed is negative.
    """
    if n < K:
        raise CrossfitError(
            ErrorCode.INVALID_FOLDS, f"Cannot split {n} rows into {K} folds", {"n": n, "K": K}
        )
    if seed < 0 or rep_index < 0:
        raise CrossfitError(ErrorCode.INVALID_FOLDS, "Seed and repetition index must be >= 0")
    rng: np.random.Generator = np.random.default_rng(np.random.SeedSequence([seed, rep_index]))
    permutation: IntArray = rng.permutation(n)
    labels: IntArray = np.empty(n, dtype=np.intp)
    labels[permutation] = np.arange(n) % K
    return FoldAssignment(labels, K)


def fixed_fold_split(labels: npt.ArrayLike) -> Callable[[int, int, int, int], FoldAssignment]:
    """Return a splitter that ignores seed and repetition and always yields ``labels``."""
    fixed: IntArray = np.asarray(labels, dtype=np.intp)

    def split(n: int, K: int, seed: int, rep_index: int) -> FoldAssignment:
        """Return the fixed labels after checking the row count."""
        if fixed.shape[0] != n:
            raise CrossfitError(
                ErrorCode.INVALID_FOLDS, f"Fixed split has {fixed.shape[0]} labels for {n} rows"
            )
        return FoldAssignment(fixed, K)

    return split


def derive_seed(seed: int, index: int) -> int:
    """Mix a base seed with an index into an independent 32-bit seed."""
    state: npt.NDArray[np.uint32] = np.random.SeedSequence([seed, index]).generate_state(1)
    return int(state[0])


def as_fold_assignment(value: Any, n: int, K: int) -> FoldAssignment:
    """Normalize a splitter's output (assignment or label vector) and check its shape.

    Raises:
        CrossfitError: ``INVALID_FOLDS`` for a wrong row count, wrong ``K``, or
            labels that do not partition the rows into ``K`` non-empty folds.
    """
    assignment: FoldAssignment = value if isinstance(value, FoldAssignment) else FoldAssignment(
        np.asarray(value), K
    )
    if assignment.K != K:
        raise CrossfitError(
            ErrorCode.INVALID_FOLDS, f"Splitter returned K={assignment.K}, expected {K}"
        )
    if assignment.n_rows != n:
        raise CrossfitError(
            ErrorCode.INVALID_FOLDS,
            f"Splitter returned {assignment.n_rows} labels for {n} rows",
        )
    return assignment


def panel_eval_window(p: int, eval_fold: int, K: int) -> Window:
    """Return the evaluation window of panel ``p``.

    Raises:
        CrossfitError: ``INVALID_FOLDS`` for ``p`` outside ``[0, K)`` or
            ``eval_fold`` outside ``[0, K)``.
    """
    if not 0 <= p < K:
        raise CrossfitError(ErrorCode.INVALID_FOLDS, f"Panel {p} outside [0, {K})")
    if not 0 <= eval_fold < K:
        raise CrossfitError(ErrorCode.INVALID_FOLDS, f"eval_fold {eval_fold} outside [0, {K})")
    return Window(p, eval_fold, K)


def tree_expand(
    nuisances: Mapping[str, "NuisanceSpec"], target_args: Sequence[str]
) -> list[NuisanceInstance]:
    """Expand the dependency DAG into a forest with one root per target argument.

    Every dependency edge materializes a fresh child instance, so a node reached
    along several paths gets one copy per path. The graph must be acyclic.
    """
    canonical: dict[str, str] = canonical_names(nuisances)

    def expand(name: str, path: tuple[str, ...]) -> NuisanceInstance:
        """Build the subtree for ``name`` consumed along ``path``."""
        node: str = canonical[name]
        spec: NuisanceSpec = nuisances[node]
        child_path: tuple[str, ...] = (*path, node)
        children: tuple[NuisanceInstance, ...] = tuple(
            expand(dep, child_path) for dep in spec.deps
        )
        return NuisanceInstance(node, path, children, spec.train_fold)

    return [expand(arg, (TARGET_NODE,)) for arg in target_args]


def _shared_roots(
    nuisances: Mapping[str, "NuisanceSpec"], target_args: Sequence[str]
) -> list[NuisanceInstance]:
    """One instance per node; dependency edges point at the shared instances."""
    canonical: dict[str, str] = canonical_names(nuisances)
    built: dict[str, NuisanceInstance] = {}

    def build(name: str) -> NuisanceInstance:
        """Return the single instance of ``name``, creating it on first use."""
        node: str = canonical[name]
        existing: NuisanceInstance | None = built.get(node)
        if existing is not None:
            return existing
        spec: NuisanceSpec = nuisances[node]
        children: tuple[NuisanceInstance, ...] = tuple(build(dep) for dep in spec.deps)
        instance: NuisanceInstance = NuisanceInstance(node, (), children, spec.train_fold)
        built[node] = instance
        return instance

    return [build(arg) for arg in target_args]


def target_roots(method: "MethodSpec") -> dict[str, NuisanceInstance]:
    """Map each target argument to the instance whose predictions it receives."""
    roots: list[NuisanceInstance] = (
        tree_expand(method.nuisances, method.target_args)
        if method.allocation is Allocation.INDEPENDENCE
        else _shared_roots(method.nuisances, method.target_args)
    )
    return dict(zip(method.target_args, roots, strict=True))


def postorder(roots: Iterable[NuisanceInstance]) -> list[NuisanceInstance]:
    """Dependencies-first traversal of ``roots``, each instance emitted once."""
    seen: set[int] = set()
    order: list[NuisanceInstance] = []

    def walk(instance: NuisanceInstance) -> None:
        """Emit children before ``instance``."""
        if id(instance) in seen:
            return
        for dep in instance.deps:
            walk(dep)
        seen.add(id(instance))
        order.append(instance)

    for root in roots:
        walk(root)
    return order


def instance_set(method: "MethodSpec") -> list[NuisanceInstance]:
    """Return the method's nuisance instances in packing order.

    Overlap and disjoint emit each reachable node once; independence emits the
    tree-expanded forest.
    """
    return postorder(target_roots(method).values())


def reachable_nuisances(method: "MethodSpec") -> set[str]:
    """Canonical names of the nodes reachable from the target."""
    return {instance.node_id for instance in instance_set(method)}


def allocate(
    mode: Allocation | str,
    instances: Sequence[NuisanceInstance],
    p: int,
    eval_fold: int,
    K: int,
) -> PanelAllocation:
    """Assign a training window to every instance for panel ``p``.

    Raises:
        CrossfitError: ``INFEASIBLE_ALLOCATION`` when a width (overlap) or the
            total width (disjoint/independence) exceeds ``K - eval_fold``.
    """
    eval_window: Window = panel_eval_window(p, eval_fold, K)
    available: int = K - eval_fold
    first: int = (p + eval_fold) % K
    training: dict[NuisanceInstance, Window] = {}

    if Allocation(mode) is Allocation.OVERLAP:
        for instance in instances:
            if instance.width > available:
                raise CrossfitError(
                    ErrorCode.INFEASIBLE_ALLOCATION,
                    f"{instance.label}: train_fold={instance.width} exceeds {available} available folds",
                )
            training[instance] = Window(first, instance.width, K)
        return PanelAllocation(p, eval_window, training)

    total: int = sum(instance.width for instance in instances)
    if total > available:
        raise CrossfitError(
            ErrorCode.INFEASIBLE_ALLOCATION,
            f"{Allocation(mode)} packing needs {total} folds but only {available} are available",
            {"required": total + eval_fold, "K": K},
        )
    offset: int = 0
    for instance in instances:
        training[instance] = Window((first + offset) % K, instance.width, K)
        offset += instance.width
    return PanelAllocation(p, eval_window, training)


def min_folds_required(method: "MethodSpec") -> int:
    """Smallest ``K`` for which the method's allocation is feasible.

    Overlap needs ``eval_fold + max width``; disjoint and independence need
    ``eval_fold`` plus the sum of widths over ``instance_set``.
    """
    widths: list[int] = [instance.width for instance in instance_set(method)]
    if method.allocation is Allocation.OVERLAP:
        return method.eval_fold + max(widths, default=0)
    return method.eval_fold + sum(widths)


def panel_allocations(method: "MethodSpec") -> list[PanelAllocation]:
    """Allocations of all ``K`` panels of one repetition."""
    instances: list[NuisanceInstance] = instance_set(method)
    return [
        allocate(method.allocation, instances, p, method.eval_fold, method.K)
        for p in range(method.K)
    ]


def audit_schedule(method: "MethodSpec") -> list[ScheduleRow]:
    """Flatten the repetition schedule into one row per (panel, instance)."""
    rows: list[ScheduleRow] = []
    for allocation in panel_allocations(method):
        for instance, window in allocation.training.items():
            rows.append(
                ScheduleRow(
                    panel=allocation.panel_index,
                    instance=instance.label,
                    path="/".join(instance.path),
                    window=window.folds,
                    eval_folds=allocation.eval_window.folds,
                )
            )
    return rows
