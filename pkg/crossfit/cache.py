"""Instance signatures and the per-repetition fit cache.

A fitted nuisance is reusable whenever the same node is trained on the same
fold window with the same upstream fit context. ``instance_key`` hashes exactly
that triple, so two requests share a key iff they would produce the same model.

The engine registers every request of a repetition with ``FitCache.plan``
before fitting anything. Under the ``selective`` policy a model is kept only
while planned requests for its key remain and is dropped after its last use;
``all`` keeps every model until the repetition ends; ``none`` refits on every
request.
"""

import hashlib
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .config import CACHE_POLICIES, CACHE_POLICY
from .errors import CrossfitError, ErrorCode
from .folds import NuisanceInstance, Window
from .logging_config import get_logger

if TYPE_CHECKING:
    from .spec import NuisanceSpec

logger = get_logger(__name__)


@dataclass(frozen=True)
class InstanceKey:
    """Digest of (node structure, training folds, dependency keys).

    Equality and hashing use only ``signature``; ``node_id`` and ``window`` are
    kept for counters and log lines.
    """

    signature: str
    node_id: str = field(compare=False)
    window: tuple[int, ...] = field(compare=False)

    def __str__(self) -> str:
        return f"{self.node_id}{{{','.join(str(fold) for fold in self.window)}}}:{self.signature[:12]}"


def instance_key(
    instance: NuisanceInstance,
    windows: Mapping[NuisanceInstance, Window],
    nuisances: Mapping[str, "NuisanceSpec"],
    memo: dict[int, InstanceKey] | None = None,
) -> InstanceKey:
    """Compute the key of ``instance`` under the panel's window assignment.

    The fold set is sorted, so the same folds reached from different panel
    starts hash identically. Dependency keys are folded in under their
    dependency names, in declaration order.
    """
    if memo is not None and id(instance) in memo:
        return memo[id(instance)]

    spec: NuisanceSpec = nuisances[instance.node_id]
    folds: tuple[int, ...] = tuple(sorted(windows[instance].folds))
    hasher = hashlib.sha256()
    hasher.update(spec.structural_token().encode())
    hasher.update(b"\x00folds:" + ",".join(str(fold) for fold in folds).encode())
    for dep_name, dep in zip(spec.deps, instance.deps, strict=True):
        dep_key: InstanceKey = instance_key(dep, windows, nuisances, memo)
        hasher.update(f"\x00dep:{dep_name}={dep_key.signature}".encode())

    key: InstanceKey = InstanceKey(hasher.hexdigest(), instance.node_id, folds)
    if memo is not None:
        memo[id(instance)] = key
    return key


@dataclass
class CacheStats:
    """Fit and hit counters, totalled and broken down by nuisance id."""

    fit_calls: int = 0
    cache_hits: int = 0
    fit_calls_by_node: Counter[str] = field(default_factory=Counter)
    cache_hits_by_node: Counter[str] = field(default_factory=Counter)

    def record_fit(self, node_id: str) -> None:
        """Count one actual fit of ``node_id``."""
        self.fit_calls += 1
        self.fit_calls_by_node[node_id] += 1

    def record_hit(self, node_id: str) -> None:
        """Count one request of ``node_id`` served from the cache."""
        self.cache_hits += 1
        self.cache_hits_by_node[node_id] += 1


class FitCache:
    """Signature-keyed model store scoped to one repetition.

    Args:
        policy: ``selective``, ``all`` or ``none``; defaults to ``CROSSFIT_CACHE_POLICY``.
    """

    def __init__(self, policy: str | None = None) -> None:
        """Start empty with no planned requests."""
        resolved: str = policy or CACHE_POLICY
        if resolved not in CACHE_POLICIES:
            raise CrossfitError(
                ErrorCode.CONFIG_ERROR,
                f"Unknown cache policy {resolved!r}; available: {', '.join(sorted(CACHE_POLICIES))}",
            )
        self.policy: str = resolved
        self._models: dict[InstanceKey, Any] = {}
        self._remaining: Counter[InstanceKey] = Counter()
        self.stats: CacheStats = CacheStats()

    def __len__(self) -> int:
        return len(self._models)

    def __contains__(self, key: object) -> bool:
        return key in self._models

    def plan(self, keys: Iterable[InstanceKey]) -> None:
        """Register upcoming requests; each occurrence counts as one future use."""
        self._remaining.update(keys)

    def cancel(self, keys: Iterable[InstanceKey]) -> None:
        """Withdraw planned requests that will not be made (e.g. after a failure)."""
        for key in keys:
            if self._remaining[key] > 0:
                self._remaining[key] -= 1
            self._evict_if_spent(key)

    def fetch(self, key: InstanceKey, fit: Callable[[], Any], stats: CacheStats) -> Any:
        """Return the model for ``key``, calling ``fit`` only on a miss.

        ``stats`` is the requesting method's counter set; the cache keeps its own
        totals as well.
        """
        if key in self._models:
            model: Any = self._models[key]
            stats.record_hit(key.node_id)
            self.stats.record_hit(key.node_id)
        else:
            model = fit()
            stats.record_fit(key.node_id)
            self.stats.record_fit(key.node_id)
            if self.policy != "none":
                self._models[key] = model

        if self._remaining[key] > 0:
            self._remaining[key] -= 1
        self._evict_if_spent(key)
        return model

    def _evict_if_spent(self, key: InstanceKey) -> None:
        """Drop a selectively cached model once no planned request remains."""
        if self.policy == "selective" and self._remaining[key] <= 0 and key in self._models:
            del self._models[key]
            logger.debug("cache_evicted", key=str(key))
