"""Tests for instance keys and the per-repetition fit cache."""

import pytest

from crossfit.cache import CacheStats, FitCache, InstanceKey, instance_key
from crossfit.errors import CrossfitError, ErrorCode
from crossfit.folds import NuisanceInstance, Window
from crossfit.learners import constant


def _key(name: str) -> InstanceKey:
    """A key with a readable signature."""
    return InstanceKey(f"sig-{name}", name, (0,))


class _Counter:
    """Fit callable that counts its invocations."""

    def __init__(self) -> None:
        """Start at zero."""
        self.calls = 0

    def __call__(self) -> str:
        """Return a fresh model."""
        self.calls += 1
        return f"model-{self.calls}"


class TestInstanceKey:
    """Signatures over node, window and upstream context."""

    def setup_method(self) -> None:
        """A two-node chain: ``child`` consumes ``parent``."""
        self.nuisances = {
            "parent": constant(1.0).nuisance("parent"),
            "child": constant(2.0).nuisance("child", deps=("parent",)),
        }
        self.parent = NuisanceInstance("parent", (), (), 1)
        self.child = NuisanceInstance("child", (), (self.parent,), 1)

    def test_same_folds_from_different_starts(self) -> None:
        """Full-width windows starting at different folds share a key."""
        first = {self.parent: Window(0, 5, 5)}
        second = {self.parent: Window(3, 5, 5)}
        assert instance_key(self.parent, first, self.nuisances) == instance_key(
            self.parent, second, self.nuisances
        )

    def test_different_folds_differ(self) -> None:
        """Windows over different folds give different keys."""
        first = {self.parent: Window(4, 2, 5)}
        second = {self.parent: Window(0, 2, 5)}
        assert instance_key(self.parent, first, self.nuisances) != instance_key(
            self.parent, second, self.nuisances
        )

    def test_upstream_window_changes_key(self) -> None:
        """The child's key depends on where its parent was trained."""
        first = {self.parent: Window(1, 1, 5), self.child: Window(2, 1, 5)}
        second = {self.parent: Window(3, 1, 5), self.child: Window(2, 1, 5)}
        assert instance_key(self.child, first, self.nuisances) != instance_key(
            self.child, second, self.nuisances
        )

    def test_equal_context_equal_key(self) -> None:
        """Identical node, folds and upstream keys give identical keys."""
        windows = {self.parent: Window(1, 1, 5), self.child: Window(2, 1, 5)}
        copy = NuisanceInstance("child", ("target",), (self.parent,), 1)
        windows[copy] = Window(2, 1, 5)
        assert instance_key(self.child, windows, self.nuisances) == instance_key(
            copy, windows, self.nuisances
        )

    def test_sorted_window_recorded(self) -> None:
        """Keys carry the node id and the sorted fold list for reporting."""
        key = instance_key(self.parent, {self.parent: Window(4, 2, 5)}, self.nuisances)
        assert key.node_id == "parent"
        assert key.window == (0, 4)


class TestFitCache:
    """Policies and counters."""

    def test_selective_evicts_after_last_use(self) -> None:
        """A model stays cached until its planned uses run out."""
        cache = FitCache("selective")
        key = _key("a")
        cache.plan([key, key])
        fit = _Counter()
        stats = CacheStats()
        assert cache.fetch(key, fit, stats) == "model-1"
        assert key in cache
        assert cache.fetch(key, fit, stats) == "model-1"
        assert key not in cache
        assert fit.calls == 1
        assert (stats.fit_calls, stats.cache_hits) == (1, 1)

    def test_all_keeps_models(self) -> None:
        """``all`` never evicts within the repetition."""
        cache = FitCache("all")
        key = _key("a")
        cache.plan([key])
        cache.fetch(key, _Counter(), CacheStats())
        assert key in cache

    def test_none_always_refits(self) -> None:
        """``none`` calls fit for every request."""
        cache = FitCache("none")
        key = _key("a")
        cache.plan([key, key])
        fit = _Counter()
        stats = CacheStats()
        cache.fetch(key, fit, stats)
        cache.fetch(key, fit, stats)
        assert fit.calls == 2
        assert stats.cache_hits == 0
        assert len(cache) == 0

    def test_cancel_releases_planned_use(self) -> None:
        """Cancelling the remaining request evicts the model early."""
        cache = FitCache("selective")
        key = _key("a")
        cache.plan([key, key])
        cache.fetch(key, _Counter(), CacheStats())
        cache.cancel([key])
        assert key not in cache

    def test_counters_by_node(self) -> None:
        """Per-node counters mirror the totals."""
        cache = FitCache("selective")
        a, b = _key("a"), _key("b")
        cache.plan([a, a, b])
        stats = CacheStats()
        for key in (a, a, b):
            cache.fetch(key, _Counter(), stats)
        assert stats.fit_calls_by_node == {"a": 1, "b": 1}
        assert stats.cache_hits_by_node == {"a": 1}
        assert cache.stats.fit_calls == 2

    def test_unknown_policy(self) -> None:
        """Only the three policies exist."""
        with pytest.raises(CrossfitError) as exc_info:
            FitCache("sometimes")
        assert exc_info.value.code is ErrorCode.CONFIG_ERROR
