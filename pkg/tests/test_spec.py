"""Tests for nuisance/method construction and ``validate_method``."""

from collections.abc import Callable

import numpy as np
import pytest

from crossfit.errors import CrossfitError, ErrorCode, SpecificationError
from crossfit.folds import Allocation
from crossfit.learners import constant
from crossfit.spec import (
    Mode,
    NuisanceSpec,
    assemble_method,
    create_method,
    create_nuisance,
    validate_method,
)


def _fit(data, **deps):
    """Trivial model."""
    return 0.0


def _predict(model, data, **deps):
    """Zeros per row."""
    return np.zeros(data.n_rows)


def _pair_target(data, nuis_a, nuis_b) -> float:
    """Target consuming two nuisances."""
    return 0.0


def _triangle_target(data, nui1, nui2) -> float:
    """Target of the triangle graph."""
    return 0.0


class TestCreateNuisance:
    """Node construction checks."""

    def test_no_deps(self) -> None:
        """A plain node has no dependencies."""
        spec = create_nuisance("nuis_m", _fit, _predict, train_fold=2)
        assert spec.deps == ()
        assert spec.train_fold == 2

    def test_one_dep(self) -> None:
        """A node may consume another node's predictions."""
        spec = create_nuisance("nuis_g_ps", _fit, _predict, deps=["nuis_m"])
        assert spec.deps == ("nuis_m",)

    def test_self_dependency(self) -> None:
        """A node may not depend on itself."""
        with pytest.raises(CrossfitError, match="self-dependency") as exc_info:
            create_nuisance("nuis_g_ps", _fit, _predict, deps=["nuis_g_ps"])
        assert exc_info.value.code is ErrorCode.INVALID_NUISANCE

    def test_empty_id(self) -> None:
        """The id must be non-empty."""
        with pytest.raises(CrossfitError, match="non-empty"):
            create_nuisance("  ", _fit, _predict)

    def test_train_fold_below_one(self) -> None:
        """Every node trains on at least one fold."""
        with pytest.raises(CrossfitError, match="train_fold"):
            create_nuisance("a", _fit, _predict, train_fold=0)

    def test_duplicate_deps(self) -> None:
        """Dependency names are distinct."""
        with pytest.raises(CrossfitError, match="duplicate"):
            create_nuisance("a", _fit, _predict, deps=["b", "b"])

    def test_structural_token_shared_by_parameters(self) -> None:
        """Nodes built from equal learner parameters share a structural token."""
        first = constant(1.0).nuisance("a")
        second = constant(1.0).nuisance("a")
        other = constant(2.0).nuisance("a")
        assert first.structural_token() == second.structural_token()
        assert first.structural_token() != other.structural_token()


class TestCreateMethod:
    """Construction-time validation."""

    def test_disjoint_pair_is_feasible(self) -> None:
        """Two width-2 nodes pack into the four folds left by K=5, eval_fold=1."""
        nuisances = {
            "nuis_a": create_nuisance("nuis_a", _fit, _predict, train_fold=2),
            "nuis_b": create_nuisance("nuis_b", _fit, _predict, train_fold=2),
        }
        method = create_method(_pair_target, nuisances, K=5, allocation="disjoint")
        assert method.allocation is Allocation.DISJOINT
        assert method.target_args == ("nuis_a", "nuis_b")

    def test_estimate_needs_eval_window(self) -> None:
        """Estimate mode with ``eval_fold=0`` is rejected."""
        nuisances = {"nuis_y": constant().nuisance("nuis_y")}
        with pytest.raises(SpecificationError) as exc_info:
            create_method(lambda data, nuis_y: 0.0, nuisances, K=2, eval_fold=0)
        assert "mode: estimate mode requires eval_fold ≥ 1" in exc_info.value.report.violations

    def test_missing_dependency(self) -> None:
        """A dependency without a mapping is a coverage violation naming it."""
        nuisances = {"nuis_y": create_nuisance("nuis_y", _fit, _predict, deps=["nuis_x"])}
        with pytest.raises(SpecificationError, match="nuis_x") as exc_info:
            create_method(lambda data, nuis_y: 0.0, nuisances, K=3)
        assert exc_info.value.code is ErrorCode.INVALID_METHOD

    def test_unknown_allocation(self) -> None:
        """Allocation names outside the three modes are rejected."""
        with pytest.raises(CrossfitError, match="sideways"):
            create_method(
                lambda data, nuis_y: 0.0,
                {"nuis_y": constant().nuisance("nuis_y")},
                allocation="sideways",
            )

    def test_predict_mode_defaults_to_predictor_aggregators(self) -> None:
        """Predict mode picks the predictor flavour of the default aggregators."""
        method = create_method(
            lambda data, nuis_y: nuis_y,
            {"nuis_y": constant().nuisance("nuis_y")},
            K=2,
            eval_fold=0,
            mode=Mode.PREDICT,
        )
        assert method.aggregate_panels.__name__ == "mean_predictor"
        assert method.aggregate_repeats.__name__ == "median_predictor"


class TestValidateMethod:
    """The five check families."""

    def test_cycle_reported(self) -> None:
        """A two-node cycle is reported as a path."""
        nuisances = {
            "A": create_nuisance("A", _fit, _predict, deps=["B"]),
            "B": create_nuisance("B", _fit, _predict, deps=["A"]),
        }
        report = validate_method(assemble_method(lambda data, A: 0.0, nuisances, K=5))
        assert "cycle: A→B→A" in report.violations
        assert report.min_folds_required is None

    def test_triangle_width_two_independence_infeasible(
        self, triangle: Callable[..., dict[str, NuisanceSpec]]
    ) -> None:
        """Three expanded width-2 instances need K ≥ 7."""
        method = assemble_method(
            _triangle_target, triangle(width=2), K=5, allocation="independence"
        )
        report = validate_method(method)
        assert not report.ok
        assert report.min_folds_required == 7
        assert any("requires K ≥ 7" in violation for violation in report.violations)

    @pytest.mark.parametrize(
        ("allocation", "K", "required"),
        [("independence", K, 7) for K in range(3, 8)] + [("disjoint", K, 5) for K in range(3, 6)],
    )
    def test_triangle_width_two_fold_sweep(
        self,
        allocation: str,
        K: int,
        required: int,
        triangle: Callable[..., dict[str, NuisanceSpec]],
    ) -> None:
        """The width-2 triangle is accepted exactly once ``K`` reaches its requirement."""
        method = assemble_method(_triangle_target, triangle(width=2), K=K, allocation=allocation)
        report = validate_method(method)
        assert report.min_folds_required == required
        assert report.ok is (K >= required)
        if K < required:
            assert any(f"requires K ≥ {required}" in violation for violation in report.violations)

    def test_triangle_width_one_independence_feasible(
        self, triangle: Callable[..., dict[str, NuisanceSpec]]
    ) -> None:
        """Three width-1 instances fit into K=5."""
        method = assemble_method(
            _triangle_target, triangle(width=1), K=5, allocation="independence"
        )
        report = validate_method(method)
        assert report.ok
        assert report.min_folds_required == 4

    def test_target_argument_without_mapping(self) -> None:
        """A required target argument must be a nuisance name."""
        method = assemble_method(
            _pair_target,
            {"nuis_a": constant().nuisance("nuis_a")},
            K=3,
            target_args=["nuis_a", "nuis_b"],
        )
        report = validate_method(method)
        assert "target: argument 'nuis_b' has no nuisance mapping" in report.violations

    def test_train_fold_exceeds_available(self) -> None:
        """A node cannot train on more folds than the eval window leaves."""
        method = assemble_method(
            lambda data, nuis_y: 0.0,
            {"nuis_y": constant().nuisance("nuis_y", train_fold=3)},
            K=3,
        )
        report = validate_method(method)
        assert any("train_fold=3" in violation for violation in report.violations)

    def test_eval_fold_not_below_k(self) -> None:
        """``eval_fold`` must be strictly below ``K``."""
        method = assemble_method(
            lambda data, nuis_y: 0.0, {"nuis_y": constant().nuisance("nuis_y")}, K=3, eval_fold=3
        )
        report = validate_method(method)
        assert any("eval_fold must be < K" in violation for violation in report.violations)

    def test_fit_argument_not_declared(self) -> None:
        """A ``fit`` requiring an undeclared dependency argument is a coverage violation."""

        def needs_m(data, nuis_m):
            """Fit that expects ``nuis_m``."""
            return 0.0

        method = assemble_method(
            lambda data, nuis_y: 0.0,
            {"nuis_y": create_nuisance("nuis_y", needs_m, _predict)},
            K=3,
        )
        report = validate_method(method)
        assert any("requires argument 'nuis_m'" in violation for violation in report.violations)

    def test_unreachable_node_warns(self) -> None:
        """Mapped nodes the target never reaches are warnings, not violations."""
        method = assemble_method(
            lambda data, nuis_y: 0.0,
            {"nuis_y": constant().nuisance("nuis_y"), "spare": constant().nuisance("spare")},
            K=3,
            target_args=["nuis_y"],
        )
        report = validate_method(method)
        assert report.ok
        assert report.warnings == ["nuisance 'spare' is not reachable from the target"]

    def test_report_serializes(self) -> None:
        """The report has a JSON-ready dict form."""
        method = assemble_method(
            lambda data, nuis_y: 0.0, {"nuis_y": constant().nuisance("nuis_y")}, K=3
        )
        assert validate_method(method).to_dict() == {
            "ok": True,
            "violations": [],
            "warnings": [],
            "min_folds_required": 2,
        }
