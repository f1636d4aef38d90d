"""Tests for experiment-config parsing and method assembly."""

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from crossfit.errors import CrossfitError, ErrorCode
from crossfit.folds import Allocation
from crossfit.models import (
    ExperimentConfig,
    build_method,
    build_methods,
    dump_config,
    load_config,
    load_data,
    parse_config,
)
from crossfit.spec import Mode, validate_method
from crossfit.tabular import Dataset


def _experiment(**overrides: Any) -> dict[str, Any]:
    """A valid two-method experiment over the PLR generator."""
    body: dict[str, Any] = {
        "data": {"kind": "dgp", "name": "plr", "params": {"n": 200}},
        "seed": 4,
        "methods": [
            {
                "name": "plr",
                "target": "plr",
                "K": 3,
                "nuisances": [
                    {"name": "nuis_g", "learner": {"name": "ols", "params": {"x": ["x1", "x2"]}}},
                    {
                        "name": "nuis_m",
                        "learner": {"name": "logistic", "params": {"y": "d", "x": ["x1"]}},
                    },
                ],
            },
            {
                "name": "propensity",
                "target": "identity_pred",
                "K": 3,
                "nuisances": [
                    {
                        "name": "nuis_m",
                        "learner": {"name": "logistic", "params": {"y": "d", "x": ["x1"]}},
                    }
                ],
            },
        ],
    }
    body.update(overrides)
    return body


class TestParseConfig:
    """Validation of the JSON experiment file."""

    def test_defaults(self) -> None:
        """Mode follows the target and eval_fold follows the mode."""
        config = parse_config(json.dumps(_experiment()))
        plr, propensity = config.methods
        assert (plr.resolved_mode(), plr.resolved_eval_fold()) == (Mode.ESTIMATE, 1)
        assert (propensity.resolved_mode(), propensity.resolved_eval_fold()) == (Mode.PREDICT, 0)
        assert plr.allocation is Allocation.OVERLAP

    def test_dump_is_parseable(self) -> None:
        """A dumped config parses back to an equal model."""
        config = parse_config(json.dumps(_experiment()))
        assert parse_config(dump_config(config)) == config

    def test_unknown_learner_detail(self) -> None:
        """Field errors carry the path to the offending value."""
        body = _experiment()
        body["methods"][0]["nuisances"][0]["learner"]["name"] = "forest"
        with pytest.raises(CrossfitError) as exc_info:
            parse_config(json.dumps(body))
        assert exc_info.value.code is ErrorCode.CONFIG_ERROR
        fields = [error["field"] for error in exc_info.value.details["errors"]]
        assert "methods → 0 → nuisances → 0 → learner → name" in fields

    def test_extra_field_rejected(self) -> None:
        """Unknown keys are errors, not silently ignored."""
        with pytest.raises(CrossfitError, match="folds"):
            parse_config(json.dumps(_experiment(folds=5)))

    def test_duplicate_method_names(self) -> None:
        """Method names must be unique."""
        body = _experiment()
        body["methods"][1]["name"] = "plr"
        with pytest.raises(CrossfitError, match="duplicate method names"):
            parse_config(json.dumps(body))

    def test_unknown_cache_policy(self) -> None:
        """Only the three cache policies are accepted."""
        with pytest.raises(CrossfitError, match="cache policy"):
            parse_config(json.dumps(_experiment(cache_policy="lru")))

    def test_invalid_json(self) -> None:
        """Syntax errors are config errors."""
        with pytest.raises(CrossfitError) as exc_info:
            parse_config("{not json")
        assert exc_info.value.code is ErrorCode.CONFIG_ERROR

    def test_missing_file(self, tmp_path: Path) -> None:
        """An unreadable config is an I/O error."""
        with pytest.raises(CrossfitError) as exc_info:
            load_config(tmp_path / "missing.json")
        assert exc_info.value.code is ErrorCode.IO_ERROR

    def test_unknown_method(self) -> None:
        """Looking up an unconfigured method lists the configured names."""
        config = parse_config(json.dumps(_experiment()))
        with pytest.raises(CrossfitError, match="plr, propensity") as exc_info:
            config.method_config("aipw")
        assert exc_info.value.code is ErrorCode.UNKNOWN_METHOD


class TestBuild:
    """Translation into methods and data."""

    def test_methods_validate(self) -> None:
        """Every method built from the sample config is valid."""
        config = parse_config(json.dumps(_experiment()))
        methods = build_methods(config)
        assert all(validate_method(method).ok for method in methods.values())
        assert methods["propensity"].mode is Mode.PREDICT

    def test_generator_data(self) -> None:
        """A dgp source draws ``n`` rows and returns its parameters."""
        config = parse_config(json.dumps(_experiment()))
        data, params = load_data(config, seed=4)
        assert data.n_rows == 200
        assert params is not None and params.seed == 4

    def test_csv_data_relative_to_config(
        self, tmp_path: Path, write_config: Callable[..., Path]
    ) -> None:
        """Relative CSV paths resolve against the config directory."""
        (tmp_path / "data.csv").write_text("y,d\n1,0\n2,1\n", encoding="utf-8")
        path = write_config(_experiment(data={"kind": "csv", "path": "data.csv"}))
        data, params = load_data(load_config(path), seed=0, base_dir=path.parent)
        assert data.names == ("y", "d")
        assert params is None

    def test_fold_column_splitter_shared(self) -> None:
        """Methods reading the same fold column share one splitter."""
        body = _experiment()
        for method in body["methods"]:
            method["fold_column"] = "fold"
        config = ExperimentConfig.model_validate(body)
        data = Dataset({"fold": np.arange(6) % 3, "y": np.zeros(6), "d": np.zeros(6)})
        methods = build_methods(config, data)
        assert methods["plr"].fold_split is methods["propensity"].fold_split
        assert methods["plr"].fold_split(6, 3, 0, 0).labels.tolist() == [0, 1, 2, 0, 1, 2]

    def test_fold_column_needs_data(self) -> None:
        """A fold column cannot be read without a dataset."""
        body = _experiment()
        body["methods"][0]["fold_column"] = "fold"
        config = ExperimentConfig.model_validate(body)
        with pytest.raises(CrossfitError, match="needs a dataset"):
            build_method(config.methods[0])

    def test_bad_generator_params(self) -> None:
        """Invalid generator parameters surface as config errors."""
        config = parse_config(json.dumps(_experiment(data={"kind": "dgp", "params": {"n": 1}})))
        with pytest.raises(CrossfitError) as exc_info:
            load_data(config, seed=0)
        assert exc_info.value.code is ErrorCode.CONFIG_ERROR
