from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from learnreach.config import RunConfig, catalog_names, deep_merge, load_config, parse_scenario, resolve
from learnreach.exceptions import ConfigError
from learnreach.models import (
    Command,
    ControlRestriction,
    HumanKind,
    LearnerKind,
    ScenarioKind,
    Strategy,
    TargetKind,
)


def _write(tmp_path: Path, data: dict[str, Any]) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_catalog_names() -> None:
    assert catalog_names() == ["confidence", "driving", "gradient-init", "legibility"]


@pytest.mark.parametrize(
    ("name", "kind", "dt"),
    [
        ("confidence", ScenarioKind.CONFIDENCE, 0.4545),
        ("driving", ScenarioKind.DRIVING, 0.0891),
        ("gradient-init", ScenarioKind.GRADIENT_INIT, 0.2469),
        ("legibility", ScenarioKind.LEGIBILITY, 0.4545),
    ],
)
def test_bundled_scenarios_parse(name: str, kind: ScenarioKind, dt: float) -> None:
    config = load_config(base=name)
    assert config.name == name
    assert config.kind == kind
    assert config.human.dt == dt
    assert config.occupancy is not None
    assert config.to_dict() == resolve({"base": name})


def test_confidence_intents_differ_only_in_beta() -> None:
    config = load_config(base="confidence")
    assert [i.beta for i in config.human.intents] == [0.0, 1.0]
    assert config.human.intents[0].goal == config.human.intents[1].goal
    assert config.learner.kind == LearnerKind.BAYES
    assert config.learner.tracked == 0


def test_driving_query() -> None:
    config = load_config(base="driving")
    assert config.human.kind == HumanKind.DUBINS3D
    assert config.grid.heading_cells == 16
    assert config.query is not None
    assert config.query.strategy == Strategy.MAXIMIZE
    assert config.query.steps == 20
    assert config.query.restriction == ControlRestriction(0, 0.27)
    assert config.query.target.kind == TargetKind.BELIEF_AT_LEAST
    assert config.joint_grid().ndim == 4


def test_gradient_init_has_no_query() -> None:
    config = load_config(base="gradient-init")
    assert config.query is None
    assert config.learner.kind == LearnerKind.GRADIENT
    assert config.learner.weight_nodes == 41


def test_override_merges_onto_base(tmp_path: Path) -> None:
    path = _write(tmp_path, {"base": "confidence", "grid": {"cells": [11, 11], "estimate_cells": 6}})
    config = load_config(path)
    assert config.grid.cells == (11, 11)
    assert config.grid.estimate_cells == 6
    assert config.grid.lower == (0.0, 0.0)
    assert config.human.speed == 0.6


def test_base_argument_wins_over_the_file(tmp_path: Path) -> None:
    path = _write(tmp_path, {"base": "confidence", "description": "mine"})
    config = load_config(path, base="legibility")
    assert config.name == "legibility"
    assert config.description == "mine"


def test_deep_merge_leaves_inputs_alone() -> None:
    base = {"a": {"b": [1, 2]}}
    merged = deep_merge(base, {"a": {"c": 1}})
    merged["a"]["b"].append(3)
    assert base == {"a": {"b": [1, 2]}}


def test_missing_file_names_the_path(tmp_path: Path) -> None:
    path = tmp_path / "nope.json"
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == str(path)


def test_invalid_json(tmp_path: Path) -> None:
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)


def test_nothing_to_load() -> None:
    with pytest.raises(ConfigError):
        load_config()


@pytest.mark.parametrize(
    ("override", "field"),
    [
        ({"base": "nowhere"}, "base"),
        ({"kind": "flying"}, "kind"),
        ({"human": {"speed": -1.0}}, "human.speed"),
        ({"human": {"dt": "fast"}}, "human.dt"),
        ({"grid": {"cells": [1, 11]}}, "grid.cells"),
        ({"grid": {"upper": [0.0, 12.0]}}, "grid.upper"),
        ({"grid": {"estimate_cells": 1}}, "grid.estimate_cells"),
        ({"learner": {"tracked": "beta7"}}, "learner.tracked"),
        ({"query": {"horizon": 1.0}}, "query.horizon"),
        ({"query": {"dt": 0.5, "horizon": 5.0}}, "query.dt"),
        ({"query": {"strategy": "sideways"}}, "query.strategy"),
        ({"query": {"target": {"kind": "belief_at_least", "threshold": 1.5}}}, "query.target.threshold"),
        ({"query": {"restriction": {"intent": "nobody", "delta": 0.1}}}, "query.restriction.intent"),
        ({"map": "no-such-map"}, "map.file"),
        ({"grid": {"upper": [30.0, 12.0]}}, "grid"),
    ],
)
def test_invalid_fields_are_named(tmp_path: Path, override: dict[str, Any], field: str) -> None:
    data = {"base": "confidence", **override} if "base" not in override else override
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, data))
    assert info.value.field == field


def test_duplicate_intent_names(tmp_path: Path) -> None:
    intents = [{"name": "a", "goal": [6.0, 11.0]}, {"name": "a", "goal": [6.0, 1.0]}]
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, {"base": "confidence", "human": {"intents": intents}}))
    assert info.value.field == "human.intents"


def test_unresolved_base_is_rejected() -> None:
    with pytest.raises(ConfigError):
        parse_scenario({"base": "confidence"})


def test_map_relative_to_the_config(tmp_path: Path) -> None:
    (tmp_path / "room.txt").write_text("0 0 0\n0 1 0\n0 0 0\n", encoding="utf-8")
    data = {
        "base": "legibility",
        "map": {"file": "room.txt", "meters_per_cell": 4.0},
        "grid": {"lower": [0.0, 0.0], "upper": [12.0, 12.0], "cells": [7, 7]},
    }
    config = load_config(_write(tmp_path, data))
    assert config.occupancy is not None
    assert config.occupancy.shape == (3, 3)
    assert config.occupancy.is_occupied(6.0, 6.0)


def test_run_config_metadata_ignores_threads() -> None:
    one = RunConfig(Command.TTL, Path("out"), threads=1)
    many = one._replace(threads=8)
    assert one.to_dict() == many.to_dict()
    assert one.to_dict()["command"] == "ttl"
