"""
JSON scenario configs parsed into typed records.

A config either spells out a whole scenario or names a bundled one under ``"base"`` and
overrides some of its fields; overrides are deep-merged onto the bundled JSON before parsing.
Every validation failure raises :class:`~learnreach.exceptions.ConfigError` naming the dotted
path of the offending field.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple

from learnreach import constants, utils
from learnreach.exceptions import ConfigError, LearnReachError
from learnreach.gridspace import GridSpace, OccupancyMap, load_occupancy
from learnreach.human_models import HumanModelSpec
from learnreach.learner_dynamics import LearnerSpec
from learnreach.models import (
    Command,
    ControlRestriction,
    HumanKind,
    Intent,
    InterpolationMode,
    LearnerKind,
    QuerySpec,
    ScenarioKind,
    Strategy,
    TargetKind,
    TargetSpec,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

logger = logging.getLogger(__name__)

_MISSING = object()


def fixture_path(*parts: str) -> Path:
    """Path of a file bundled under ``learnreach/fixtures``."""
    return Path(str(resources.files(constants.PACKAGE_NAME).joinpath("fixtures", *parts)))


def catalog_names() -> list[str]:
    return sorted(p.stem for p in fixture_path("scenarios").glob("*.json"))


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """
    Recursively merges ``override`` onto ``base``; lists and scalars replace.

    >>> deep_merge({"a": {"b": 1, "c": 2}, "d": [1]}, {"a": {"c": 3}, "d": [2]})
    {'a': {'b': 1, 'c': 3}, 'd': [2]}
    """
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Section:
    """Typed access into one JSON object, reporting failures by dotted path."""

    def __init__(self, data: Any, path: str) -> None:  # noqa: ANN401
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected an object")
        self.data = data
        self.path = path

    def field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return self.data.get(key) is not None

    def raw(self, key: str, default: Any = _MISSING) -> Any:  # noqa: ANN401
        if key not in self.data or self.data[key] is None:
            if default is _MISSING:
                raise ConfigError(self.field(key), "required")
            return default
        return self.data[key]

    def section(self, key: str) -> Section:
        return Section(self.raw(key), self.field(key))

    def number(self, key: str, default: Any = _MISSING, *, positive: bool = False) -> float:  # noqa: ANN401
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(self.field(key), f"expected a finite number, got {value!r}")
        if positive and value <= 0:
            raise ConfigError(self.field(key), f"must be positive, got {value}")
        return float(value)

    def integer(self, key: str, default: Any = _MISSING, *, minimum: int = 0) -> int:  # noqa: ANN401
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(self.field(key), f"expected an integer, got {value!r}")
        if value < minimum:
            raise ConfigError(self.field(key), f"must be at least {minimum}, got {value}")
        return value

    def boolean(self, key: str, default: Any = _MISSING) -> bool:  # noqa: ANN401
        value = self.raw(key, default)
        if not isinstance(value, bool):
            raise ConfigError(self.field(key), f"expected true or false, got {value!r}")
        return value

    def string(self, key: str, default: Any = _MISSING) -> str:  # noqa: ANN401
        value = self.raw(key, default)
        if not isinstance(value, str):
            raise ConfigError(self.field(key), f"expected a string, got {value!r}")
        return value

    def numbers(
        self, key: str, default: Any = _MISSING, *, length: int | None = None  # noqa: ANN401
    ) -> tuple[float, ...]:
        value = self.raw(key, default)
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(self.field(key), f"expected a list of numbers, got {value!r}")
        if length is not None and len(value) != length:
            raise ConfigError(self.field(key), f"expected {length} numbers, got {len(value)}")
        return tuple(float(v) for v in value)

    def probability(self, key: str, default: Any = _MISSING) -> float:  # noqa: ANN401
        value = self.number(key, default)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(self.field(key), f"must lie in [0, 1], got {value}")
        return value

    def choice(self, key: str, enum: Callable[[str], Any], default: Any = _MISSING) -> Any:  # noqa: ANN401
        value = self.raw(key, default)
        try:
            return enum(value)
        except ValueError:
            raise ConfigError(self.field(key), f"unknown value {value!r}") from None

    def items(self, key: str) -> list[Section]:
        value = self.raw(key)
        if not isinstance(value, list) or not value:
            raise ConfigError(self.field(key), "expected a non-empty list")
        return [Section(v, f"{self.field(key)}[{i}]") for i, v in enumerate(value)]


class GridConfig(NamedTuple):
    lower: tuple[float, float]
    upper: tuple[float, float]
    cells: tuple[int, int]
    estimate_cells: int
    heading_cells: int | None = None
    """Heading nodes on [-pi, pi) for dubins3d humans."""

    def physical_grid(self, occupancy: OccupancyMap | None) -> GridSpace:
        lower, upper, cells, periodic = list(self.lower), list(self.upper), list(self.cells), [False, False]
        if self.heading_cells is not None:
            lower.append(-math.pi)
            upper.append(math.pi)
            cells.append(self.heading_cells)
            periodic.append(True)
        return GridSpace(lower, upper, cells, periodic, occupancy)

    def joint_grid(self, occupancy: OccupancyMap | None) -> GridSpace:
        physical = self.physical_grid(None)
        return GridSpace(
            (*physical.lower, 0.0),
            (*physical.upper, 1.0),
            (*physical.cells, self.estimate_cells),
            (*physical.periodic, False),
            occupancy,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "cells": list(self.cells),
            "estimate_cells": self.estimate_cells,
            "heading_cells": self.heading_cells,
        }


class ScenarioConfig(NamedTuple):
    name: str
    kind: ScenarioKind
    human: HumanModelSpec
    grid: GridConfig
    learner: LearnerSpec
    occupancy: OccupancyMap | None
    query: QuerySpec | None
    analysis: dict[str, Any]
    """Scenario-specific settings, validated by the runner that reads them."""
    resolved: dict[str, Any]
    """The merged JSON this config was parsed from."""
    description: str = ""

    def __repr__(self) -> str:
        return f"ScenarioConfig({self.name}, {self.kind!r})"

    def physical_grid(self) -> GridSpace:
        return self.grid.physical_grid(self.occupancy)

    def joint_grid(self) -> GridSpace:
        return self.grid.joint_grid(self.occupancy)

    def to_dict(self) -> dict[str, Any]:
        return copy.deepcopy(self.resolved)


class RunConfig(NamedTuple):
    command: Command
    out: Path
    config_path: Path | None = None
    scenario: str | None = None
    retain_slices: bool = False
    threads: int = 1
    interpolation: InterpolationMode = InterpolationMode.MULTILINEAR
    seed: int | None = None

    def __repr__(self) -> str:
        return f"RunConfig({self.command!r}, out={self.out})"

    def to_dict(self) -> dict[str, Any]:
        # threads is left out so that metadata stays identical across thread counts
        return {
            "command": self.command.value,
            "config": None if self.config_path is None else str(self.config_path),
            "scenario": self.scenario,
            "retain_slices": self.retain_slices,
            "interpolation": self.interpolation.value,
            "seed": self.seed,
        }


def _resolve_map(value: Any, source: Path | None) -> OccupancyMap | None:  # noqa: ANN401
    if value is None:
        return None
    spec = Section({"file": value} if isinstance(value, str) else value, "map")
    name = spec.string("file")
    meters = spec.number("meters_per_cell", None, positive=True) if spec.has("meters_per_cell") else None
    candidates = []
    if source is not None:
        candidates.append(source.parent / name)
    candidates.append(Path(name))
    candidates.append(fixture_path("maps", name if name.endswith(".txt") else f"{name}.txt"))
    for candidate in candidates:
        if candidate.is_file():
            try:
                return load_occupancy(candidate, meters)
            except LearnReachError as e:
                raise ConfigError("map.file", str(e)) from e
    raise ConfigError("map.file", f"no occupancy map named {name!r}")


def _parse_grid(section: Section, kind: HumanKind) -> GridConfig:
    lower = section.numbers("lower", length=2)
    upper = section.numbers("upper", length=2)
    cells = section.raw("cells")
    integers = isinstance(cells, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in cells)
    if not integers or len(cells) != 2:  # noqa: PLR2004
        raise ConfigError(section.field("cells"), f"expected 2 integers, got {cells!r}")
    for dim in range(2):
        if not lower[dim] < upper[dim]:
            raise ConfigError(section.field("upper"), f"dim {dim} upper {upper[dim]} not above lower {lower[dim]}")
        if cells[dim] < 2:  # noqa: PLR2004
            raise ConfigError(section.field("cells"), f"dim {dim} needs at least 2 nodes")
    heading_cells = None
    if kind == HumanKind.DUBINS3D:
        heading_cells = section.integer("heading_cells", minimum=1)
    return GridConfig(
        (lower[0], lower[1]),
        (upper[0], upper[1]),
        (cells[0], cells[1]),
        section.integer("estimate_cells", minimum=2),
        heading_cells,
    )


def _parse_intent(section: Section) -> Intent:
    goal = section.numbers("goal", None, length=2) if section.has("goal") else None
    return Intent(
        section.string("name"),
        None if goal is None else (goal[0], goal[1]),
        section.number("beta", constants.DEFAULT_BETA),
        section.probability("weight", 0.0),
    )


def _parse_human(section: Section) -> HumanModelSpec:
    kind = section.choice("kind", HumanKind)
    if section.has("actions"):
        actions = section.numbers("actions")
    elif kind == HumanKind.PEDESTRIAN2D:
        actions = utils.evenly_spaced_headings(section.integer("headings", constants.PEDESTRIAN_HEADINGS, minimum=1))
    else:
        actions = constants.DRIVING_TURN_RATES
    intents = tuple(_parse_intent(s) for s in section.items("intents"))
    names = [i.name for i in intents]
    if len(set(names)) != len(names):
        raise ConfigError(section.field("intents"), f"duplicate intent names {names}")
    if not actions or len(set(actions)) != len(actions):
        raise ConfigError(section.field("actions"), f"expected distinct actions, got {list(actions)}")
    return HumanModelSpec(
        kind,
        section.number("speed", positive=True),
        actions,
        section.number("dt", positive=True),
        intents,
        section.boolean("stop_action", kind == HumanKind.PEDESTRIAN2D),
        section.number("reward_scale", 1.0, positive=True),
    )


def _parse_learner(section: Section, intents: Sequence[Intent]) -> LearnerSpec:
    kind = section.choice("kind", LearnerKind)
    tracked = section.raw("tracked", 0)
    if isinstance(tracked, str):
        names = [i.name for i in intents]
        if tracked not in names:
            raise ConfigError(section.field("tracked"), f"unknown intent {tracked!r}")
        tracked = names.index(tracked)
    spec = LearnerSpec(
        kind,
        tracked,
        section.number("learning_rate", constants.DEFAULT_LEARNING_RATE, positive=True),
        section.integer("weight_nodes", 41, minimum=2),
    )
    if kind == LearnerKind.BAYES and not 0 <= spec.tracked < len(intents):
        raise ConfigError(section.field("tracked"), f"index {spec.tracked} not among {len(intents)} intents")
    return spec


def intent_index(value: Any, intents: Sequence[Intent], field: str) -> int:  # noqa: ANN401
    """An intent given by name or position."""
    names = [i.name for i in intents]
    if isinstance(value, str):
        if value not in names:
            raise ConfigError(field, f"unknown intent {value!r}")
        return names.index(value)
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < len(names):
        raise ConfigError(field, f"expected an intent name or index, got {value!r}")
    return value


def parse_target(section: Section) -> TargetSpec:
    kind = section.choice("kind", TargetKind)
    if kind == TargetKind.BELIEF_AT_LEAST:
        return TargetSpec.belief_at_least(section.probability("threshold", constants.CONFIDENCE_THRESHOLD))
    if kind == TargetKind.BELIEF_AT_MOST:
        return TargetSpec.belief_at_most(section.probability("threshold"))
    if kind == TargetKind.ESTIMATE_NEAR:
        return TargetSpec.estimate_near(section.probability("threshold"), section.number("epsilon", 0.0))
    raise ConfigError(section.field("kind"), "initial_set targets are built by the reach command")


def _parse_query(section: Section, human: HumanModelSpec) -> QuerySpec:
    restriction = None
    if section.has("restriction"):
        r = section.section("restriction")
        restriction = ControlRestriction(
            intent_index(r.raw("intent"), human.intents, r.field("intent")), r.probability("delta")
        )
    query = QuerySpec(
        parse_target(section.section("target")),
        section.choice("strategy", Strategy, Strategy.MINIMIZE.value),
        section.number("horizon", positive=True),
        section.number("dt", human.dt, positive=True),
        restriction,
    )
    if utils.steps_in_horizon(query.horizon, query.dt) is None:
        raise ConfigError(section.field("horizon"), f"{query.horizon} s is not a whole number of {query.dt} s steps")
    if abs(query.dt - human.dt) > constants.TIE_EPSILON:
        raise ConfigError(section.field("dt"), f"{query.dt} differs from human.dt {human.dt}")
    return query


def parse_scenario(data: Mapping[str, Any], source: Path | None = None) -> ScenarioConfig:
    """
    Parses one (already merged) scenario JSON object.

    Raises:
        ConfigError: a field is missing or invalid.
    """
    root = Section(dict(data), "")
    if root.has("base"):
        raise ConfigError("base", "must be resolved before parsing")
    kind = root.choice("kind", ScenarioKind)
    human = _parse_human(root.section("human"))
    occupancy = _resolve_map(data.get("map"), source)
    grid = _parse_grid(root.section("grid"), human.kind)
    learner = _parse_learner(root.section("learner"), human.intents)
    query = _parse_query(root.section("query"), human) if root.has("query") else None
    analysis = root.raw("analysis", {})
    if not isinstance(analysis, dict):
        raise ConfigError("analysis", "expected an object")

    config = ScenarioConfig(
        root.string("name"),
        kind,
        human,
        grid,
        learner,
        occupancy,
        query,
        analysis,
        dict(data),
        root.string("description", ""),
    )
    try:
        config.physical_grid()
    except LearnReachError as e:
        raise ConfigError("grid", str(e)) from e
    return config


def read_json(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config ({e.strerror})") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(str(path), "expected a JSON object")
    return data


def catalog_json(name: str) -> dict[str, Any]:
    path = fixture_path("scenarios", f"{name}.json")
    if not path.is_file():
        raise ConfigError("base" if name else "name", f"unknown scenario {name!r}; known: {catalog_names()}")
    return read_json(path)


def resolve(data: Mapping[str, Any]) -> dict[str, Any]:
    """Applies a ``base`` reference, if any."""
    if "base" not in data:
        return dict(data)
    base = data["base"]
    if not isinstance(base, str):
        raise ConfigError("base", f"expected a scenario name, got {base!r}")
    override = {k: v for k, v in data.items() if k != "base"}
    return deep_merge(resolve(catalog_json(base)), override)


def load_config(path: str | Path | None = None, *, base: str | None = None) -> ScenarioConfig:
    """
    Loads a scenario config from ``path``, a bundled scenario ``base``, or both (``path`` then
    overrides ``base``).
    """
    source = Path(path) if path is not None else None
    data: dict[str, Any] = read_json(source) if source is not None else {}
    if base is not None:
        data = {"base": base, **{k: v for k, v in data.items() if k != "base"}}
    if not data:
        raise ConfigError("config", "neither a config file nor a scenario name was given")
    config = parse_scenario(resolve(data), source)
    logger.debug("Loaded %r from %s", config, source or f"catalog:{base}")
    return config
