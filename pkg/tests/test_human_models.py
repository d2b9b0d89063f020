from __future__ import annotations

import heapq
import math
from pathlib import Path

import numpy as np
import pytest

from learnreach import constants, utils
from learnreach.config import fixture_path
from learnreach.exceptions import InconsistentSpecError, UnreachableGoalError
from learnreach.gridspace import GridSpace, OccupancyMap, load_occupancy
from learnreach.human_models import (
    HumanModel,
    HumanModelSpec,
    LikelihoodTable,
    QTable,
    QTableCache,
    build_q_table,
    likelihood,
    pedestrian_actions,
    restricted_controls,
    step_dubins,
    step_pedestrian,
)
from learnreach.models import HumanKind, Intent

CELL = 0.25
SIDE = 20
GOAL = (4.375, 2.375)


@pytest.fixture(scope="module")
def walled() -> OccupancyMap:
    mask = np.zeros((SIDE, SIDE), dtype=bool)
    mask[5:16, 10] = True
    return OccupancyMap(mask, CELL)


@pytest.fixture(scope="module")
def walled_grid(walled: OccupancyMap) -> GridSpace:
    half = CELL / 2
    return GridSpace([half, half], [SIDE * CELL - half] * 2, [SIDE, SIDE], occupancy=walled)


def walker(*intents: Intent, stop: bool = True) -> HumanModelSpec:
    return HumanModelSpec(HumanKind.PEDESTRIAN2D, 0.5, pedestrian_actions(), 0.5, intents, stop, reward_scale=20.0)


def dijkstra(occupancy: OccupancyMap, goal: tuple[float, float]) -> dict[tuple[int, int], float]:
    rows, cols = occupancy.shape
    start = tuple(int(v[0]) for v in occupancy.cells_of([goal])[:2])
    dist = {start: 0.0}
    heap = [(0.0, start)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[(r, c)]:
            continue
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if (dr, dc) == (0, 0) or not (0 <= nr < rows and 0 <= nc < cols) or occupancy.mask[nr, nc]:
                    continue
                nd = d + occupancy.meters_per_cell * math.hypot(dr, dc)
                if nd < dist.get((nr, nc), math.inf):
                    dist[(nr, nc)] = nd
                    heapq.heappush(heap, (nd, (nr, nc)))
    return dist


def test_dubins_steps() -> None:
    assert step_dubins((0.0, 0.0, 0.0), 0.0, 6.0, 0.0891) == pytest.approx((0.5346, 0.0, 0.0))
    x, y, heading = step_dubins((0.0, 0.0, math.pi / 2), 0.0, 6.0, 0.0891)
    assert (x, y, heading) == pytest.approx((0.0, 0.5346, math.pi / 2))
    assert step_dubins((0.0, 0.0, 0.0), 3.5, 6.0, 0.0891)[2] == pytest.approx(0.31185)


def test_dubins_heading_wraps() -> None:
    heading = step_dubins((0.0, 0.0, 3.1), 3.5, 6.0, 0.0891)[2]
    assert -math.pi <= heading < math.pi
    assert heading == pytest.approx(3.1 + 0.31185 - 2 * math.pi)


def test_pedestrian_steps() -> None:
    assert step_pedestrian((0.0, 0.0), 0.0, 0.6, 0.4545) == pytest.approx((0.2727, 0.0))
    assert step_pedestrian((0.0, 0.0), math.pi, 0.6, 0.4545) == pytest.approx((-0.2727, 0.0))


def test_stop_action_keeps_the_state() -> None:
    spec = walker(Intent("a", GOAL), Intent("b", GOAL))
    stop = spec.action_count - 1
    assert spec.is_stop(stop)
    assert spec.action_label(stop) == "stop"
    assert spec.step((1.0, 2.0), stop) == (1.0, 2.0)


def test_vectorized_successors_match_scalar_steps() -> None:
    spec = HumanModelSpec(HumanKind.DUBINS3D, 6.0, constants.DRIVING_TURN_RATES, 0.0891, (Intent("g1"), Intent("g2")))
    points = np.random.default_rng(0).uniform([-5.0, -5.0, -math.pi], [5.0, 5.0, math.pi], size=(20, 3))
    successors = spec.successors(points)
    for a in range(spec.action_count):
        for p, point in enumerate(points):
            assert successors[a, p] == pytest.approx(spec.step(point, a))


@pytest.mark.parametrize(
    "changes",
    [
        {"actions": ()},
        {"actions": (0.0, 0.0)},
        {"speed": -1.0},
        {"dt": 0.0},
        {"intents": (Intent("only", GOAL),)},
    ],
)
def test_spec_validation(changes: dict[str, object]) -> None:
    spec = walker(Intent("a", GOAL), Intent("b", GOAL))._replace(**changes)
    with pytest.raises(InconsistentSpecError):
        spec.validate()


def test_argmax_q_follows_shortest_paths(walled: OccupancyMap, walled_grid: GridSpace) -> None:
    spec = walker(Intent("goal", GOAL), Intent("other", GOAL))
    table = build_q_table(walled_grid, spec, spec.intents[0])
    assert table.converged
    oracle = dijkstra(walled, GOAL)

    nodes = walled_grid.nodes()
    rows, cols, _ = walled.cells_of(nodes)
    agree = total = 0
    for index, (r, c) in enumerate(zip(rows.tolist(), cols.tolist())):
        here = oracle.get((r, c), math.inf)
        if walled.mask[r, c] or here in (0.0, math.inf):
            continue
        best = int(np.argmax(table.values[index]))
        successor = walled_grid.clip([spec.step(nodes[index], best)])
        sr, sc, _ = walled.cells_of(successor)
        total += 1
        agree += oracle.get((int(sr[0]), int(sc[0])), math.inf) < here
    assert total > 300
    assert agree / total >= 0.95


def test_staying_is_best_at_the_goal(walled_grid: GridSpace) -> None:
    spec = walker(Intent("goal", GOAL), Intent("other", GOAL))
    table = build_q_table(walled_grid, spec, spec.intents[0])
    q = table.at([GOAL])
    assert int(np.argmax(q)) == spec.action_count - 1


def test_blocked_moves_are_penalized(walled_grid: GridSpace) -> None:
    spec = walker(Intent("goal", GOAL), Intent("other", GOAL))
    table = build_q_table(walled_grid, spec, spec.intents[0])
    # east of (2.375, 2.375) is the wall column
    east = pedestrian_actions().index(0.0)
    assert table.at([(2.375, 2.375)])[east] == -constants.LARGE


def test_soft_value_iteration_converges_on_the_bookstore() -> None:
    occupancy = load_occupancy(fixture_path("maps", "bookstore.txt"))
    m = occupancy.meters_per_cell
    grid = GridSpace([m / 2, m / 2], [100 * m - m / 2] * 2, [100, 100], occupancy=occupancy)
    spec = HumanModelSpec(
        HumanKind.PEDESTRIAN2D,
        constants.PEDESTRIAN_SPEED,
        pedestrian_actions(),
        constants.CONFIDENCE_DT,
        (Intent("goal", (6.0, 11.0)), Intent("other", (6.0, 11.0))),
        stop_action=True,
    )
    table = build_q_table(grid, spec, spec.intents[0])
    assert table.converged
    assert table.sweeps <= constants.SOFT_VI_MAX_SWEEPS


def test_goal_must_be_free(walled_grid: GridSpace) -> None:
    spec = walker(Intent("wall", (2.625, 2.375)), Intent("other", GOAL))
    with pytest.raises(UnreachableGoalError):
        build_q_table(walled_grid, spec, spec.intents[0])


def test_goal_is_required(walled_grid: GridSpace) -> None:
    spec = walker(Intent("nowhere"), Intent("other", GOAL))
    with pytest.raises(InconsistentSpecError):
        build_q_table(walled_grid, spec, spec.intents[0])


def test_cache_round_trip(tmp_path: Path, walled_grid: GridSpace) -> None:
    spec = walker(Intent("goal", GOAL), Intent("other", GOAL))
    cache = QTableCache(tmp_path / "cache")
    first = build_q_table(walled_grid, spec, spec.intents[0], cache=cache)
    assert len(list((tmp_path / "cache").glob("q-*.npz"))) == 1
    second = build_q_table(walled_grid, spec, spec.intents[0], cache=cache)
    np.testing.assert_array_equal(first.values, second.values)
    assert second.sweeps == first.sweeps


def test_cache_from_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.delenv(constants.CACHE_ENV_VAR, raising=False)
    assert QTableCache.from_env() is None
    monkeypatch.setenv(constants.CACHE_ENV_VAR, str(tmp_path))
    cache = QTableCache.from_env()
    assert cache is not None
    assert cache.directory == tmp_path


def test_intents_with_one_goal_share_a_table(walled_grid: GridSpace) -> None:
    spec = walker(Intent("beta0", GOAL, beta=0.0), Intent("beta1", GOAL, beta=1.0))
    model = HumanModel.build(spec, walled_grid)
    assert model.q_tables[0].values is model.q_tables[1].values
    np.testing.assert_array_equal(model.likelihoods[0].probs, 1.0 / spec.action_count)
    assert model.intent_index("beta1") == 1
    with pytest.raises(KeyError):
        model.intent_index("beta2")


def _node_points() -> list[tuple[float, float]]:
    axis = [0.0, 1 / 3, 2 / 3, 1.0]
    return [(x, y) for x in axis for y in axis]


def _random_table(seed: int, actions: int = 4, beta: float = 1.0) -> QTable:
    grid = GridSpace([0.0, 0.0], [1.0, 1.0], [4, 4])
    values = np.random.default_rng(seed).normal(scale=3.0, size=(grid.node_count, actions))
    return QTable(Intent("random"), beta, grid, values)


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0, 5.0, 50.0])
def test_likelihoods_sum_to_one(beta: float) -> None:
    table = LikelihoodTable.from_q_table(_random_table(0), beta)
    np.testing.assert_allclose(table.probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-12)


def test_zero_beta_is_uniform() -> None:
    table = LikelihoodTable.from_q_table(_random_table(1), 0.0)
    for a in range(4):
        assert likelihood(table, [0.5, 0.5], a) == 0.25


def test_equal_values_split_evenly() -> None:
    grid = GridSpace([0.0], [1.0], [2])
    table = LikelihoodTable.from_q_table(QTable(Intent("flat"), 1.0, grid, np.full((2, 2), 3.0)))
    assert likelihood(table, [0.0], 0) == pytest.approx(0.5)
    assert likelihood(table, [1.0], 1) == pytest.approx(0.5)


def test_driving_action_likelihoods_sum_to_one() -> None:
    grid = GridSpace([-8.0, -12.0, -math.pi], [12.0, 12.0, math.pi], [11, 13, 16], [False, False, True])
    values = np.random.default_rng(2).normal(size=(grid.node_count, len(constants.DRIVING_TURN_RATES)))
    table = LikelihoodTable.from_q_table(QTable(Intent("g1"), 1.0, grid, values))
    states = np.random.default_rng(3).uniform([-8.0, -12.0, -math.pi], [12.0, 12.0, math.pi], size=(50, 3))
    for x in states:
        total = sum(likelihood(table, x, a) for a in range(len(constants.DRIVING_TURN_RATES)))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_higher_beta_never_lowers_the_best_action() -> None:
    q = _random_table(4)
    best = np.argmax(q.values, axis=1)
    previous = None
    for beta in (0.0, 0.25, 1.0, 2.0, 8.0):
        probs = LikelihoodTable.from_q_table(q, beta).probs[np.arange(len(best)), best]
        if previous is not None:
            assert np.all(probs >= previous - 1e-12)
        previous = probs


def test_restricted_controls_bounds() -> None:
    table = LikelihoodTable.from_q_table(_random_table(5))
    for x in _node_points():
        assert restricted_controls(table, x, 0.0) == (0, 1, 2, 3)
        assert restricted_controls(table, x, 1.0) == (int(np.argmax(table.at(x))),)


def test_restricted_controls_shrink_with_delta() -> None:
    table = LikelihoodTable.from_q_table(_random_table(6))
    deltas = np.linspace(0.0, 1.0, 21)
    for x in _node_points():
        sets = [set(restricted_controls(table, x, d)) for d in deltas]
        for loose, tight in zip(sets, sets[1:]):
            assert tight <= loose


def test_restricted_mask_matches_scalar_sets() -> None:
    table = LikelihoodTable.from_q_table(_random_table(7))
    for delta in (0.0, 0.15, 0.27, 0.6, 1.0):
        mask = table.restricted_mask(delta)
        for node, x in enumerate(table.grid.nodes()):
            assert tuple(np.flatnonzero(mask[node]).tolist()) == restricted_controls(table, x, delta)


def test_pedestrian_actions_are_evenly_spaced() -> None:
    headings = pedestrian_actions(8)
    assert headings == utils.evenly_spaced_headings(8)
    assert headings[0] == -math.pi
    assert np.diff(headings) == pytest.approx([math.pi / 4] * 7)
