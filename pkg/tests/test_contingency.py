from __future__ import annotations

import math

import numpy as np
import pytest

from learnreach import contingency, scenarios
from learnreach.config import parse_scenario, resolve
from learnreach.contingency import ContingencySimConfig, CostWeights, RobotRoute
from learnreach.exceptions import ConfigError, NoSafePlanError
from learnreach.gridspace import OccupancyMap
from learnreach.human_models import HumanModel, restricted_controls
from learnreach.models import PlannerKind

ROUTE = RobotRoute((2.0, -6.0), -2.0, 4.0, -12.0)
DT = 0.0891
PRIORS = {"correct": 0.9, "incorrect": 0.1, "uniform": 0.5}


@pytest.fixture(scope="module")
def driver() -> HumanModel:
    data = resolve({"base": "driving", "grid": {"cells": [11, 13], "heading_cells": 8, "estimate_cells": 5}})
    return scenarios.build_system(parse_scenario(data)).model


def _config(**changes: object) -> ContingencySimConfig:
    config = ContingencySimConfig(
        route=ROUTE,
        initial_speed=6.0,
        human_start=(-2.0, 10.0, -0.5 * math.pi),
        true_goal=0,
        prior=0.5,
        branch_step=6,
        sim_steps=8,
    )
    return config._replace(**changes)


def test_route_pose() -> None:
    assert ROUTE.length == pytest.approx(14.0 + 2.0 * math.pi)
    np.testing.assert_allclose(ROUTE.pose(0.0), [2.0, -6.0, 0.5 * math.pi])
    np.testing.assert_allclose(ROUTE.pose(ROUTE.length), [-12.0, 2.0, math.pi])
    np.testing.assert_allclose(ROUTE.pose(1e3), ROUTE.pose(ROUTE.length))
    assert ROUTE.goal == (-12.0, 2.0)


def test_route_poses_are_continuous() -> None:
    s = np.linspace(0.0, ROUTE.length, 2001)
    poses = ROUTE.pose(s)
    steps = np.linalg.norm(np.diff(poses[:, :2], axis=0), axis=1)
    assert np.all(steps <= (s[1] - s[0]) + 1e-9)


@pytest.mark.parametrize(
    "route",
    [
        RobotRoute((2.0, -6.0), -7.0, 4.0, -12.0),
        RobotRoute((2.0, -6.0), -2.0, 0.0, -12.0),
        RobotRoute((2.0, -6.0), -2.0, 4.0, 0.0),
    ],
)
def test_route_validation(route: RobotRoute) -> None:
    with pytest.raises(ConfigError):
        route.validate()


def test_heuristic_branch_step() -> None:
    assert contingency.heuristic_branch_step(DT) == 4
    assert contingency.heuristic_branch_step(0.1, 0.3) == 3


def test_branch_beyond_the_horizon_is_rejected() -> None:
    with pytest.raises(ConfigError) as info:
        _config(branch_step=21).validate()
    assert info.value.field == "branch_step"
    _config(branch_step=20).validate()


def test_empty_library_is_rejected() -> None:
    with pytest.raises(ConfigError):
        _config(accelerations=()).validate()


def test_plan_library() -> None:
    config = _config(initial_speed=0.0, branch_step=5)
    arc, applied = contingency.plan_library(config, 0.0, 0.0, DT)
    count = len(config.accelerations)
    assert config.library_size == count * count
    assert arc.shape == applied.shape == (count, count, config.horizon_steps)
    assert np.all(np.diff(arc, axis=-1) >= 0.0)
    assert np.all(arc <= ROUTE.length)
    accels = np.asarray(config.accelerations)
    np.testing.assert_array_equal(applied[:, 3, :5], np.repeat(accels[:, None], 5, axis=1))
    np.testing.assert_array_equal(applied[3, :, 5:], np.repeat(accels[:, None], 15, axis=1))


def test_unhindered_robot_accelerates() -> None:
    config = _config(initial_speed=0.0, weights=CostWeights(smoothness=0.0))
    far = np.full((config.horizon_steps, 2), 1e3)
    for belief in (0.1, 0.5, 0.9):
        assert contingency.choose_plan(config, 0.0, 0.0, DT, [far, far], belief) == (12, 12)


def test_shared_segment_hedges_against_both_intents() -> None:
    config = _config(initial_speed=0.0, branch_step=20, weights=CostWeights(smoothness=0.0))
    far = np.full((config.horizon_steps, 2), 1e3)
    blocking = np.tile(ROUTE.pose(2.0)[:2], (config.horizon_steps, 1))
    free = contingency.choose_plan(config, 0.0, 0.0, DT, [far, far], 0.99)
    hedged = contingency.choose_plan(config, 0.0, 0.0, DT, [far, blocking], 0.99)
    assert free[0] == 12
    assert hedged[0] < free[0]


def test_every_plan_blocked_is_an_error() -> None:
    config = _config()
    far = np.full((config.horizon_steps, 2), 1e3)
    walls = OccupancyMap.from_rows([[1]], 1.0)
    with pytest.raises(NoSafePlanError, match="occupied"):
        contingency.choose_plan(config, 0.0, 6.0, DT, [far, far], 0.5, walls)


def test_blocked_plans_are_never_chosen() -> None:
    config = _config()
    far = np.full((config.horizon_steps, 2), 1e3)
    # the lane is free for the first 1.5 m only
    lane = [1, 1, 1, 1, 1, 0, 1, 1]
    road = OccupancyMap.from_rows([[1] * 8, lane, lane, [1] * 8], 1.0, origin=(-3.0, -7.5))
    i, j = contingency.choose_plan(config, 0.0, 2.0, DT, [far, far], 0.5, road)
    arc, _ = contingency.plan_library(config, 0.0, 2.0, DT)
    assert float(arc[i, j, -1]) < 1.5


def test_trial_configs() -> None:
    trials = contingency.trial_configs(_config(), [6.0, 7.0, 8.0], PRIORS)
    assert len(trials) == 18
    assert len({config.seed for _, config in trials}) == 18
    for kind, config in trials:
        on_truth = config.prior if config.true_goal == 0 else 1.0 - config.prior
        assert on_truth == pytest.approx(PRIORS[kind])


def test_sampled_actions_respect_the_restriction(driver: HumanModel) -> None:
    rng = np.random.default_rng(0)
    table = driver.likelihoods[0]
    x = (-2.0, 10.0, -0.5 * math.pi)
    best = int(np.argmax(table.at(x)))
    assert {contingency.sample_action(rng, table, x, 1.0) for _ in range(20)} == {best}
    allowed = set(restricted_controls(table, x, 0.27))
    assert {contingency.sample_action(rng, table, x, 0.27) for _ in range(50)} <= allowed


def test_simulation_is_deterministic_per_seed(driver: HumanModel) -> None:
    config = _config(seed=3)
    first = contingency.run_contingency_sim(config, driver)
    second = contingency.run_contingency_sim(config, driver)
    assert first.trace == second.trace
    assert first.metrics == second.metrics
    assert len(first.trace) == config.sim_steps + 1
    assert first.trace[-1].plan == -1
    assert all(1e-3 <= step.belief <= 0.999 for step in first.trace)
    assert all(0.0 <= step.speed <= config.max_speed for step in first.trace)


def test_simulation_rejects_a_late_branch(driver: HumanModel) -> None:
    with pytest.raises(ConfigError):
        contingency.run_contingency_sim(_config(branch_step=25), driver)


def test_batch_is_identical_across_workers(driver: HumanModel) -> None:
    trials = contingency.trial_configs(_config(sim_steps=4), [6.0], {"uniform": 0.5})
    steps = {PlannerKind.SAFEGUARD_BOTH: [20, 20], PlannerKind.HEURISTIC: [4, 4]}
    serial = contingency.run_contingency_batch(driver, trials, steps)
    threaded = contingency.run_contingency_batch(driver, trials, steps, workers=3)
    assert [(t.planner, t.prior_kind, t.result.metrics) for t in serial] == [
        (t.planner, t.prior_kind, t.result.metrics) for t in threaded
    ]
    assert [t.result.config.branch_step for t in serial] == [20, 20, 4, 4]

    summary = contingency.batch_summary(serial)
    assert [(row.planner, row.prior_kind, row.trials) for row in summary] == [
        ("safeguard-both", "uniform", 2),
        ("safeguard-both", "all", 2),
        ("heuristic", "uniform", 2),
        ("heuristic", "all", 2),
    ]
    safety = [t.result.metrics.safety for t in serial[:2]]
    assert summary[0].safety_min == min(safety)
    assert summary[0].safety_mean == pytest.approx(np.mean(safety))
