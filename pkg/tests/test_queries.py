from __future__ import annotations

import math

import numpy as np
import pytest

from learnreach import queries, reach_solver
from learnreach.exceptions import UnreachableWithinHorizonError
from learnreach.learner_dynamics import bayes_update
from learnreach.models import (
    BehaviorMode,
    ControlRestriction,
    InterpolationMode,
    JointState,
    QuerySpec,
    ReachabilityHeatmap,
    Strategy,
    TargetSpec,
)
from tests.helpers import BELIEFS, PLANAR, random_system

STATES = [(x, y) for x in (0.0, 0.5, 1.0, 1.5, 2.0) for y in (0.0, 1.0, 2.0)]
PRIORS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]


def _query(strategy: Strategy = Strategy.MINIMIZE, threshold: float = 0.9) -> QuerySpec:
    return QuerySpec(TargetSpec.belief_at_least(threshold), strategy, 3.0, 0.5)


def test_everything_already_learned() -> None:
    report, _ = queries.ttl_sweep(_query(threshold=0.0), random_system(0), STATES, PRIORS)
    assert report.ttls == [0.0] * len(STATES) * len(PRIORS)
    assert report.aggregate() == (0.0, 0.0, 0)


def test_sweep_solves_once(monkeypatch: pytest.MonkeyPatch) -> None:
    calls = []
    solve = reach_solver.solve_backward

    def counting(*args: object, **kwargs: object) -> reach_solver.ValueSolution:
        calls.append(args)
        return solve(*args, **kwargs)  # type: ignore[arg-type]

    monkeypatch.setattr(reach_solver, "solve_backward", counting)
    queries.ttl_sweep(_query(), random_system(1), STATES, PRIORS)
    assert len(calls) == 1


@pytest.mark.parametrize("strategy", [Strategy.MINIMIZE, Strategy.MAXIMIZE])
def test_ttl_is_non_increasing_in_the_prior(strategy: Strategy) -> None:
    for seed in range(8):
        report, _ = queries.ttl_sweep(_query(strategy), random_system(seed), STATES, PRIORS)
        matrix = report.matrix()
        assert matrix.shape == (len(PRIORS), len(STATES))
        assert np.all(matrix[1:] <= matrix[:-1])


def test_finite_ttls_fit_the_horizon() -> None:
    for seed in range(8):
        report, _ = queries.ttl_sweep(_query(Strategy.MAXIMIZE), random_system(seed), STATES, PRIORS)
        assert all(t <= report.horizon for t in report.ttls if t is not None)
        mean, _, missing = report.aggregate()
        assert missing == report.unreachable_count
        if missing < len(report.entries):
            assert mean is not None


def test_report_lookup() -> None:
    report, solution = queries.ttl_sweep(_query(), random_system(2), STATES, PRIORS)
    assert report.mode == "best"
    assert report.priors == PRIORS
    assert report.states == STATES
    assert report.lookup((1.0, 1.0), 0.5) == reach_solver.extract_ttl(solution, [1.0, 1.0, 0.5])
    with pytest.raises(KeyError):
        report.lookup((0.25, 1.0), 0.5)
    assert [row.prior for row in report.by_prior()] == PRIORS


def test_conservative_ttl() -> None:
    assert queries.conservative_ttl({"g1": 0.0, "g2": 0.5346}) == 0.5346
    assert queries.conservative_ttl({"g1": None, "g2": 0.5346}) is None


def test_intent_targets() -> None:
    assert queries.intent_target(0, tracked=0) == TargetSpec.belief_at_least(0.9)
    other = queries.intent_target(1, tracked=0)
    assert other.kind == TargetSpec.belief_at_most(0.1).kind
    assert other.threshold == pytest.approx(0.1)


def test_branching_time_is_the_max_of_both_ttls() -> None:
    z0 = JointState((1.0, 1.0), (0.5,))
    for seed in range(6):
        system = random_system(seed)
        first, second = queries.branching_queries(3.0, system.dt, 0.3)
        ttls = [reach_solver.extract_ttl(reach_solver.solve_backward(q, system), z0) for q in (first, second)]
        if None in ttls:
            with pytest.raises(UnreachableWithinHorizonError) as info:
                queries.branching_time(system, z0, 3.0, 0.3)
            assert set(info.value.ttls) == {"left", "right"}
        else:
            branch = queries.branching_time(system, z0, 3.0, 0.3)
            assert branch.ttls == {"left": ttls[0], "right": ttls[1]}
            assert branch.t_b == max(t for t in ttls if t is not None)


def test_branching_time_already_confident() -> None:
    system = random_system(3)
    z0 = JointState((1.0, 1.0), (0.97,))
    first, second = queries.branching_queries(3.0, system.dt, 0.3)
    solutions = [reach_solver.solve_backward(q, system) for q in (first, second)]
    expected = reach_solver.extract_ttl(solutions[1], z0)
    if expected is None:
        with pytest.raises(UnreachableWithinHorizonError) as info:
            queries.branch_time_from(solutions, ["left", "right"], z0)
        assert info.value.ttls == {"left": 0.0, "right": None}
    else:
        branch = queries.branch_time_from(solutions, ["left", "right"], z0)
        assert branch.t_b == expected
        assert branch.ttls["left"] == 0.0


@pytest.mark.parametrize("strategy", [Strategy.MINIMIZE, Strategy.MAXIMIZE])
def test_restriction_shapes_arrival_monotonically(strategy: Strategy) -> None:
    deltas = [0.0, 0.1, 0.3, 0.5, 0.9]
    for seed in range(8):
        system = random_system(seed)
        arrivals = [
            reach_solver.solve_backward(_query(strategy)._replace(restriction=ControlRestriction(0, d)), system).arrival
            for d in deltas
        ]
        for loose, tight in zip(arrivals, arrivals[1:]):
            if strategy == Strategy.MINIMIZE:
                assert np.all(tight >= loose)
            else:
                assert np.all(tight <= loose)


def test_legible_crosses_at_its_ttl() -> None:
    z0 = JointState((1.0, 1.0), (0.5,))
    for seed in range(10):
        system = random_system(seed)
        query = queries.behavior_query(system, 0, BehaviorMode.LEGIBLE, 3.0, delta=0.15)
        solution = reach_solver.solve_backward(query, system, retain_slices=True)
        trace = queries.synthesize_behavior(system, 0, BehaviorMode.LEGIBLE, z0, 3.0, solution=solution)
        ttl = reach_solver.extract_ttl(solution, z0)
        if ttl is None:
            assert trace.crossing_step is None
        else:
            assert trace.crossing_step == round(ttl / system.dt)


def _crossing(step: int | None) -> float:
    return math.inf if step is None else float(step)


def test_legible_argmax_deceptive_ordering() -> None:
    z0 = JointState((1.0, 1.0), (0.5,))
    for seed in range(10):
        system = random_system(seed)
        legible = queries.synthesize_behavior(system, 0, BehaviorMode.LEGIBLE, z0, 3.0)
        deceptive = queries.synthesize_behavior(system, 0, BehaviorMode.DECEPTIVE, z0, 3.0)
        argmax = queries.argmax_policy_trace(system, 0, z0, 6)
        assert _crossing(legible.crossing_step) <= _crossing(deceptive.crossing_step)
        assert _crossing(legible.crossing_step) <= _crossing(argmax.crossing_step)


def test_synthesized_beliefs_replay_through_the_learner() -> None:
    z0 = JointState((1.0, 1.0), (0.5,))
    for seed in range(5):
        system = random_system(seed, interpolation=InterpolationMode.MULTILINEAR)
        learner = system.learner
        for mode in BehaviorMode:
            trace = queries.synthesize_behavior(system, 0, mode, z0, 3.0)
            for i, action in enumerate(trace.actions):
                expected = bayes_update(trace.beliefs[i], trace.physical[i], action, learner.tracked, learner.other)
                assert trace.beliefs[i + 1] == pytest.approx(expected.belief, abs=1e-10)


def test_trace_for_the_other_intent_reports_its_belief() -> None:
    system = random_system(0)
    z0 = JointState((1.0, 1.0), (0.3,))
    trace = queries.synthesize_behavior(system, 1, BehaviorMode.LEGIBLE, z0, 3.0)
    assert trace.beliefs[0] == pytest.approx(0.7)


def test_reachable_weights_start_at_zero() -> None:
    system = random_system(6)
    heatmap = queries.reachable_weights(system, (1.0, 1.0), [0.2, 0.5, 0.9], 3.0)
    assert heatmap.arrival.shape == (3, BELIEFS)
    for w0 in heatmap.initial_weights:
        assert heatmap.arrival_at(w0, w0) == 0.0
        assert heatmap.reachable_count(w0) >= 1
    assert np.all(heatmap.arrival[np.isfinite(heatmap.arrival)] <= 3.0)


def test_reachable_weights_match_forward_solves() -> None:
    system = random_system(7)
    heatmap = queries.reachable_weights(system, (1.0, 1.0), [0.5], 2.0)
    forward = reach_solver.solve_forward(system, TargetSpec.initial_set(JointState((1.0, 1.0), (0.5,))), 2.0)
    shaped = forward.arrival_seconds().reshape(PLANAR, PLANAR, BELIEFS)
    np.testing.assert_array_equal(heatmap.arrival[0], shaped.min(axis=(0, 1)))


def test_monotonicity_violations() -> None:
    heatmap = ReachabilityHeatmap((0.5,), (0.0, 0.25, 0.5, 0.75, 1.0), np.asarray([[1.0, 2.0, 0.0, 1.0, 3.0]]))
    assert queries.monotonicity_violations(heatmap) == [(0.5, 0.0)]
    clean = heatmap._replace(arrival=np.asarray([[2.0, 1.0, 0.0, 1.0, math.inf]]))
    assert queries.monotonicity_violations(clean) == []
