"""Analysis queries composed from the solver: TTL sweeps, branching time, behavior synthesis, reachable weights."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import numpy as np

from learnreach import constants, reach_solver
from learnreach.exceptions import UnreachableWithinHorizonError
from learnreach.models import (
    BehaviorMode,
    BehaviorTrace,
    BranchTime,
    ControlRestriction,
    JointState,
    QuerySpec,
    ReachabilityHeatmap,
    Strategy,
    TargetSpec,
    TTLEntry,
    TTLReport,
)

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from numpy.typing import NDArray

    from learnreach.reach_solver import JointSystem, ValueSolution

logger = logging.getLogger(__name__)


def ttl_report(
    solution: ValueSolution,
    states: Sequence[Sequence[float]],
    priors: Sequence[float],
    *,
    conservative: bool | None = None,
) -> TTLReport:
    """
    Reads the TTL of every (state, prior) pair from one solution.

    Worst-case solutions read the conservative corner rule by default; best-case solutions read
    interpolated values when slices were retained.

    Args:
        solution (ValueSolution): The backward solve to read.
        states (Sequence[Sequence[float]]): Initial physical states.
        priors (Sequence[float]): Initial estimates paired with every state.
        conservative (bool | None): Forces the corner rule on or off.

    Returns:
        TTLReport with one entry per (prior, state) pair, prior-major.
    """
    if conservative is None:
        conservative = not solution.query.strategy.is_best_case
    points = np.asarray([(*state, prior) for prior in priors for state in states], dtype=float)
    steps = solution.ttl_steps(points, conservative=conservative) if len(points) else np.empty(0)
    entries = []
    for (prior, state), k in zip(((p, tuple(s)) for p in priors for s in states), steps):
        ttl = None if math.isinf(k) else float(k) * solution.dt
        entries.append(TTLEntry(tuple(float(v) for v in state), float(prior), ttl))
    return TTLReport(tuple(entries), solution.query.strategy.mode, solution.query.horizon)


def ttl_sweep(
    query: QuerySpec,
    system: JointSystem,
    states: Sequence[Sequence[float]],
    priors: Sequence[float],
) -> tuple[TTLReport, ValueSolution]:
    """
    One backward solve, read at every initial state and prior.

    Args:
        query (QuerySpec): Target, strategy and horizon of the solve.
        system (JointSystem): The joint human-learner system.
        states (Sequence[Sequence[float]]): Initial physical states.
        priors (Sequence[float]): Initial estimates paired with every state.

    Returns:
        tuple[TTLReport, ValueSolution] of the report and the solve it was read from.
    """
    retain = query.strategy.is_best_case
    solution = reach_solver.solve_backward(query, system, retain_slices=retain)
    report = ttl_report(solution, states, priors)
    mean, std, missing = report.aggregate()
    logger.info(
        "TTL sweep (%s): mean=%s std=%s unreachable=%d/%d", report.mode, mean, std, missing, len(report.entries)
    )
    return report, solution


def conservative_ttl(ttls: Mapping[str, float | None]) -> float | None:
    """
    Max over intents of per-intent TTLs; Unreachable if any is.

    >>> conservative_ttl({"g1": 0.1782, "g2": 0.5346})
    0.5346
    >>> conservative_ttl({"g1": 0.1782, "g2": None}) is None
    True
    """
    if any(t is None for t in ttls.values()):
        return None
    return max(t for t in ttls.values() if t is not None)


def intent_target(intent: int, tracked: int, threshold: float = constants.CONFIDENCE_THRESHOLD) -> TargetSpec:
    """
    b(intent) >= threshold expressed over the tracked-hypothesis estimate.

    >>> intent_target(1, tracked=0, threshold=0.9)
    BELIEF_AT_MOST(0.1, 0)
    """
    if intent == tracked:
        return TargetSpec.belief_at_least(threshold)
    return TargetSpec.belief_at_most(1.0 - threshold)


def branching_queries(
    horizon: float,
    dt: float,
    delta: float,
    *,
    tracked: int = 0,
    threshold: float = constants.CONFIDENCE_THRESHOLD,
    strategy: Strategy = Strategy.MAXIMIZE,
) -> tuple[QuerySpec, QuerySpec]:
    """The two restricted queries whose TTLs bound the branching time (one per intent)."""
    g1, g2 = (
        QuerySpec(intent_target(intent, tracked, threshold), strategy, horizon, dt, ControlRestriction(intent, delta))
        for intent in (0, 1)
    )
    return g1, g2


def branch_time_from(solutions: Sequence[ValueSolution], names: Sequence[str], z0: JointState) -> BranchTime:
    """
    t_b = max of the per-intent TTLs read at z0.

    Args:
        solutions (Sequence[ValueSolution]): One backward solution per intent, in the order of ``names``.
        names (Sequence[str]): Intent names keying the returned TTLs.
        z0 (JointState): Human state and prior the TTLs are read at.

    Returns:
        BranchTime with the per-intent TTLs and their max, in seconds.

    Raises:
        UnreachableWithinHorizonError: a TTL is Unreachable within the solved horizon.
    """
    ttls = {
        name: reach_solver.extract_ttl(solution, z0, conservative=not solution.query.strategy.is_best_case)
        for name, solution in zip(names, solutions)
    }
    t_b = conservative_ttl(ttls)
    if t_b is None:
        msg = f"branching TTL Unreachable within the horizon at {z0!r}: {ttls}"
        raise UnreachableWithinHorizonError(msg, ttls)
    return BranchTime(ttls, t_b)


def branching_time(
    system: JointSystem,
    z0: JointState,
    horizon: float = constants.DRIVING_HORIZON,
    delta: float = constants.DRIVING_DELTA,
    *,
    tracked: int = 0,
    threshold: float = constants.CONFIDENCE_THRESHOLD,
    strategy: Strategy = Strategy.MAXIMIZE,
) -> BranchTime:
    """
    Worst-case TTL to each intent under U^t restricted to that intent; t_b is their max.

    Args:
        system (JointSystem): The joint human-learner system.
        z0 (JointState): Initial human state and prior.
        horizon (float): Planning horizon in seconds.
        delta (float): Likelihood floor of the restricted control set.
        tracked (int): Intent whose belief is the estimate.
        threshold (float): Belief that counts as having learned an intent.
        strategy (Strategy): ``MAXIMIZE`` for the worst case a contingency planner needs.

    Returns:
        BranchTime with the per-intent TTLs and t_b.

    Raises:
        UnreachableWithinHorizonError: either TTL is Unreachable within ``horizon``.
    """
    queries = branching_queries(horizon, system.dt, delta, tracked=tracked, threshold=threshold, strategy=strategy)
    solutions = [reach_solver.solve_backward(q, system) for q in queries]
    names = [intent.name for intent in system.model.spec.intents]
    branch = branch_time_from(solutions, names, z0)
    logger.info("Branching time at %r: %r", z0, branch)
    return branch


def _belief_of(estimate: float, intent: int, tracked: int) -> float:
    return estimate if intent == tracked else 1.0 - estimate


def behavior_query(
    system: JointSystem,
    goal: int,
    mode: BehaviorMode,
    horizon: float,
    *,
    tracked: int = 0,
    delta: float = constants.LEGIBILITY_DELTA,
    threshold: float = constants.CONFIDENCE_THRESHOLD,
) -> QuerySpec:
    target = intent_target(goal, tracked, threshold)
    return QuerySpec(target, mode.strategy, horizon, system.dt, ControlRestriction(goal, delta))


def synthesize_behavior(
    system: JointSystem,
    goal: int,
    mode: BehaviorMode,
    z0: JointState,
    horizon: float,
    *,
    tracked: int = 0,
    delta: float = constants.LEGIBILITY_DELTA,
    threshold: float = constants.CONFIDENCE_THRESHOLD,
    solution: ValueSolution | None = None,
) -> BehaviorTrace:
    """
    Legible (minimize) or deceptive (maximize) human data toward ``goal``, as the optimal rollout
    of a restricted backward solve with retained slices.

    Args:
        system (JointSystem): The joint human-learner system.
        goal (int): Intent the human heads for; actions are restricted to those it finds likely.
        mode (BehaviorMode): ``LEGIBLE`` or ``DECEPTIVE``.
        z0 (JointState): Initial human state and estimate.
        horizon (float): Seconds to plan over.
        tracked (int): Intent whose belief is the estimate.
        delta (float): Likelihood floor of the restricted control set.
        threshold (float): Belief in ``goal`` that counts as learned.
        solution (ValueSolution | None): A matching solve with retained slices to reuse.

    Returns:
        BehaviorTrace of the states, actions and belief in ``goal``, with the step the belief
        crossed ``threshold`` (None if it never did).

    Raises:
        StaleSolutionError: ``solution`` did not retain its value slices.
    """
    if solution is None:
        query = behavior_query(system, goal, mode, horizon, tracked=tracked, delta=delta, threshold=threshold)
        solution = reach_solver.solve_backward(query, system, retain_slices=True)
    rollout = reach_solver.extract_policy_rollout(solution, z0, solution.steps)
    physical_dims = len(z0.physical)
    trace = BehaviorTrace(
        mode.value,
        [tuple(float(v) for v in s[:physical_dims]) for s in rollout.states],
        rollout.actions,
        [_belief_of(float(s[-1]), goal, tracked) for s in rollout.states],
        rollout.crossing_step,
    )
    logger.info("Synthesized %r toward intent %d", trace, goal)
    return trace


def argmax_policy_trace(
    system: JointSystem,
    goal: int,
    z0: JointState,
    max_steps: int,
    *,
    tracked: int = 0,
    threshold: float = constants.CONFIDENCE_THRESHOLD,
) -> BehaviorTrace:
    """Purely goal-driven reference: the argmax-Q action of ``goal`` at every step."""
    target = intent_target(goal, tracked, threshold)
    table = system.model.q_tables[goal]
    z = z0.as_array()
    states = [z]
    actions: list[int] = []
    for _ in range(max_steps):
        if reach_solver.margin(target, z) <= 0.0:
            break
        allowed = system.admissible_at(z, None)
        if not allowed.any():
            break
        q = np.where(allowed, table.at([z[:-1]]), -math.inf)
        action = int(np.argmax(q))
        z = system.successor(z, action)
        states.append(z)
        actions.append(action)
    crossing = next((i for i, s in enumerate(states) if reach_solver.margin(target, s) <= 0.0), None)
    physical_dims = len(z0.physical)
    return BehaviorTrace(
        "argmax",
        [tuple(float(v) for v in s[:physical_dims]) for s in states],
        actions,
        [_belief_of(float(s[-1]), goal, tracked) for s in states],
        crossing,
    )


def reachable_weights(
    system: JointSystem,
    physical: Sequence[float],
    initial_weights: Sequence[float],
    horizon: float = constants.GRADIENT_HORIZON,
    restriction: ControlRestriction | None = None,
) -> ReachabilityHeatmap:
    """
    Earliest arrival (seconds) at every w* node from each w0, one forward solve per w0.

    Args:
        system (JointSystem): A gradient-learner system.
        physical (Sequence[float]): The human's initial position.
        initial_weights (Sequence[float]): Initial estimates w0, one heatmap row each.
        horizon (float): Seconds to propagate.
        restriction (ControlRestriction | None): Optional likelihood restriction on the human.

    Returns:
        ReachabilityHeatmap of arrival seconds, rows by w0 and columns by w* node; inf where unreachable.
    """
    rows = []
    for w0 in initial_weights:
        initial = TargetSpec.initial_set(JointState.from_array([*physical, w0], len(physical)))
        forward = reach_solver.solve_forward(system, initial, horizon, restriction)
        rows.append(forward.earliest_by_axis(-1))
    heatmap = ReachabilityHeatmap(
        tuple(float(w) for w in initial_weights), tuple(float(w) for w in system.grid.axes[-1]), np.vstack(rows)
    )
    violations = monotonicity_violations(heatmap)
    if violations:
        logger.warning("%d heatmap cells arrive earlier than a nearer w* on the same side of w0", len(violations))
    return heatmap


def monotonicity_violations(heatmap: ReachabilityHeatmap) -> list[tuple[float, float]]:
    """(w0, w*) cells whose arrival is earlier than a cell closer to w0 on the same side."""
    violations = []
    targets = np.asarray(heatmap.target_weights)
    for row, w0 in enumerate(heatmap.initial_weights):
        arrival: NDArray[np.float64] = heatmap.arrival[row]
        start = int(np.argmin(np.abs(targets - w0)))
        for side in (range(start + 1, targets.size), range(start - 1, -1, -1)):
            latest = arrival[start]
            for col in side:
                if arrival[col] < latest:
                    violations.append((float(w0), float(targets[col])))
                latest = max(latest, arrival[col])
    return violations
