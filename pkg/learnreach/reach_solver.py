"""
Backward terminal-value HJB recursion over the joint grid, time-to-learn and optimal-control
extraction, and forward reachable-set propagation.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import sparse

from learnreach import constants, utils
from learnreach.exceptions import InconsistentSpecError, OutOfBoundsError, StaleSolutionError
from learnreach.gridspace import GridSpace, NodeField
from learnreach.human_models import blocked_actions
from learnreach.models import (
    ControlRestriction,
    InterpolationMode,
    JointState,
    QuerySpec,
    Rollout,
    Strategy,
    TargetKind,
    TargetSpec,
)

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from numpy.typing import ArrayLike, NDArray

    from learnreach.human_models import HumanModel
    from learnreach.learner_dynamics import Learner

__all__ = [
    "ForwardSolution",
    "JointSystem",
    "QuerySpec",
    "TargetSpec",
    "ValueSolution",
    "extract_policy_rollout",
    "extract_ttl",
    "margin",
    "margin_field",
    "solve_backward",
    "solve_forward",
]

logger = logging.getLogger(__name__)


def margin(target: TargetSpec, z: JointState | ArrayLike, grid: GridSpace | None = None) -> float:
    """
    Signed margin l(z): negative inside the target set, zero on its boundary.

    >>> round(margin(TargetSpec.belief_at_least(0.9), [0.0, 0.0, 0.95]), 12)
    -0.05
    >>> margin(TargetSpec.belief_at_least(0.9), [0.0, 0.0, 0.9])
    0.0
    >>> round(margin(TargetSpec.estimate_near(0.1, 0.05), [1.0, 1.0, 0.3]), 12)
    0.15
    """
    point = z.as_array() if isinstance(z, JointState) else np.asarray(z, dtype=float)
    return float(_margin_points(target, np.atleast_2d(point), grid)[0])


def _margin_points(target: TargetSpec, points: NDArray[np.float64], grid: GridSpace | None) -> NDArray[np.float64]:
    estimate = points[:, -1]
    if target.kind == TargetKind.BELIEF_AT_LEAST:
        return target.threshold - estimate
    if target.kind == TargetKind.BELIEF_AT_MOST:
        return estimate - target.threshold
    if target.kind == TargetKind.ESTIMATE_NEAR:
        return np.abs(estimate - target.threshold) - target.epsilon
    if target.initial is None:
        msg = "initial_set target without an initial state"
        raise InconsistentSpecError(msg)
    origin = target.initial.as_array()
    diff = points - origin
    if grid is None:
        return np.linalg.norm(diff, axis=1)
    for dim, periodic in enumerate(grid.periodic):
        if periodic:
            span = grid.upper[dim] - grid.lower[dim]
            diff[:, dim] = np.mod(diff[:, dim] + span / 2, span) - span / 2
    # half a cell in the max-norm: exactly the node nearest z0
    return np.max(np.abs(diff) / grid.spacing, axis=1) - 0.5


def margin_field(target: TargetSpec, grid: GridSpace) -> NodeField:
    """l at every node of the joint grid; occupied nodes hold LARGE."""
    return NodeField.create(grid, _margin_points(target, grid.nodes(), grid))


class JointSystem:
    """
    The analyzed system z' = f(z, u): physical step of the human stacked with the learner update.

    The joint grid is the physical grid followed by one estimate dim. Successors are clamped to
    the grid; actions whose successor position is occupied are inadmissible. Transitions are
    sparse interpolation matrices, one per action, split into contiguous row chunks for
    ``workers`` threads.
    """

    def __init__(
        self,
        grid: GridSpace,
        model: HumanModel,
        learner: Learner,
        *,
        interpolation: InterpolationMode = InterpolationMode.MULTILINEAR,
        workers: int = 1,
    ) -> None:
        self.grid = grid
        self.model = model
        self.learner = learner
        self.interpolation = interpolation
        self.workers = max(1, int(workers))

        physical_dims = model.spec.physical_dims
        if grid.ndim != physical_dims + 1:
            msg = f"joint grid has {grid.ndim} dims, expected {physical_dims} physical + 1 estimate"
            raise InconsistentSpecError(msg)
        self.physical_grid = grid.sub_grid(range(physical_dims))
        if self.physical_grid.cells != model.grid.cells:
            msg = f"physical grid {self.physical_grid!r} differs from the model grid {model.grid!r}"
            raise InconsistentSpecError(msg)

        self.estimate_count = grid.cells[-1]
        self.physical_index = np.arange(grid.node_count) // self.estimate_count
        self.action_count = model.spec.action_count

        physical_nodes = self.physical_grid.nodes()
        successors = model.spec.successors(physical_nodes)
        actions, count, dims = successors.shape
        self._physical_successors = self.physical_grid.clip(successors.reshape(-1, dims)).reshape(actions, count, dims)
        blocked = blocked_actions(self.physical_grid, self._physical_successors)
        self.physical_admissible = ~blocked & ~self.physical_grid.occupied_nodes[:, None]

        started = time.perf_counter()
        estimates = grid.nodes()[:, -1]
        self._successors: list[NDArray[np.float64]] = []
        self._transitions: list[sparse.csr_matrix] = []
        self._offsets: list[NDArray[np.float64]] = []
        for a in range(self.action_count):
            next_estimate = learner.step_nodes(estimates, self.physical_index, a)
            points = np.column_stack([self._physical_successors[a][self.physical_index], next_estimate])
            self._successors.append(points)
            matrix, offset = self._transition(points)
            self._transitions.append(matrix)
            self._offsets.append(offset)

        bounds = np.linspace(0, grid.node_count, self.workers + 1).astype(int)
        self.chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        self._chunked = [[t[lo:hi] for t in self._transitions] for lo, hi in self.chunks]
        logger.debug("Assembled %d transitions on %r in %.2fs", self.action_count, grid, time.perf_counter() - started)

    def __repr__(self) -> str:
        return f"JointSystem({self.grid!r}, {self.model.spec!r}, {self.learner!r}, {self.interpolation.value})"

    @property
    def dt(self) -> float:
        return self.model.spec.dt

    def _transition(self, points: NDArray[np.float64]) -> tuple[sparse.csr_matrix, NDArray[np.float64]]:
        count = self.grid.node_count
        if self.interpolation == InterpolationMode.NEAREST:
            target = self.grid.nearest_nodes(points, check=False)
            matrix = sparse.csr_matrix((np.ones(count), (np.arange(count), target)), shape=(count, count))
            return matrix, np.zeros(count)
        indices, weights, blocked = self.grid.corner_weights(points, check=False)
        rows = np.repeat(np.arange(count), indices.shape[1])
        matrix = sparse.csr_matrix((weights.ravel(), (rows, indices.ravel())), shape=(count, count))
        return matrix, np.where(blocked, constants.LARGE, 0.0)

    def admissible(self, restriction: ControlRestriction | None) -> NDArray[np.bool_]:
        """``(nodes, actions)`` admissibility under an optional likelihood restriction U^t."""
        allowed = self.physical_admissible
        if restriction is not None:
            allowed = allowed & self.restriction_mask(restriction)
        return allowed[self.physical_index]

    def restriction_mask(self, restriction: ControlRestriction) -> NDArray[np.bool_]:
        if not 0 <= restriction.intent < len(self.model.likelihoods):
            msg = f"restriction intent {restriction.intent} not among {len(self.model.likelihoods)} intents"
            raise InconsistentSpecError(msg)
        return self.model.likelihoods[restriction.intent].restricted_mask(restriction.delta)

    def nearest_successors(self) -> NDArray[np.intp]:
        """``(actions, nodes)`` nearest node of every joint successor."""
        return np.stack([self.grid.nearest_nodes(points, check=False) for points in self._successors])

    def backup(
        self,
        value: NDArray[np.float64],
        terminal: NDArray[np.float64],
        strategy: Strategy,
        admissible: NDArray[np.bool_],
        executor: ThreadPoolExecutor | None = None,
    ) -> NDArray[np.float64]:
        """One step of V^t = min{l, opt_{u in U^t} V^{t+dt}(f(z, u))}; nodes without actions keep l."""
        out = np.empty_like(value)

        def work(chunk: int) -> None:
            lo, hi = self.chunks[chunk]
            q = np.empty((hi - lo, self.action_count))
            for a, matrix in enumerate(self._chunked[chunk]):
                q[:, a] = matrix @ value + self._offsets[a][lo:hi]
            allowed = admissible[lo:hi]
            q = np.where(allowed, q, strategy.blocked_value)
            best = strategy.optimize(q, axis=1)
            out[lo:hi] = np.where(allowed.any(axis=1), np.minimum(terminal[lo:hi], best), terminal[lo:hi])

        if executor is None:
            for chunk in range(len(self.chunks)):
                work(chunk)
        else:
            list(executor.map(work, range(len(self.chunks))))
        return out

    def successor(self, z: ArrayLike, action: int) -> NDArray[np.float64]:
        """Joint successor of one (off-grid) point; snapped to the nearest node in nearest mode."""
        point = np.asarray(z, dtype=float)
        physical = point[:-1]
        next_physical = self.physical_grid.clip([self.model.spec.step(physical, action)])[0]
        next_estimate = self.learner.step(float(point[-1]), physical, action)
        successor = np.append(next_physical, next_estimate)
        if self.interpolation == InterpolationMode.NEAREST:
            return self.grid.index_to_state(int(self.grid.nearest_nodes([successor], check=False)[0]))
        return successor

    def admissible_at(self, z: ArrayLike, restriction: ControlRestriction | None) -> NDArray[np.bool_]:
        point = np.asarray(z, dtype=float)
        node = int(self.physical_grid.nearest_nodes([point[:-1]], check=False)[0])
        allowed = np.ones(self.action_count, dtype=bool)
        if restriction is not None:
            allowed &= self.restriction_mask(restriction)[node]
        if self.physical_grid.occupancy is not None:
            successors = self.model.spec.successors([point[:-1]])[:, 0, :]
            positions = self.physical_grid.clip(successors)[:, :2]
            allowed &= ~self.physical_grid.occupancy.occupied(positions)
        return allowed

    def read(self, field_values: NDArray[np.float64], points: ArrayLike) -> NDArray[np.float64]:
        """Values at points: interpolated, or at the nearest node in nearest mode."""
        if self.interpolation == InterpolationMode.NEAREST:
            return field_values[..., self.grid.nearest_nodes(points)]
        indices, weights, blocked = self.grid.corner_weights(points)
        values = np.einsum("qc,...qc->...q", weights, field_values[..., indices])
        return np.where(blocked, constants.LARGE, values)


class ValueSolution:
    """Result of a backward solve: V^0, the arrival map and, optionally, every value slice."""

    def __init__(
        self,
        query: QuerySpec,
        system: JointSystem,
        terminal: NodeField,
        final: NodeField,
        arrival: NDArray[np.float64],
        slices: Sequence[NodeField] | None,
    ) -> None:
        self.query = query
        self.system = system
        self.terminal = terminal
        self.final = final
        self.arrival = arrival
        """Per node: earliest step count k with V (k steps to go) <= 0; inf if never."""
        self.slices = tuple(slices) if slices is not None else None
        """``slices[k]`` is the value with k steps to go; ``slices[0]`` is l."""

    def __repr__(self) -> str:
        reached = int(np.isfinite(self.arrival).sum())
        return f"ValueSolution({self.query.strategy.mode}, N={self.steps}, reached={reached}/{self.arrival.size})"

    @property
    def grid(self) -> GridSpace:
        return self.system.grid

    @property
    def steps(self) -> int:
        return self.query.steps

    @property
    def dt(self) -> float:
        return self.query.dt

    @property
    def retained(self) -> bool:
        return self.slices is not None

    def arrival_seconds(self) -> NDArray[np.float64]:
        return self.arrival * self.dt

    def slice_stack(self) -> NDArray[np.float64]:
        if self.slices is None:
            msg = "value slices were not retained by this solve"
            raise StaleSolutionError(msg)
        return np.stack([s.values for s in self.slices])

    def ttl_steps(self, points: ArrayLike, *, conservative: bool | None = None) -> NDArray[np.float64]:
        """
        Earliest step count per point (inf when unreachable within the horizon).

        ``conservative`` reads the arrival map (max over the enclosing corners); otherwise the
        interpolated retained slices are scanned. ``None`` uses slices when they were retained.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        use_slices = self.retained if conservative is None else (not conservative and self.retained)
        if self.system.interpolation == InterpolationMode.NEAREST:
            return self.arrival[self.grid.nearest_nodes(pts)]
        if use_slices:
            values = self.system.read(self.slice_stack(), pts)
            hit = values <= 0.0
            first = np.argmax(hit, axis=0).astype(float)
            return np.where(hit.any(axis=0), first, math.inf)
        indices, weights, blocked = self.grid.corner_weights(pts)
        corner_arrival = np.where(weights > 0.0, self.arrival[indices], -math.inf)
        return np.where(blocked, math.inf, corner_arrival.max(axis=1))


def _solver_executor(system: JointSystem) -> ThreadPoolExecutor | None:
    return ThreadPoolExecutor(max_workers=system.workers) if system.workers > 1 else None


def solve_backward(query: QuerySpec, system: JointSystem, *, retain_slices: bool = False) -> ValueSolution:
    """
    Iterates V^t(z) = min{l(z), opt_{u in U^t} V^{t+dt}(f(z, u))} from V^T = l backwards over
    N = T / dt steps, recording the arrival map.

    Raises:
        InconsistentSpecError: the query and the human model disagree on dt.
    """
    query.validate()
    if abs(query.dt - system.dt) > 1e-9:  # noqa: PLR2004
        msg = f"query dt {query.dt} differs from the model dt {system.dt}"
        raise InconsistentSpecError(msg)

    started = time.perf_counter()
    terminal = margin_field(query.target, system.grid)
    admissible = system.admissible(query.restriction)
    steps = query.steps
    value = terminal.values.copy()
    arrival = np.where(value <= 0.0, 0.0, math.inf)
    slices = [terminal] if retain_slices else None

    executor = _solver_executor(system)
    try:
        for k in range(1, steps + 1):
            value = system.backup(value, terminal.values, query.strategy, admissible, executor)
            arrival = np.where(np.isinf(arrival) & (value <= 0.0), float(k), arrival)
            if slices is not None:
                slices.append(NodeField.create(system.grid, value))
            logger.debug("Backward step %d/%d: %d nodes reached", k, steps, int(np.isfinite(arrival).sum()))
    finally:
        if executor is not None:
            executor.shutdown()

    solution = ValueSolution(query, system, terminal, NodeField.create(system.grid, value), arrival, slices)
    logger.info("Solved %r %r in %.2fs", query.target, solution, time.perf_counter() - started)
    return solution


def extract_ttl(
    solution: ValueSolution, z0: JointState | ArrayLike, *, conservative: bool | None = None
) -> float | None:
    """
    TTL = min{k dt : V^{T - k dt}(z0) <= 0} in seconds, None when Unreachable within T.

    Raises:
        OutOfBoundsError: z0 lies outside the grid.
    """
    point = z0.as_array() if isinstance(z0, JointState) else np.asarray(z0, dtype=float)
    steps = float(solution.ttl_steps([point], conservative=conservative)[0])
    return None if math.isinf(steps) else steps * solution.dt


def _choose(solution: ValueSolution, z: NDArray[np.float64], steps_to_go: int, strategy: Strategy) -> int | None:
    system = solution.system
    allowed = system.admissible_at(z, solution.query.restriction)
    if not allowed.any():
        return None
    stack = solution.slice_stack()
    successors = np.stack([system.successor(z, a) for a in range(system.action_count)])
    values = system.read(stack, successors)
    hit = values <= 0.0
    ttl = np.where(hit.any(axis=0), np.argmax(hit, axis=0), math.inf)
    current = values[min(steps_to_go, stack.shape[0] - 1)]
    # lexicographic: successor time-to-learn first, then the scheduled value slice
    sign = 1.0 if strategy.is_best_case else -1.0
    keys = [(sign * ttl[a], sign * current[a], a) for a in range(system.action_count) if allowed[a]]
    return min(keys)[2]


def extract_policy_rollout(
    solution: ValueSolution, z0: JointState | ArrayLike, max_steps: int, strategy: Strategy | None = None
) -> Rollout:
    """
    Rolls out the optimal human data from z0 until the state is in the target set or
    ``max_steps`` is reached. With TTL k, step j optimizes the slice with k - j - 1 steps to go;
    ties go to the lowest action index.

    Raises:
        StaleSolutionError: the solve did not retain its value slices.
    """
    if not solution.retained:
        msg = "policy extraction needs a solve run with retained value slices"
        raise StaleSolutionError(msg)
    strategy = solution.query.strategy if strategy is None else strategy
    z = z0.as_array() if isinstance(z0, JointState) else np.asarray(z0, dtype=float)
    if solution.system.interpolation == InterpolationMode.NEAREST:
        z = solution.grid.index_to_state(int(solution.grid.nearest_nodes([z])[0]))
    ttl = solution.ttl_steps([z])[0]
    schedule = solution.steps if math.isinf(ttl) else int(ttl)

    states = [z]
    actions: list[int] = []
    target = solution.query.target
    for j in range(max_steps):
        if margin(target, z, solution.grid) <= 0.0:
            break
        action = _choose(solution, z, max(schedule - j - 1, 0), strategy)
        if action is None:
            break
        z = solution.system.successor(z, action)
        states.append(z)
        actions.append(action)
    crossing = next((i for i, s in enumerate(states) if margin(target, s, solution.grid) <= 0.0), None)
    return Rollout(states, actions, crossing)


class ForwardSolution:
    """Earliest arrival step of every joint node under forward frontier propagation."""

    def __init__(self, grid: GridSpace, arrival: NDArray[np.float64], dt: float, steps: int) -> None:
        self.grid = grid
        self.arrival = arrival
        self.dt = dt
        self.steps = steps

    def __repr__(self) -> str:
        return f"ForwardSolution(N={self.steps}, marked={int(np.isfinite(self.arrival).sum())}/{self.arrival.size})"

    def arrival_seconds(self) -> NDArray[np.float64]:
        return self.arrival * self.dt

    def marked_at(self, step: int) -> NDArray[np.bool_]:
        return self.arrival <= step

    def earliest_by_axis(self, axis: int = -1) -> NDArray[np.float64]:
        """Earliest arrival seconds per node of ``axis``, minimized over every other dim."""
        shaped = self.arrival_seconds().reshape(self.grid.shape)
        axis = axis % self.grid.ndim
        others = tuple(d for d in range(self.grid.ndim) if d != axis)
        return shaped.min(axis=others) if others else shaped


def _frontier_chunks(frontier: NDArray[np.intp], workers: int) -> Iterator[NDArray[np.intp]]:
    yield from (chunk for chunk in np.array_split(frontier, workers) if chunk.size)


def solve_forward(
    system: JointSystem,
    initial: TargetSpec,
    horizon: float,
    restriction: ControlRestriction | None = None,
) -> ForwardSolution:
    """
    Frontier propagation from the node nearest z0: at each step every newly marked node marks the
    nearest node of each admissible successor with arrival = step + 1.
    """
    if initial.kind != TargetKind.INITIAL_SET or initial.initial is None:
        msg = f"forward solves need an initial_set target, got {initial!r}"
        raise InconsistentSpecError(msg)
    steps = QuerySpec(initial, Strategy.MINIMIZE, horizon, system.dt).steps
    start = int(system.grid.nearest_nodes([initial.initial.as_array()])[0])
    if system.grid.occupied_nodes[start]:
        msg = f"initial state {initial.initial!r} is occupied"
        raise OutOfBoundsError(msg)

    successors = system.nearest_successors()
    admissible = system.admissible(restriction)
    arrival = np.full(system.grid.node_count, math.inf)
    arrival[start] = 0.0
    frontier = np.asarray([start], dtype=np.intp)

    def expand(nodes: NDArray[np.intp]) -> NDArray[np.intp]:
        allowed = admissible[nodes].T
        return np.unique(successors[:, nodes][allowed])

    executor = _solver_executor(system)
    try:
        for step in range(steps):
            if not frontier.size:
                break
            chunks = _frontier_chunks(frontier, system.workers)
            reached = list(executor.map(expand, chunks)) if executor is not None else [expand(c) for c in chunks]
            merged = np.unique(np.concatenate(reached)) if reached else np.empty(0, dtype=np.intp)
            fresh = merged[np.isinf(arrival[merged])]
            arrival[fresh] = float(step + 1)
            frontier = fresh
    finally:
        if executor is not None:
            executor.shutdown()

    solution = ForwardSolution(system.grid, arrival, system.dt, steps)
    logger.info("Forward solve from %r: %r", initial.initial, solution)
    return solution


def describe(solution: ValueSolution | ForwardSolution) -> dict[str, Any]:
    """Metadata echo for exported artifacts."""
    grid = solution.grid
    meta: dict[str, Any] = {
        "grid": {"lower": list(grid.lower), "upper": list(grid.upper), "cells": list(grid.cells)},
        "dt": solution.dt,
        "steps": solution.steps,
    }
    if isinstance(solution, ValueSolution):
        meta["query"] = solution.query.to_dict()
        meta["interpolation"] = solution.system.interpolation.value
    meta["reached"] = int(np.isfinite(solution.arrival).sum())
    meta["digest"] = utils.digest(solution.arrival)
    return meta
