"""Human physical dynamics, intent-conditioned Q tables and noisily-rational likelihoods."""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from scipy.special import logsumexp, softmax

from learnreach import constants, utils
from learnreach.exceptions import InconsistentSpecError, UnreachableGoalError
from learnreach.gridspace import OccupancyMap
from learnreach.models import HumanKind, Intent

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    from learnreach.gridspace import GridSpace

logger = logging.getLogger(__name__)


class HumanModelSpec(NamedTuple):
    kind: HumanKind
    speed: float
    """v_H in meters/second."""
    actions: tuple[float, ...]
    """Angular velocities (rad/s) for dubins3d, headings (rad) for pedestrian2d."""
    dt: float
    """Observation period in seconds."""
    intents: tuple[Intent, ...]
    stop_action: bool = False
    """Append a zero-speed action after ``actions``."""
    reward_scale: float = 1.0

    def __repr__(self) -> str:
        return f"HumanModelSpec({self.kind!r}, v={self.speed}, |U|={self.action_count}, dt={self.dt})"

    @property
    def action_count(self) -> int:
        return len(self.actions) + int(self.stop_action)

    @property
    def physical_dims(self) -> int:
        return self.kind.physical_dims

    def is_stop(self, action: int) -> bool:
        return self.stop_action and action == len(self.actions)

    def action_label(self, action: int) -> str:
        return "stop" if self.is_stop(action) else f"{self.actions[action]:.4g}"

    def validate(self, *, learner_intents: int = 2) -> HumanModelSpec:
        if not self.actions:
            msg = "action set is empty"
            raise InconsistentSpecError(msg)
        if len(set(self.actions)) != len(self.actions):
            msg = f"action set has duplicates: {self.actions}"
            raise InconsistentSpecError(msg)
        if self.speed < 0.0:
            msg = f"speed {self.speed} is negative"
            raise InconsistentSpecError(msg)
        if self.dt <= 0.0:
            msg = f"dt {self.dt} must be positive"
            raise InconsistentSpecError(msg)
        if len(self.intents) < learner_intents:
            msg = f"{len(self.intents)} intents, at least {learner_intents} required"
            raise InconsistentSpecError(msg)
        return self

    def step(self, x: Sequence[float], action: int) -> tuple[float, ...]:
        """Scalar successor of one physical state."""
        if self.kind == HumanKind.DUBINS3D:
            return step_dubins((x[0], x[1], x[2]), self.actions[action], self.speed, self.dt)
        if self.is_stop(action):
            return (float(x[0]), float(x[1]))
        return step_pedestrian((x[0], x[1]), self.actions[action], self.speed, self.dt)

    def successors(self, points: ArrayLike) -> NDArray[np.float64]:
        """
        Successor of every physical point under every action, shape ``(actions, points, dims)``.
        Headings are wrapped; positions are not clipped.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((self.action_count, *pts.shape), dtype=float)
        if self.kind == HumanKind.DUBINS3D:
            dx = self.dt * self.speed * np.cos(pts[:, 2])
            dy = self.dt * self.speed * np.sin(pts[:, 2])
            for a, rate in enumerate(self.actions):
                out[a, :, 0] = pts[:, 0] + dx
                out[a, :, 1] = pts[:, 1] + dy
                out[a, :, 2] = utils.wrap_angles(pts[:, 2] + self.dt * rate)
            return out
        for a in range(self.action_count):
            if self.is_stop(a):
                out[a] = pts
                continue
            heading = self.actions[a]
            out[a, :, 0] = pts[:, 0] + self.dt * self.speed * math.cos(heading)
            out[a, :, 1] = pts[:, 1] + self.dt * self.speed * math.sin(heading)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "speed": self.speed,
            "actions": list(self.actions),
            "dt": self.dt,
            "intents": [i.to_dict() for i in self.intents],
            "stop_action": self.stop_action,
            "reward_scale": self.reward_scale,
        }


def step_dubins(x: tuple[float, float, float], u: float, speed: float, dt: float) -> tuple[float, float, float]:
    """
    One Euler step of the fixed-speed Dubins car.

    >>> [round(v, 4) for v in step_dubins((0.0, 0.0, 0.0), 0.0, 6.0, 0.0891)]
    [0.5346, 0.0, 0.0]
    >>> round(step_dubins((0.0, 0.0, 0.0), 3.5, 6.0, 0.0891)[2], 5)
    0.31185
    """
    px, py, heading = x
    return (
        px + dt * speed * math.cos(heading),
        py + dt * speed * math.sin(heading),
        utils.wrap_angle(heading + dt * u),
    )


def step_pedestrian(x: tuple[float, float], u: float, speed: float, dt: float) -> tuple[float, float]:
    """
    One step of the planar pedestrian walking along heading ``u``.

    >>> [round(v, 4) for v in step_pedestrian((0.0, 0.0), 0.0, 0.6, 0.4545)]
    [0.2727, 0.0]
    >>> step_pedestrian((1.0, 2.0), 0.0, 0.0, 0.4545)
    (1.0, 2.0)
    """
    px, py = x
    return px + dt * speed * math.cos(u), py + dt * speed * math.sin(u)


def pedestrian_actions(count: int = constants.PEDESTRIAN_HEADINGS) -> tuple[float, ...]:
    return utils.evenly_spaced_headings(count)


class FeatureMaps(NamedTuple):
    """Per occupancy cell: goal distance feature, clearance feature and goal connectivity."""

    goal: NDArray[np.float64]
    """mu_1 = -(shortest path distance to goal) / max distance, in [-1, 0]."""
    clearance: NDArray[np.float64]
    """mu_2 = min(clearance, cap) / cap - 1, in [-1, 0]."""
    connected: NDArray[np.bool_]
    """Free cells with a path to the goal."""


def goal_distance(occupancy: OccupancyMap, goal: tuple[float, float]) -> NDArray[np.float64]:
    """
    8-connected shortest-path distance (meters) from every cell to the goal cell; inf for
    occupied or disconnected cells.
    """
    goal_row, goal_col, inside = occupancy.cells_of([goal])
    if not inside[0] or occupancy.mask[goal_row[0], goal_col[0]]:
        msg = f"goal {goal} is not in a free cell"
        raise UnreachableGoalError(msg)

    rows, cols = occupancy.shape
    free = ~occupancy.mask
    index = np.arange(rows * cols).reshape(rows, cols)
    m = occupancy.meters_per_cell
    sources, targets, lengths = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r0, r1 = max(0, -dr), rows - max(0, dr)
        c0, c1 = max(0, -dc), cols - max(0, dc)
        a = (slice(r0, r1), slice(c0, c1))
        b = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        ok = free[a] & free[b]
        sources.append(index[a][ok])
        targets.append(index[b][ok])
        lengths.append(np.full(int(ok.sum()), m * math.hypot(dr, dc)))
    graph = sparse.csr_matrix(
        (np.concatenate(lengths), (np.concatenate(sources), np.concatenate(targets))), shape=(rows * cols,) * 2
    )
    dist = csgraph.dijkstra(graph, directed=False, indices=int(index[goal_row[0], goal_col[0]]))
    dist = dist.reshape(rows, cols)
    dist[occupancy.mask] = math.inf
    return dist


def feature_maps(occupancy: OccupancyMap, goal: tuple[float, float]) -> FeatureMaps:
    dist = goal_distance(occupancy, goal)
    connected = np.isfinite(dist)
    disconnected = int((~occupancy.mask & ~connected).sum())
    if disconnected:
        logger.warning("%d free cells have no path to goal %s; their actions are penalized", disconnected, goal)
    scale = float(dist[connected].max()) or 1.0
    mu_goal = np.where(connected, -dist / scale, -1.0)

    if occupancy.mask.any():
        clearance = ndimage.distance_transform_edt(~occupancy.mask) * occupancy.meters_per_cell
    else:
        clearance = np.full(occupancy.shape, constants.CLEARANCE_CAP)
    cap = constants.CLEARANCE_CAP
    mu_clear = np.minimum(clearance, cap) / cap - 1.0
    return FeatureMaps(mu_goal, mu_clear, connected)


def _open_map(grid: GridSpace) -> OccupancyMap:
    # one free cell per planar node spacing, covering the planar bounds
    m = float(min(grid.spacing[0], grid.spacing[1]))
    cols = math.ceil((grid.upper[0] - grid.lower[0]) / m) + 1
    rows = math.ceil((grid.upper[1] - grid.lower[1]) / m) + 1
    origin = (grid.lower[0] - m / 2, grid.lower[1] - m / 2)
    return OccupancyMap(np.zeros((rows, cols), dtype=bool), m, origin)


class QTable(NamedTuple):
    intent: Intent
    beta: float
    grid: GridSpace
    """Physical grid the table is stored on."""
    values: NDArray[np.float64]
    """Q(x, u), shape ``(physical nodes, actions)``; -LARGE for blocked actions."""
    sweeps: int = 0
    converged: bool = True

    def __repr__(self) -> str:
        return f"QTable({self.intent!r}, beta={self.beta}, {self.values.shape}, sweeps={self.sweeps})"

    def at(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.values[self.grid.nearest_nodes(x)[0]]


class QTableCache:
    """Binary cache of Q tables under a directory, keyed by a content digest."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def __repr__(self) -> str:
        return f"QTableCache({self.directory})"

    @classmethod
    def from_env(cls) -> QTableCache | None:
        directory = os.environ.get(constants.CACHE_ENV_VAR)
        return cls(directory) if directory else None

    def path(self, key: str) -> Path:
        return self.directory / f"q-{key}.npz"

    def load(self, key: str) -> tuple[NDArray[np.float64], int, bool] | None:
        path = self.path(key)
        if not path.exists():
            return None
        with np.load(path) as data:
            logger.debug("Q table cache hit %s", path)
            return np.asarray(data["values"]), int(data["sweeps"]), bool(data["converged"])

    def save(self, key: str, table: QTable) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(self.path(key), values=table.values, sweeps=table.sweeps, converged=table.converged)


def q_table_key(
    grid: GridSpace, spec: HumanModelSpec, intent: Intent, weights: tuple[float, float], occupancy: OccupancyMap
) -> str:
    return utils.digest(
        occupancy.digest(),
        [grid.lower, grid.upper, grid.cells, grid.periodic],
        intent.goal,
        weights,
        spec.reward_scale,
        spec.dt,
        spec.speed,
        spec.actions,
        spec.stop_action,
        spec.kind.value,
    )


def blocked_actions(grid: GridSpace, successors: NDArray[np.float64]) -> NDArray[np.bool_]:
    """``(nodes, actions)`` flags for actions whose successor position is occupied."""
    actions, count, _ = successors.shape
    if grid.occupancy is None:
        return np.zeros((count, actions), dtype=bool)
    occupied = grid.occupancy.occupied(successors[:, :, :2].reshape(-1, 2))
    return occupied.reshape(actions, count).T


def build_q_table(
    grid: GridSpace,
    spec: HumanModelSpec,
    intent: Intent,
    weights: tuple[float, float] | None = None,
    *,
    cache: QTableCache | None = None,
) -> QTable:
    """
    Soft value iteration Q(x, u) = r(x, u) + gamma * V_soft(f_H(x, u)) with r = scale * theta^T mu.

    Features are evaluated at the successor state. Actions whose successor is occupied, and all
    actions out of cells with no path to the goal, get -LARGE.

    Raises:
        UnreachableGoalError: the intent's goal sits in an occupied cell.
    """
    if intent.goal is None:
        msg = f"intent {intent.name} has no goal"
        raise InconsistentSpecError(msg)
    weights = intent.reward_weights if weights is None else weights
    occupancy = grid.occupancy if grid.occupancy is not None else _open_map(grid)
    key = q_table_key(grid, spec, intent, weights, occupancy)
    if cache is not None and (hit := cache.load(key)) is not None:
        values, sweeps, converged = hit
        return QTable(intent, intent.beta, grid, values, sweeps, converged)

    features = feature_maps(occupancy, intent.goal)
    nodes = grid.nodes()
    successors = spec.successors(nodes)
    actions, count, dims = successors.shape
    flat = grid.clip(successors.reshape(-1, dims))

    row, col, inside = occupancy.cells_of(flat[:, :2])
    reward = spec.reward_scale * (weights[0] * features.goal[row, col] + weights[1] * features.clearance[row, col])
    penalized = ~inside | occupancy.mask[row, col] | ~features.connected[row, col]
    indices, corner_weights, all_blocked = grid.corner_weights(flat, check=False)
    penalized |= all_blocked

    node_row, node_col, _ = occupancy.cells_of(nodes[:, :2])
    stranded = ~features.connected[node_row, node_col]

    # rows ordered action-major to match successors
    transition = sparse.csr_matrix(
        (corner_weights.ravel(), (np.repeat(np.arange(actions * count), indices.shape[1]), indices.ravel())),
        shape=(actions * count, count),
    )
    reward = reward.reshape(actions, count).T
    blocked = penalized.reshape(actions, count).T | stranded[:, None]

    value = np.zeros(count)
    q = np.full((count, actions), -constants.LARGE)
    converged = False
    sweeps = 0
    for sweeps in range(1, constants.SOFT_VI_MAX_SWEEPS + 1):  # noqa: B007
        future = (transition @ value).reshape(actions, count).T
        q = np.where(blocked, -constants.LARGE, reward + constants.SOFT_VI_DISCOUNT * future)
        updated = np.maximum(logsumexp(q, axis=1), -constants.LARGE)
        delta = float(np.max(np.abs(updated - value)))
        value = updated
        if delta < constants.SOFT_VI_TOLERANCE:
            converged = True
            break
    if not converged:
        logger.warning("Soft value iteration for %r stopped after %d sweeps", intent, sweeps)
    logger.debug("Q table for %r converged in %d sweeps", intent, sweeps)

    table = QTable(intent, intent.beta, grid, q, sweeps, converged)
    if cache is not None:
        cache.save(key, table)
    return table


class LikelihoodTable(NamedTuple):
    """P(u | x; theta, beta) at every physical node, shape ``(nodes, actions)``."""

    intent: Intent
    grid: GridSpace
    probs: NDArray[np.float64]

    def __repr__(self) -> str:
        return f"LikelihoodTable({self.intent!r}, {self.probs.shape})"

    @classmethod
    def from_q_table(cls, table: QTable, beta: float | None = None) -> LikelihoodTable:
        beta = table.beta if beta is None else beta
        if beta == 0.0:
            probs = np.full_like(table.values, 1.0 / table.values.shape[1])
        else:
            probs = softmax(beta * table.values, axis=1)
        return cls(table.intent, table.grid, probs)

    def at(self, x: ArrayLike) -> NDArray[np.float64]:
        return self.probs[self.grid.nearest_nodes(x, check=False)[0]]

    def at_nodes(self, points: ArrayLike) -> NDArray[np.float64]:
        """Action distributions at the nearest node of each physical point, shape ``(points, actions)``."""
        return self.probs[self.grid.nearest_nodes(points, check=False)]

    def restricted_mask(self, delta: float) -> NDArray[np.bool_]:
        """Per node, the actions with likelihood >= delta, falling back to the argmax when none qualify."""
        mask = self.probs >= delta
        empty = ~mask.any(axis=1)
        if empty.any():
            best = np.argmax(self.probs[empty], axis=1)
            mask[np.flatnonzero(empty), best] = True
        return mask


def likelihood(table: LikelihoodTable, x: ArrayLike, action: int) -> float:
    """Probability of ``action`` at the node nearest the physical state ``x``."""
    return float(table.at(x)[action])


def restricted_controls(table: LikelihoodTable, x: ArrayLike, delta: float) -> tuple[int, ...]:
    """
    U^t = {u : P(u | x; theta*) >= delta}; the single most likely action when that is empty.
    """
    probs = table.at(x)
    allowed = tuple(int(a) for a in np.flatnonzero(probs >= delta))
    return allowed or (int(np.argmax(probs)),)


class HumanModel:
    """A human model spec with its physical grid and per-intent Q and likelihood tables."""

    def __init__(
        self,
        spec: HumanModelSpec,
        grid: GridSpace,
        q_tables: Sequence[QTable],
    ) -> None:
        self.spec = spec
        self.grid = grid
        self.q_tables = tuple(q_tables)
        self.likelihoods = tuple(LikelihoodTable.from_q_table(t) for t in self.q_tables)

    def __repr__(self) -> str:
        return f"HumanModel({self.spec!r}, {self.grid!r}, intents={list(self.spec.intents)})"

    @classmethod
    def build(cls, spec: HumanModelSpec, grid: GridSpace, *, cache: QTableCache | None = None) -> HumanModel:
        """Builds Q tables for every intent; intents that share goal and weights share one table."""
        built: dict[tuple[Any, ...], QTable] = {}
        tables = []
        for intent in spec.intents:
            key = (intent.goal, intent.reward_weights)
            if key not in built:
                built[key] = build_q_table(grid, spec, intent, cache=cache)
            tables.append(built[key]._replace(intent=intent, beta=intent.beta))
        logger.info("Built %d Q tables (%d distinct) on %r", len(tables), len(built), grid)
        return cls(spec, grid, tables)

    def intent_index(self, name: str) -> int:
        for i, intent in enumerate(self.spec.intents):
            if intent.name == name:
                return i
        msg = f"unknown intent {name}"
        raise KeyError(msg)
