"""
Simplified contingency planning at an intersection.

The robot is a Dubins car whose turn rate tracks a fixed left-turn route, so a plan only chooses
accelerations: one for the shared segment up to the branching step and one for the branch after
it. Every step the robot ranks the whole library: collisions against the predictions of *both*
intents during the shared segment, plus the belief-weighted cost of the branch against the most
likely intent. The human is simulated from its intent-conditioned likelihood restricted to the
analyzed control set, and the robot's belief follows the Bayes update on what it observes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np
from typing_extensions import Self

from learnreach import constants, utils
from learnreach.exceptions import ConfigError, NoSafePlanError
from learnreach.human_models import restricted_controls
from learnreach.learner_dynamics import bayes_update
from learnreach.models import PlannerKind, SimMetrics

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from numpy.typing import ArrayLike, NDArray

    from learnreach.gridspace import OccupancyMap
    from learnreach.human_models import HumanModel, LikelihoodTable

logger = logging.getLogger(__name__)


class RobotRoute(NamedTuple):
    """North-bound approach, a quarter-circle left turn, then west to the exit."""

    start: tuple[float, float]
    turn_y: float
    """y at which the turn begins."""
    radius: float
    exit_x: float

    @property
    def approach(self) -> float:
        return self.turn_y - self.start[1]

    @property
    def arc(self) -> float:
        return 0.5 * math.pi * self.radius

    @property
    def length(self) -> float:
        return self.approach + self.arc + (self.start[0] - self.radius - self.exit_x)

    @property
    def goal(self) -> tuple[float, float]:
        return (self.exit_x, self.turn_y + self.radius)

    def validate(self) -> Self:
        if self.approach <= 0.0:
            raise ConfigError("robot.route.turn_y", f"{self.turn_y} must lie north of the start {self.start[1]}")
        if self.radius <= 0.0:
            raise ConfigError("robot.route.radius", f"must be positive, got {self.radius}")
        if self.exit_x >= self.start[0] - self.radius:
            raise ConfigError("robot.route.exit_x", f"{self.exit_x} must lie west of the turn")
        return self

    def pose(self, s: ArrayLike) -> NDArray[np.float64]:
        """
        (x, y, heading) at arc length ``s`` (clamped to the route), shape ``s.shape + (3,)``.

        >>> route = RobotRoute((2.0, -6.0), -2.0, 4.0, -12.0)
        >>> [round(float(v), 4) for v in route.pose(4.0 + route.arc)]
        [-2.0, 2.0, 3.1416]
        """
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        x0, y0 = self.start
        cx = x0 - self.radius
        on_approach = s <= self.approach
        on_arc = ~on_approach & (s <= self.approach + self.arc)
        theta = np.clip((s - self.approach) / self.radius, 0.0, 0.5 * math.pi)
        beyond = np.maximum(s - self.approach - self.arc, 0.0)
        x = np.where(on_approach, x0, np.where(on_arc, cx + self.radius * np.cos(theta), cx - beyond))
        exit_y = self.turn_y + self.radius
        y = np.where(on_approach, y0 + s, np.where(on_arc, self.turn_y + self.radius * np.sin(theta), exit_y))
        heading = np.where(on_approach, 0.5 * math.pi, np.where(on_arc, 0.5 * math.pi + theta, math.pi))
        return np.stack([x, y, heading], axis=-1)

    def to_dict(self) -> dict[str, Any]:
        return {"start": list(self.start), "turn_y": self.turn_y, "radius": self.radius, "exit_x": self.exit_x}


class CostWeights(NamedTuple):
    collision: float = 1000.0
    """Per-step weight of the squared clearance violation."""
    clearance: float = 1.0
    """Desired gap (meters) between footprints beyond contact."""
    progress: float = 1.0
    """Reward per meter travelled along the route."""
    smoothness: float = 0.01
    """Per-step weight of the squared acceleration."""

    def to_dict(self) -> dict[str, Any]:
        return self._asdict()


class ContingencySimConfig(NamedTuple):
    route: RobotRoute
    initial_speed: float
    human_start: tuple[float, float, float]
    true_goal: int
    """Index of the intent the simulated human follows."""
    prior: float
    """Initial belief in the tracked intent."""
    branch_step: int
    """t_b in planning steps; the plan hedges against both intents before it."""
    horizon_steps: int = 20
    sim_steps: int = 40
    accelerations: tuple[float, ...] = tuple(float(a) for a in range(-8, 5))
    max_speed: float = 10.0
    delta: float = constants.DRIVING_DELTA
    tracked: int = 0
    weights: CostWeights = CostWeights()
    car_radius: float = constants.CAR_RADIUS
    seed: int = 0

    def __repr__(self) -> str:
        return (
            f"ContingencySimConfig(goal={self.true_goal}, b0={self.prior}, v0={self.initial_speed}, "
            f"t_b={self.branch_step}/{self.horizon_steps}, seed={self.seed})"
        )

    @property
    def library_size(self) -> int:
        return len(self.accelerations) ** 2

    def validate(self) -> Self:
        """
        Raises:
            ConfigError: the branching step exceeds the horizon or the library is empty.
        """
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps", f"must be at least 1, got {self.horizon_steps}")
        if not 0 <= self.branch_step <= self.horizon_steps:
            raise ConfigError(
                "branch_step", f"{self.branch_step} outside [0, {self.horizon_steps}] (the planning horizon)"
            )
        if not self.accelerations:
            raise ConfigError("accelerations", "the plan library is empty")
        if not 0.0 <= self.initial_speed <= self.max_speed:
            raise ConfigError("initial_speed", f"{self.initial_speed} outside [0, {self.max_speed}]")
        if not 0.0 <= self.prior <= 1.0:
            raise ConfigError("prior", f"{self.prior} outside [0, 1]")
        if self.true_goal not in (0, 1):
            raise ConfigError("true_goal", f"expected 0 or 1, got {self.true_goal}")
        self.route.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "route": self.route.to_dict(),
            "initial_speed": self.initial_speed,
            "human_start": list(self.human_start),
            "true_goal": self.true_goal,
            "prior": self.prior,
            "branch_step": self.branch_step,
            "horizon_steps": self.horizon_steps,
            "sim_steps": self.sim_steps,
            "accelerations": list(self.accelerations),
            "max_speed": self.max_speed,
            "delta": self.delta,
            "tracked": self.tracked,
            "weights": self.weights.to_dict(),
            "car_radius": self.car_radius,
            "seed": self.seed,
        }


class SimStep(NamedTuple):
    step: int
    robot: tuple[float, float, float]
    speed: float
    human: tuple[float, float, float]
    belief: float
    """Belief in the tracked intent before observing this step's human action."""
    plan: int
    """Library index (shared * |A| + branch) chosen at this step; -1 on the final record."""
    action: int
    """Observed human action; -1 on the final record."""


class SimResult(NamedTuple):
    metrics: SimMetrics
    trace: list[SimStep]
    config: ContingencySimConfig

    def __repr__(self) -> str:
        return f"SimResult({self.config!r}, efficiency={self.metrics.efficiency:.3f}, safety={self.metrics.safety:.3f})"


def _advance(
    s: NDArray[np.float64], v: NDArray[np.float64], a: NDArray[np.float64], dt: float, max_speed: float, length: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    v_next = np.clip(v + a * dt, 0.0, max_speed)
    return np.minimum(s + 0.5 * (v + v_next) * dt, length), v_next


def plan_library(
    config: ContingencySimConfig, s: float, v: float, dt: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Arc length after each of the N planned steps for every (shared, branch) acceleration pair.

    Returns ``(arc, accel)`` with ``arc`` of shape ``(|A|, |A|, N)`` and ``accel`` of shape
    ``(|A|, |A|, N)`` holding the acceleration applied at each step.
    """
    accels = np.asarray(config.accelerations, dtype=float)
    count = accels.size
    shared, branch = np.meshgrid(accels, accels, indexing="ij")
    position = np.full((count, count), s)
    speed = np.full((count, count), v)
    arc = np.empty((count, count, config.horizon_steps))
    applied = np.empty_like(arc)
    for k in range(config.horizon_steps):
        a = shared if k < config.branch_step else branch
        position, speed = _advance(position, speed, a, dt, config.max_speed, config.route.length)
        arc[:, :, k] = position
        applied[:, :, k] = a
    return arc, applied


def predict(model: HumanModel, intent: int, x: Sequence[float], steps: int) -> NDArray[np.float64]:
    """Planar positions of the argmax-Q rollout of ``intent`` after 1..steps observation periods."""
    table = model.q_tables[intent]
    out = np.empty((steps, 2))
    state = tuple(float(v) for v in x)
    for k in range(steps):
        node = table.grid.nearest_nodes([state], check=False)[0]
        state = model.spec.step(state, int(np.argmax(table.values[node])))
        out[k] = state[:2]
    return out


def _collision(
    positions: NDArray[np.float64], predicted: NDArray[np.float64], config: ContingencySimConfig
) -> NDArray[np.float64]:
    gap = np.linalg.norm(positions - predicted, axis=-1) - 2.0 * config.car_radius
    violation = np.maximum(config.weights.clearance - gap, 0.0)
    return config.weights.collision * violation**2


def choose_plan(
    config: ContingencySimConfig,
    s: float,
    v: float,
    dt: float,
    predictions: Sequence[NDArray[np.float64]],
    belief: float,
    occupancy: OccupancyMap | None = None,
) -> tuple[int, int]:
    """
    The (shared, branch) acceleration indices minimizing J_share + b(g*) J_cont.

    J_share charges collisions against every intent's prediction over the shared steps plus their
    smoothness and progress; J_cont charges the branch against the prediction of the most likely
    intent g*. Plans that enter an occupied cell are discarded before ranking.

    Args:
        config (ContingencySimConfig): Trial settings; ``branch_step`` splits the shared segment from the branch.
        s (float): Robot arc length along its route.
        v (float): Robot speed.
        dt (float): Planning step in seconds.
        predictions (Sequence[NDArray]): Predicted human positions per intent, ``horizon_steps`` rows each.
        belief (float): Current belief in the tracked intent.
        occupancy (OccupancyMap | None): Map whose occupied cells rule plans out.

    Returns:
        tuple[int, int] indices into ``config.accelerations`` of the shared and branch accelerations.

    Raises:
        NoSafePlanError: every plan enters an occupied cell.
    """
    arc, applied = plan_library(config, s, v, dt)
    positions = config.route.pose(arc)[..., :2]
    k_b = config.branch_step
    w = config.weights
    likely = config.tracked if belief >= 0.5 else 1 - config.tracked  # noqa: PLR2004
    weight = belief if likely == config.tracked else 1.0 - belief

    shared = np.zeros(arc.shape[:2])
    if k_b > 0:
        hedge = np.max([_collision(positions[:, :, :k_b], p[:k_b], config) for p in predictions], axis=0)
        shared = (
            hedge.sum(axis=-1)
            + w.smoothness * (applied[:, :, :k_b] ** 2).sum(axis=-1)
            - w.progress * (arc[:, :, k_b - 1] - s)
        )
    contingent = np.zeros(arc.shape[:2])
    if k_b < config.horizon_steps:
        start = s if k_b == 0 else arc[:, :, k_b - 1]
        contingent = (
            _collision(positions[:, :, k_b:], predictions[likely][k_b:], config).sum(axis=-1)
            + w.smoothness * (applied[:, :, k_b:] ** 2).sum(axis=-1)
            - w.progress * (arc[:, :, -1] - start)
        )
    cost = shared + weight * contingent

    if occupancy is not None:
        blocked = occupancy.occupied(positions.reshape(-1, 2)).reshape(arc.shape).any(axis=-1)
        cost = np.where(blocked, math.inf, cost)
    if not np.isfinite(cost).any():
        msg = f"every plan from s={s:.2f} m at {v:.2f} m/s enters an occupied cell"
        raise NoSafePlanError(msg)
    i, j = np.unravel_index(int(np.argmin(cost)), cost.shape)
    return int(i), int(j)


def sample_action(rng: np.random.Generator, table: LikelihoodTable, x: Sequence[float], delta: float) -> int:
    """Draws from P(u | x; g) renormalized over U^t(g, delta)."""
    allowed = list(restricted_controls(table, x, delta))
    probs = table.at(x)[allowed]
    total = float(probs.sum())
    probs = probs / total if total > 0.0 else np.full(len(allowed), 1.0 / len(allowed))
    return allowed[int(rng.choice(len(allowed), p=probs))]


def run_contingency_sim(config: ContingencySimConfig, model: HumanModel) -> SimResult:
    """
    Closed loop of the replanning robot and the sampled human.

    Raises:
        ConfigError: the branching step exceeds the planning horizon.
        NoSafePlanError: no plan avoids the occupied cells at some step.
    """
    config.validate()
    dt = model.spec.dt
    rng = np.random.default_rng(config.seed)
    tracked = model.likelihoods[config.tracked]
    other = model.likelihoods[1 - config.tracked]
    truth = model.likelihoods[config.true_goal]
    occupancy = model.grid.occupancy
    accels = config.accelerations

    s, v = 0.0, config.initial_speed
    human = tuple(float(c) for c in config.human_start)
    belief = utils.clamp_belief(config.prior)
    trace: list[SimStep] = []
    for step in range(config.sim_steps):
        predictions = [predict(model, g, human, config.horizon_steps) for g in (0, 1)]
        i, j = choose_plan(config, s, v, dt, predictions, belief, occupancy)
        action = sample_action(rng, truth, human, config.delta)
        robot = tuple(float(c) for c in config.route.pose(s))
        trace.append(SimStep(step, robot, v, human, belief, i * len(accels) + j, action))

        belief = bayes_update(belief, human, action, tracked, other).belief
        human = model.spec.step(human, action)
        a = accels[i] if config.branch_step > 0 else accels[j]
        s_next, v_next = _advance(
            np.asarray(s), np.asarray(v), np.asarray(a), dt, config.max_speed, config.route.length
        )
        s, v = float(s_next), float(v_next)
    trace.append(SimStep(config.sim_steps, tuple(float(c) for c in config.route.pose(s)), v, human, belief, -1, -1))

    robot_xy = np.asarray([r.robot[:2] for r in trace])
    human_xy = np.asarray([r.human[:2] for r in trace])
    safety = float(np.min(np.linalg.norm(robot_xy - human_xy, axis=1))) - 2.0 * config.car_radius
    efficiency = float(np.linalg.norm(robot_xy[-1] - np.asarray(config.route.goal)))
    result = SimResult(SimMetrics(efficiency, safety), trace, config)
    logger.debug("%r", result)
    return result


class Trial(NamedTuple):
    planner: PlannerKind
    prior_kind: str
    """``correct``, ``incorrect`` or ``uniform``: the prior placed on the true goal."""
    result: SimResult

    def __repr__(self) -> str:
        return f"Trial({self.planner.value}, {self.prior_kind}, {self.result!r})"

    def to_dict(self) -> dict[str, Any]:
        config = self.result.config
        return {
            "planner": self.planner.value,
            "prior_kind": self.prior_kind,
            "true_goal": config.true_goal,
            "initial_speed": config.initial_speed,
            "prior": config.prior,
            "branch_step": config.branch_step,
            "seed": config.seed,
            "efficiency": self.result.metrics.efficiency,
            "safety": self.result.metrics.safety,
        }


class SummaryRow(NamedTuple):
    planner: str
    prior_kind: str
    trials: int
    efficiency_mean: float
    efficiency_std: float
    safety_mean: float
    safety_std: float
    safety_min: float


def heuristic_branch_step(dt: float, branch_time: float = constants.HEURISTIC_BRANCH_TIME) -> int:
    """
    A branching time rounded up to whole planning steps.

    >>> heuristic_branch_step(0.0891)
    4
    """
    return math.ceil(branch_time / dt - constants.HORIZON_STEP_TOLERANCE)


def trial_configs(
    template: ContingencySimConfig,
    speeds: Sequence[float],
    priors: Mapping[str, float],
) -> list[tuple[str, ContingencySimConfig]]:
    """Every (speed, true goal, prior kind) combination with its own seed; branch_step is left to the planner."""
    configs = []
    index = 0
    for speed in speeds:
        for goal in (0, 1):
            for kind, on_truth in priors.items():
                prior = on_truth if goal == template.tracked else 1.0 - on_truth
                configs.append(
                    (
                        kind,
                        template._replace(
                            initial_speed=float(speed), true_goal=goal, prior=prior, seed=template.seed + index
                        ),
                    )
                )
                index += 1
    return configs


def run_contingency_batch(
    model: HumanModel,
    trials: Sequence[tuple[str, ContingencySimConfig]],
    branch_steps: Mapping[PlannerKind, Sequence[int]],
    *,
    workers: int = 1,
) -> list[Trial]:
    """
    Runs every trial under every planner. ``branch_steps[planner][i]`` is t_b for trial ``i``.
    Results keep (planner, trial) order for any worker count.
    """
    jobs = [
        (planner, kind, config._replace(branch_step=int(steps[i])))
        for planner, steps in branch_steps.items()
        for i, (kind, config) in enumerate(trials)
    ]

    def work(job: tuple[PlannerKind, str, ContingencySimConfig]) -> Trial:
        planner, kind, config = job
        return Trial(planner, kind, run_contingency_sim(config, model))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    logger.info("Ran %d contingency trials", len(results))
    return results


def batch_summary(trials: Sequence[Trial]) -> list[SummaryRow]:
    """Mean/std efficiency and safety per planner and prior kind, plus an ``all`` row per planner."""
    rows = []
    planners = list(dict.fromkeys(t.planner for t in trials))
    kinds = list(dict.fromkeys(t.prior_kind for t in trials))
    for planner in planners:
        for kind in [*kinds, "all"]:
            group = [t.result.metrics for t in trials if t.planner == planner and kind in ("all", t.prior_kind)]
            if not group:
                continue
            efficiency = np.asarray([m.efficiency for m in group])
            safety = np.asarray([m.safety for m in group])
            rows.append(
                SummaryRow(
                    planner.value,
                    kind,
                    len(group),
                    float(efficiency.mean()),
                    float(efficiency.std()),
                    float(safety.mean()),
                    float(safety.std()),
                    float(safety.min()),
                )
            )
    return rows
