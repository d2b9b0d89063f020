"""The four bundled case studies: catalog, system assembly and runners."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, NamedTuple, Union

import numpy as np

from learnreach import constants, contingency, queries, reach_solver, utils
from learnreach.config import Section, catalog_names, load_config
from learnreach.contingency import ContingencySimConfig, CostWeights, RobotRoute, SummaryRow, Trial
from learnreach.exceptions import ConfigError, InconsistentSpecError
from learnreach.human_models import HumanModel
from learnreach.learner_dynamics import BayesLearner, GradientModel
from learnreach.models import (
    BehaviorMode,
    BehaviorTrace,
    BranchTime,
    InterpolationMode,
    JointState,
    LearnerKind,
    PlannerKind,
    QuerySpec,
    ReachabilityHeatmap,
    ScenarioKind,
    Strategy,
    TTLReport,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from learnreach.config import ScenarioConfig
    from learnreach.gridspace import GridSpace
    from learnreach.human_models import QTableCache
    from learnreach.reach_solver import JointSystem, ValueSolution

logger = logging.getLogger(__name__)


def scenario_catalog() -> list[ScenarioConfig]:
    """Every bundled scenario, parsed and validated."""
    return [load_config(base=name) for name in catalog_names()]


def get_scenario(name: str) -> ScenarioConfig:
    return load_config(base=name)


def build_system(
    config: ScenarioConfig,
    *,
    interpolation: InterpolationMode = InterpolationMode.MULTILINEAR,
    workers: int = 1,
    cache: QTableCache | None = None,
) -> JointSystem:
    """Q tables, likelihoods and the learner for ``config``, stacked into one joint system."""
    physical = config.physical_grid()
    if config.learner.kind == LearnerKind.GRADIENT:
        config.human.validate(learner_intents=1)
        goal = config.human.intents[0].goal
        if goal is None:
            raise ConfigError("human.intents[0].goal", "the gradient learner needs a goal")
        learner = GradientModel.build(physical, config.human, goal, config.learner, cache=cache)
        model = HumanModel(config.human, physical, [])
        return reach_solver.JointSystem(
            config.joint_grid(), model, learner, interpolation=interpolation, workers=workers
        )
    config.human.validate(learner_intents=2)
    model = HumanModel.build(config.human, physical, cache=cache)
    bayes = BayesLearner.from_model(model, config.learner)
    return reach_solver.JointSystem(config.joint_grid(), model, bayes, interpolation=interpolation, workers=workers)


def _free(grid: GridSpace, points: Sequence[Sequence[float]]) -> list[tuple[float, ...]]:
    if grid.occupancy is None:
        return [tuple(p) for p in points]
    occupied = grid.occupancy.occupied(np.asarray(points, dtype=float)[:, :2]) if len(points) else []
    return [tuple(float(v) for v in p) for p, o in zip(points, occupied) if not o]


def lattice_axes(section: Section) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """x and y values of an evenly spaced planar lattice ``{"lower", "upper", "count"}``."""
    lower = section.numbers("lower", length=2)
    upper = section.numbers("upper", length=2)
    count = section.raw("count")
    positive = isinstance(count, list) and all(isinstance(c, int) and c >= 1 for c in count)
    if not positive or len(count) != 2:  # noqa: PLR2004
        raise ConfigError(section.field("count"), f"expected 2 positive integers, got {count!r}")
    return np.linspace(lower[0], upper[0], count[0]), np.linspace(lower[1], upper[1], count[1])


def lattice_states(grid: GridSpace, xs: Sequence[float], ys: Sequence[float]) -> list[tuple[float, ...]]:
    """Free lattice states, x varying fastest."""
    return _free(grid, [(float(x), float(y)) for y in ys for x in xs])


def region_states(grid: GridSpace, section: Section) -> list[tuple[float, ...]]:
    """Free physical grid nodes inside the rectangle ``{"lower", "upper"}``."""
    lower = np.asarray(section.numbers("lower", length=2))
    upper = np.asarray(section.numbers("upper", length=2))
    nodes = grid.nodes()
    planar = nodes[:, :2]
    inside = np.all((planar >= lower - constants.TIE_EPSILON) & (planar <= upper + constants.TIE_EPSILON), axis=1)
    states = _free(grid, nodes[inside].tolist())
    if not states:
        raise ConfigError(section.path, "region holds no free grid node")
    return states


class RegionSummary(NamedTuple):
    name: str
    states: int
    mean: float | None
    std: float | None
    unreachable: int


class ConfidenceResult(NamedTuple):
    report: TTLReport
    regions: list[RegionSummary]
    solution: ValueSolution
    heatmap: NDArray[np.float64]
    """TTL seconds over the lattice at the region prior, highest y in row 0; inf where occupied or Unreachable."""

    def __repr__(self) -> str:
        return f"ConfidenceResult({self.report!r}, regions={[r.name for r in self.regions]})"


class LegibilityResult(NamedTuple):
    traces: dict[str, BehaviorTrace]
    """Keyed ``<intent>-<legible|deceptive|argmax>``."""

    def crossing(self, intent: str, mode: str) -> float:
        """Crossing step, inf when the trace never reaches the target."""
        step = self.traces[f"{intent}-{mode}"].crossing_step
        return math.inf if step is None else float(step)


class GradientResult(NamedTuple):
    heatmap: ReachabilityHeatmap
    start: tuple[float, ...]


class DrivingResult(NamedTuple):
    branch: BranchTime
    """t_b at the configured human start and prior."""
    trials: list[Trial]
    summary: list[SummaryRow]


ScenarioResult = Union[ConfidenceResult, LegibilityResult, GradientResult, DrivingResult]


def require_query(config: ScenarioConfig) -> QuerySpec:
    """The backward query of ``config``; raises ConfigError when the config has none."""
    if config.query is None:
        raise ConfigError("query", f"scenario {config.name} needs a query")
    return config.query


def run_confidence(config: ScenarioConfig, system: JointSystem) -> ConfidenceResult:
    """Best-case TTL to confidence across priors and start states, plus per-region means."""
    analysis = Section(config.analysis, "analysis")
    query = require_query(config)
    priors = analysis.numbers("priors")
    xs, ys = lattice_axes(analysis.section("states"))
    states = lattice_states(system.physical_grid, xs, ys)
    report, solution = queries.ttl_sweep(query, system, states, priors)

    prior = analysis.probability("region_prior", constants.PRIOR_UNIFORM)
    at_prior = {e.physical: e.ttl for e in queries.ttl_report(solution, states, [prior]).by_state(prior)}
    heatmap = np.asarray(
        [[utils.none_to_inf(at_prior.get((float(x), float(y)))) for x in xs] for y in reversed(ys)], dtype=float
    )
    regions = []
    if analysis.has("regions"):
        for name in sorted(analysis.section("regions").data):
            section = analysis.section("regions").section(name)
            members = region_states(system.physical_grid, section)
            mean, std, missing = queries.ttl_report(solution, members, [prior]).aggregate()
            regions.append(RegionSummary(name, len(members), mean, std, missing))
            logger.info("Region %s: %d states, mean TTL %s s (%d unreachable)", name, len(members), mean, missing)
    return ConfidenceResult(report, regions, solution, heatmap)


def run_legibility(config: ScenarioConfig, system: JointSystem) -> LegibilityResult:
    """Legible and deceptive data toward each goal, with the argmax-Q reference path."""
    analysis = Section(config.analysis, "analysis")
    start = analysis.numbers("start", length=system.model.spec.physical_dims)
    prior = analysis.probability("prior", constants.PRIOR_UNIFORM)
    delta = analysis.probability("delta", constants.LEGIBILITY_DELTA)
    threshold = analysis.probability("threshold", constants.CONFIDENCE_THRESHOLD)
    horizon = analysis.number("horizon", positive=True)
    tracked = config.learner.tracked
    z0 = JointState.create(start, (prior,), system.model.spec.kind.heading_dims)
    steps = QuerySpec(queries.intent_target(0, tracked), Strategy.MINIMIZE, horizon, system.dt).steps

    traces: dict[str, BehaviorTrace] = {}
    for goal, intent in enumerate(system.model.spec.intents):
        for mode in (BehaviorMode.LEGIBLE, BehaviorMode.DECEPTIVE):
            traces[f"{intent.name}-{mode.value}"] = queries.synthesize_behavior(
                system, goal, mode, z0, horizon, tracked=tracked, delta=delta, threshold=threshold
            )
        traces[f"{intent.name}-argmax"] = queries.argmax_policy_trace(
            system, goal, z0, steps, tracked=tracked, threshold=threshold
        )
    return LegibilityResult(traces)


def run_gradient_init(config: ScenarioConfig, system: JointSystem) -> GradientResult:
    """Earliest arrival at every w* from each initial w0 under a gradient learner."""
    analysis = Section(config.analysis, "analysis")
    start = analysis.numbers("start", length=system.model.spec.physical_dims)
    weights = analysis.numbers("initial_weights")
    horizon = analysis.number("horizon", constants.GRADIENT_HORIZON, positive=True)
    for i, w in enumerate(weights):
        if not 0.0 <= w <= 1.0:
            raise ConfigError(f"analysis.initial_weights[{i}]", f"{w} outside [0, 1]")
    return GradientResult(queries.reachable_weights(system, start, weights, horizon), start)


class DrivingSettings(NamedTuple):
    template: ContingencySimConfig
    speeds: tuple[float, ...]
    priors: dict[str, float]
    threshold: float
    heuristic_branch_time: float
    horizon: float


def driving_settings(config: ScenarioConfig, seed: int | None = None) -> DrivingSettings:
    analysis = Section(config.analysis, "analysis")
    robot = analysis.section("robot")
    route = robot.section("route")
    start_x, start_y = route.numbers("start", length=2)
    costs = analysis.section("costs") if analysis.has("costs") else Section({}, "analysis.costs")
    defaults = CostWeights()
    human_start = analysis.numbers("human_start", length=3)
    horizon = analysis.number("horizon", constants.DRIVING_HORIZON, positive=True)
    horizon_steps = utils.steps_in_horizon(horizon, config.human.dt)
    if horizon_steps is None:
        raise ConfigError("analysis.horizon", f"{horizon} s is not a whole number of {config.human.dt} s steps")
    priors_section = analysis.section("priors")
    priors = {name: priors_section.probability(name) for name in priors_section.data}
    template = ContingencySimConfig(
        route=RobotRoute(
            (start_x, start_y),
            route.number("turn_y"),
            route.number("radius", positive=True),
            route.number("exit_x"),
        ),
        initial_speed=0.0,
        human_start=(human_start[0], human_start[1], utils.wrap_angle(human_start[2])),
        true_goal=0,
        prior=analysis.probability("prior", constants.PRIOR_UNIFORM),
        branch_step=horizon_steps,
        horizon_steps=horizon_steps,
        sim_steps=analysis.integer("sim_steps", 40, minimum=1),
        accelerations=robot.numbers("accelerations"),
        max_speed=robot.number("max_speed", positive=True),
        delta=analysis.probability("delta", constants.DRIVING_DELTA),
        tracked=config.learner.tracked,
        weights=CostWeights(
            costs.number("collision", defaults.collision),
            costs.number("clearance", defaults.clearance),
            costs.number("progress", defaults.progress),
            costs.number("smoothness", defaults.smoothness),
        ),
        car_radius=robot.number("radius", constants.CAR_RADIUS, positive=True),
        seed=analysis.integer("seed", 0) if seed is None else seed,
    )
    template.validate()
    return DrivingSettings(
        template,
        robot.numbers("speeds"),
        priors,
        analysis.probability("threshold", constants.CONFIDENCE_THRESHOLD),
        analysis.number("heuristic_branch_time", constants.HEURISTIC_BRANCH_TIME, positive=True),
        horizon,
    )


def branch_step_of(branch: BranchTime, dt: float, horizon_steps: int) -> int:
    """
    Whole planning steps of a branching time, capped at the horizon.

    >>> branch_step_of(BranchTime({"g1": 0.5346, "g2": 0.0}, 0.5346), 0.0891, 20)
    6
    """
    return min(horizon_steps, round(branch.t_b / dt))


def run_driving(
    config: ScenarioConfig, system: JointSystem, *, seed: int | None = None, workers: int = 1
) -> DrivingResult:
    """
    Branching time from the two worst-case solves, then the 18-trial batch under the
    safeguard-both, heuristic and max-TTL planners.

    Args:
        config (ScenarioConfig): A driving scenario.
        system (JointSystem): The joint system built from ``config``.
        seed (int | None): Overrides ``analysis.seed``; trial i runs with seed + i.
        workers (int): Threads running the trials.

    Returns:
        DrivingResult with the branching time at the configured prior, every trial and the per-planner summary.

    Raises:
        UnreachableWithinHorizonError: the branching time at the configured prior or at a trial prior
            is Unreachable within the planning horizon.
        InconsistentSpecError: the planning horizon is not a whole number of observation periods.
    """
    settings = driving_settings(config, seed)
    template = settings.template
    dt = system.dt
    n = template.horizon_steps
    if abs(settings.horizon - n * dt) > constants.HORIZON_STEP_TOLERANCE:
        msg = f"planning horizon {settings.horizon} s disagrees with {n} steps of {dt} s"
        raise InconsistentSpecError(msg)

    solutions = [
        reach_solver.solve_backward(q, system)
        for q in queries.branching_queries(
            settings.horizon, dt, template.delta, tracked=template.tracked, threshold=settings.threshold
        )
    ]
    names = [intent.name for intent in system.model.spec.intents]
    z0 = JointState.create(template.human_start, (template.prior,), system.model.spec.kind.heading_dims)
    branch = queries.branch_time_from(solutions, names, z0)
    logger.info("Branching time at the configured prior: %r", branch)

    trials = contingency.trial_configs(template, settings.speeds, settings.priors)
    max_ttl = [
        branch_step_of(queries.branch_time_from(solutions, names, z0.with_estimate(trial.prior)), dt, n)
        for _, trial in trials
    ]
    heuristic = min(n, contingency.heuristic_branch_step(dt, settings.heuristic_branch_time))
    branch_steps = {
        PlannerKind.SAFEGUARD_BOTH: [n] * len(trials),
        PlannerKind.HEURISTIC: [heuristic] * len(trials),
        PlannerKind.MAX_TTL: max_ttl,
    }
    results = contingency.run_contingency_batch(system.model, trials, branch_steps, workers=workers)
    return DrivingResult(branch, results, contingency.batch_summary(results))


def run_scenario(
    config: ScenarioConfig,
    *,
    interpolation: InterpolationMode = InterpolationMode.MULTILINEAR,
    workers: int = 1,
    seed: int | None = None,
    cache: QTableCache | None = None,
    system: JointSystem | None = None,
) -> ScenarioResult:
    """Builds the joint system (unless given) and runs the case study named by ``config.kind``."""
    if system is None:
        system = build_system(config, interpolation=interpolation, workers=workers, cache=cache)
    logger.info("Running scenario %s on %r", config.name, system)
    if config.kind == ScenarioKind.CONFIDENCE:
        return run_confidence(config, system)
    if config.kind == ScenarioKind.LEGIBILITY:
        return run_legibility(config, system)
    if config.kind == ScenarioKind.GRADIENT_INIT:
        return run_gradient_init(config, system)
    return run_driving(config, system, seed=seed, workers=workers)
