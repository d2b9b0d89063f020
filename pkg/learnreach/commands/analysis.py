from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any

import asyncclick as click

from learnreach import constants, export, queries, reach_solver, scenarios
from learnreach.commands.common import (
    build_system,
    cli,
    config_option,
    finish,
    metadata,
    parse_floats,
    run_config,
    run_options,
)
from learnreach.config import Section, load_config
from learnreach.models import Command, JointState

if TYPE_CHECKING:
    from collections.abc import Mapping

    from learnreach.config import RunConfig, ScenarioConfig

logger = logging.getLogger(__name__)


def _load(command: Command, options: Mapping[str, Any]) -> tuple[ScenarioConfig, RunConfig]:
    path = options["config_path"]
    if path is None:
        msg = "Missing option '--config'."
        raise click.UsageError(msg)
    config = load_config(path)
    return config, run_config(command, options, config)


def _parse_points(ctx: click.Context, param: click.Option, value: tuple[str, ...]) -> list[tuple[float, ...]] | None:
    points = [parse_floats(ctx, param, v) for v in value]
    return [p for p in points if p is not None] or None


def _start(config: ScenarioConfig, start: tuple[float, ...] | None) -> tuple[float, ...]:
    if start is not None:
        return start
    return Section(config.analysis, "analysis").numbers("start", length=config.human.physical_dims)


@cli.command("solve")
@config_option
@run_options
async def solve(**options: Any) -> None:  # noqa: ANN401
    """Backward solve of the config's query; writes the arrival map and the value field."""
    config, run = _load(Command.SOLVE, options)
    query = scenarios.require_query(config)
    system = build_system(config, run)
    solution = reach_solver.solve_backward(query, system, retain_slices=run.retain_slices)
    meta = metadata(config, run, solution=reach_solver.describe(solution))
    artifacts = [
        await export.write_arrival(solution, run.out / "arrival.csv", meta),
        await export.write_values(solution, run.out / "values.csv", meta),
    ]
    click.echo(repr(solution))
    await finish(config, run, artifacts)


@cli.command("ttl")
@config_option
@click.option(
    "-s",
    "--state",
    "states",
    multiple=True,
    callback=_parse_points,
    help="Initial physical state x,y[,heading]; defaults to the analysis.states lattice.",
)
@click.option(
    "-p",
    "--prior",
    "priors",
    type=click.FloatRange(0.0, 1.0),
    multiple=True,
    help="Initial estimate; defaults to analysis.priors.",
)
@run_options
async def ttl(
    states: list[tuple[float, ...]] | None,
    priors: tuple[float, ...],
    **options: Any,  # noqa: ANN401
) -> None:
    """TTL of every (state, prior) pair from one backward solve."""
    config, run = _load(Command.TTL, options)
    query = scenarios.require_query(config)
    system = build_system(config, run)
    analysis = Section(config.analysis, "analysis")
    if states is None:
        xs, ys = scenarios.lattice_axes(analysis.section("states"))
        states = scenarios.lattice_states(system.physical_grid, xs, ys)
    prior_values = list(priors) or list(analysis.numbers("priors"))

    report, solution = queries.ttl_sweep(query, system, states, prior_values)
    meta = metadata(config, run, solution=reach_solver.describe(solution))
    artifacts = [
        *await export.write_ttl_report(report, run.out, meta),
        *await export.write_heatmap(report.matrix(), run.out / "ttl_heatmap.ppm"),
    ]
    for row in report.by_prior():
        click.echo(f"prior={row.prior:.3f} mean={row.mean} std={row.std} unreachable={row.unreachable}")
    await finish(config, run, artifacts)


@cli.command("policy")
@config_option
@click.option(
    "--start", callback=parse_floats, help="Initial physical state x,y[,heading]; defaults to analysis.start."
)
@click.option(
    "--prior",
    type=click.FloatRange(0.0, 1.0),
    default=None,
    help="Initial belief or weight; defaults to analysis.prior.",
)
@click.option("--steps", type=click.IntRange(min=1), default=None, help="Rollout length; defaults to the horizon.")
@run_options
async def policy(
    start: tuple[float, ...] | None,
    prior: float | None,
    steps: int | None,
    **options: Any,  # noqa: ANN401
) -> None:
    """Optimal human data from one initial state, following the retained value slices."""
    config, run = _load(Command.POLICY, options)
    query = scenarios.require_query(config)
    system = build_system(config, run)
    if prior is None:
        prior = Section(config.analysis, "analysis").probability("prior", constants.PRIOR_UNIFORM)
    z0 = JointState.create(_start(config, start), (prior,), config.human.kind.heading_dims)

    # rollouts always need the slices, whatever --retain-slices says
    solution = reach_solver.solve_backward(query, system, retain_slices=True)
    rollout = reach_solver.extract_policy_rollout(solution, z0, steps or solution.steps)
    meta = metadata(config, run, solution=reach_solver.describe(solution), start=repr(z0))
    artifacts = [await export.write_rollout(rollout, run.out / "policy.csv", meta)]
    click.echo(f"{z0!r}: {len(rollout.actions)} steps, crossing step {rollout.crossing_step}")
    await finish(config, run, artifacts)


@cli.command("reach")
@config_option
@click.option("--start", callback=parse_floats, help="Physical state x,y[,heading]; defaults to analysis.start.")
@click.option(
    "-w",
    "--weight",
    "weights",
    type=click.FloatRange(0.0, 1.0),
    multiple=True,
    help="Initial estimate w0; defaults to analysis.initial_weights.",
)
@click.option("--horizon", type=click.FloatRange(min=0.0, min_open=True), default=None, help="Seconds.")
@run_options
async def reach(
    start: tuple[float, ...] | None,
    weights: tuple[float, ...],
    horizon: float | None,
    **options: Any,  # noqa: ANN401
) -> None:
    """Earliest arrival at every estimate node from each initial w0 (forward reachability)."""
    config, run = _load(Command.REACH, options)
    overrides: dict[str, Any] = {}
    if start is not None:
        overrides["start"] = list(start)
    if weights:
        overrides["initial_weights"] = list(weights)
    if horizon is not None:
        overrides["horizon"] = horizon
    elif "horizon" not in config.analysis and config.query is not None:
        overrides["horizon"] = config.query.horizon
    config = config._replace(analysis={**config.analysis, **overrides})

    system = build_system(config, run)
    result = scenarios.run_gradient_init(config, system)
    meta = metadata(config, run, overrides=overrides, start=list(result.start))
    artifacts = await export.write_reachability(result.heatmap, run.out, meta)
    for w0 in result.heatmap.initial_weights:
        click.echo(f"w0={w0:.3f}: {result.heatmap.reachable_count(w0)} reachable estimate nodes")
    await finish(config, run, artifacts)
