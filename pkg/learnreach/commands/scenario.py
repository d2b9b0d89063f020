from __future__ import annotations

import asyncio
import logging
from typing import TYPE_CHECKING, Any, Final

import asyncclick as click

from learnreach import export, reach_solver, scenarios
from learnreach.commands.common import build_system, cli, config_option, finish, metadata, run_config, run_options
from learnreach.config import catalog_names, load_config
from learnreach.models import Command
from learnreach.scenarios import ConfidenceResult, DrivingResult, GradientResult, LegibilityResult

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

    from learnreach.scenarios import ScenarioResult

logger = logging.getLogger(__name__)

_REGION_HEADER: Final[list[str]] = ["region", "states", "mean", "std", "unreachable"]
_CROSSING_HEADER: Final[list[str]] = ["intent", "mode", "crossing_step", "steps", "final_belief"]


async def _write_confidence(result: ConfidenceResult, out: Path, meta: Mapping[str, Any]) -> list[Path]:
    meta = {**meta, "solution": reach_solver.describe(result.solution)}
    regions = [[r.name, r.states, r.mean, r.std, r.unreachable] for r in result.regions]
    return [
        *await export.write_ttl_report(result.report, out, meta),
        *await export.write_heatmap(result.heatmap, out / "ttl_heatmap.ppm"),
        await export.write_csv(out / "ttl_by_region.csv", _REGION_HEADER, regions, meta),
    ]


async def _write_legibility(result: LegibilityResult, out: Path, meta: Mapping[str, Any]) -> list[Path]:
    crossings = []
    for key, trace in sorted(result.traces.items()):
        intent, mode = key.rsplit("-", 1)
        crossings.append([intent, mode, trace.crossing_step, len(trace.actions), trace.beliefs[-1]])
    tasks = [
        export.write_trace(trace, out / "traces" / f"{key}.csv", {**meta, "trace": key})
        for key, trace in sorted(result.traces.items())
    ]
    tasks.append(export.write_csv(out / "legibility_crossings.csv", _CROSSING_HEADER, crossings, meta))
    return list(await asyncio.gather(*tasks))


async def _write_driving(result: DrivingResult, out: Path, meta: Mapping[str, Any]) -> list[Path]:
    branch = [[name, ttl] for name, ttl in result.branch.ttls.items()]
    branch.append(["t_b", result.branch.t_b])
    return [
        await export.write_csv(out / "branch_time.csv", ["intent", "ttl"], branch, meta),
        *await export.write_contingency(result.trials, result.summary, out, meta),
    ]


async def write_result(result: ScenarioResult, out: Path, meta: Mapping[str, Any]) -> list[Path]:
    if isinstance(result, ConfidenceResult):
        return await _write_confidence(result, out, meta)
    if isinstance(result, LegibilityResult):
        return await _write_legibility(result, out, meta)
    if isinstance(result, GradientResult):
        return await export.write_reachability(result.heatmap, out, {**meta, "start": list(result.start)})
    return await _write_driving(result, out, meta)


def _echo_summary(result: ScenarioResult) -> None:
    if isinstance(result, ConfidenceResult):
        for region in result.regions:
            click.echo(f"{region.name}: mean TTL {region.mean} s over {region.states} states")
    elif isinstance(result, LegibilityResult):
        for key, trace in sorted(result.traces.items()):
            click.echo(f"{key}: crossing step {trace.crossing_step}")
    elif isinstance(result, GradientResult):
        for w0 in result.heatmap.initial_weights:
            click.echo(f"w0={w0:.3f}: {result.heatmap.reachable_count(w0)} reachable estimate nodes")
    else:
        click.echo(repr(result.branch))
        for row in result.summary:
            click.echo(
                f"{row.planner:>14} {row.prior_kind:>9}: efficiency {row.efficiency_mean:.3f}"
                f" safety {row.safety_mean:.3f} (min {row.safety_min:.3f})"
            )


@cli.command("scenario")
@click.option("-n", "--name", default=None, help=f"Bundled scenario: {', '.join(catalog_names())}.")
@config_option
@run_options
async def scenario(name: str | None, **options: Any) -> None:  # noqa: ANN401
    """Runs a bundled case study, optionally overridden by a partial config."""
    if name is None and options["config_path"] is None:
        msg = "Give a scenario --name, a --config, or both."
        raise click.UsageError(msg)
    config = load_config(options["config_path"], base=name)
    run = run_config(Command.SCENARIO, options, config)
    system = build_system(config, run)
    result = scenarios.run_scenario(
        config, interpolation=run.interpolation, workers=run.threads, seed=run.seed, system=system
    )
    artifacts = await write_result(result, run.out, metadata(config, run))
    _echo_summary(result)
    await finish(config, run, artifacts)
