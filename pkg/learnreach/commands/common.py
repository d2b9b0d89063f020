"""The ``learnreach`` command group and the plumbing its commands share."""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, Final, TypeVar

import asyncclick as click

from learnreach import __version__, export, scenarios
from learnreach.config import RunConfig
from learnreach.human_models import QTableCache
from learnreach.models import InterpolationMode

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    from learnreach.config import ScenarioConfig
    from learnreach.models import Command
    from learnreach.reach_solver import JointSystem

logger = logging.getLogger(__name__)

_LOG_FMT: Final[str] = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_INTERPOLATION: Final[list[str]] = [m.value for m in InterpolationMode]

F = TypeVar("F", bound="Callable[..., Any]")


def package_version() -> str:
    return __version__ or "0+unknown"


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log solver progress at debug level.")
@click.option("-q", "--quiet", is_flag=True, help="Only log warnings and errors.")
def cli(verbose: bool, quiet: bool) -> None:  # noqa: FBT001
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=_LOG_FMT, stream=sys.stderr, force=True)


def _get_interpolation(ctx: click.Context, param: click.Option, value: str) -> InterpolationMode:
    return InterpolationMode(value)


def parse_floats(ctx: click.Context, param: click.Option, value: str | None) -> tuple[float, ...] | None:
    """``"x,y[,heading]"`` option values."""
    if value is None:
        return None
    try:
        return tuple(float(v) for v in value.split(","))
    except ValueError:
        msg = f"expected comma-separated numbers, got {value!r}"
        raise click.BadParameter(msg, ctx=ctx, param=param) from None


def run_options(func: F) -> F:
    """``--out``, ``--threads``, ``--retain-slices``, ``--interpolation`` and ``--seed``."""
    options = [
        click.option(
            "-o",
            "--out",
            type=click.Path(file_okay=False, path_type=Path),
            default=Path("out"),
            show_default=True,
            help="Directory that receives the artifacts.",
        ),
        click.option(
            "--threads",
            type=click.IntRange(min=1),
            default=os.cpu_count() or 1,
            help="Solver worker threads; 1 gives the sequential reference run.",
        ),
        click.option("--retain-slices", is_flag=True, help="Keep every value slice of backward solves."),
        click.option(
            "--interpolation",
            type=click.Choice(_INTERPOLATION, case_sensitive=False),
            default=InterpolationMode.MULTILINEAR.value,
            show_default=True,
            callback=_get_interpolation,
        ),
        click.option("--seed", type=int, default=None, help="Overrides the scenario seed."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


config_option = click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="JSON scenario config (full, or a partial override with a \"base\" scenario).",
)


def run_config(command: Command, options: Mapping[str, Any], config: ScenarioConfig | None = None) -> RunConfig:
    run = RunConfig(
        command,
        options["out"],
        options.get("config_path"),
        None if config is None else config.name,
        options["retain_slices"],
        options["threads"],
        options["interpolation"],
        options["seed"],
    )
    logger.debug("%r with %d threads", run, run.threads)
    return run


def build_system(config: ScenarioConfig, run: RunConfig) -> JointSystem:
    return scenarios.build_system(
        config, interpolation=run.interpolation, workers=run.threads, cache=QTableCache.from_env()
    )


def metadata(config: ScenarioConfig, run: RunConfig, **extra: Any) -> dict[str, Any]:  # noqa: ANN401
    """The CSV metadata echo: resolved config, run options and any result description."""
    return {"config": config.to_dict(), "run": run.to_dict(), **extra}


async def finish(config: ScenarioConfig, run: RunConfig, artifacts: Sequence[Path]) -> None:
    manifest = await export.write_manifest(run.out, metadata(config, run), artifacts, package_version())
    click.echo(f"Wrote {len(artifacts)} artifacts and {manifest}")
