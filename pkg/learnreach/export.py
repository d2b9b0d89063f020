"""CSV, heatmap and manifest artifacts."""

from __future__ import annotations

import asyncio
import csv
import datetime
import io
import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import aiofiles
import numpy as np
import pytz

from learnreach import constants, utils

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping

    from numpy.typing import ArrayLike, NDArray

    from learnreach.contingency import SimResult, SummaryRow, Trial
    from learnreach.models import BehaviorTrace, ReachabilityHeatmap, Rollout, TTLReport
    from learnreach.reach_solver import ForwardSolution, ValueSolution

logger = logging.getLogger(__name__)

Row = Sequence[Any]


def metadata_line(metadata: Mapping[str, Any]) -> str:
    """
    The JSON comment line that opens every CSV.

    >>> metadata_line({"b": 1, "a": [0.5]})
    '# {"a": [0.5], "b": 1}'
    """
    return constants.CSV_METADATA_PREFIX + json.dumps(metadata, sort_keys=True, default=utils.jsonable)


def _cell(value: Any) -> str:  # noqa: ANN401
    if value is None or isinstance(value, float):
        return utils.format_float(value)
    if isinstance(value, np.floating):
        return utils.format_float(float(value))
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Row], metadata: Mapping[str, Any]) -> str:
    """
    >>> print(csv_text(["x", "ttl"], [[1, 0.5], [2, None]], {"mode": "best"}), end="")
    # {"mode": "best"}
    x,ttl
    1,0.5
    2,inf
    """
    buffer = io.StringIO()
    buffer.write(metadata_line(metadata) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([_cell(v) for v in row] for row in rows)
    return buffer.getvalue()


async def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, mode="w", encoding="utf-8", newline="") as f:
        await f.write(text)
    logger.info("Wrote %s", path)
    return path


async def write_csv(path: Path, header: Sequence[str], rows: Iterable[Row], metadata: Mapping[str, Any]) -> Path:
    return await write_text(path, csv_text(header, rows, metadata))


def heatmap_colors(matrix: ArrayLike) -> tuple[NDArray[np.uint8], dict[str, Any]]:
    """
    RGB pixels on a linear blue-to-red ramp over the finite range; non-finite entries are black.
    A constant finite matrix maps to the middle of the ramp.

    >>> pixels, scale = heatmap_colors([[0.0, 2.0], [2.0, 0.0]])
    >>> pixels[0].tolist(), scale["min"], scale["max"]
    ([[0, 0, 255], [255, 0, 0]], 0.0, 2.0)
    """
    values = np.atleast_2d(np.asarray(matrix, dtype=float))
    finite = np.isfinite(values)
    pixels = np.zeros((*values.shape, 3), dtype=np.uint8)
    if not finite.any():
        return pixels, {"min": None, "max": None, "empty": True}
    lo, hi = float(values[finite].min()), float(values[finite].max())
    t = np.full(values.shape, 0.5) if hi == lo else (np.where(finite, values, lo) - lo) / (hi - lo)
    red = np.rint(255.0 * t).astype(np.uint8)
    blue = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    pixels[..., 0] = np.where(finite, red, 0)
    pixels[..., 2] = np.where(finite, blue, 0)
    return pixels, {"min": lo, "max": hi, "empty": False}


def ppm_text(pixels: NDArray[np.uint8]) -> str:
    """
    Plain (P3) portable pixmap.

    >>> print(ppm_text(np.zeros((1, 2, 3), dtype=np.uint8)), end="")
    P3
    2 1
    255
    0 0 0 0 0 0
    """
    height, width, _ = pixels.shape
    lines = ["P3", f"{width} {height}", "255"]
    lines.extend(" ".join(str(int(v)) for v in row.ravel()) for row in pixels)
    return "\n".join(lines) + "\n"


def scale_path(path: Path) -> Path:
    """
    >>> scale_path(Path("out/ttl_heatmap.ppm")).as_posix()
    'out/ttl_heatmap.scale.json'
    """
    return path.with_suffix(".scale.json")


async def write_heatmap(matrix: ArrayLike, path: str | Path) -> list[Path]:
    """Writes the P3 image and its ``.scale.json`` with the finite min and max."""
    path = Path(path)
    pixels, scale = heatmap_colors(matrix)
    return list(
        await asyncio.gather(
            write_text(path, ppm_text(pixels)),
            write_text(scale_path(path), json.dumps(scale, indent=4, sort_keys=True) + "\n"),
        )
    )


async def write_manifest(directory: Path, config: Mapping[str, Any], artifacts: Sequence[Path], version: str) -> Path:
    """``manifest.json``: resolved config, artifact list, package version and a UTC timestamp."""
    manifest = {
        "config": config,
        "artifacts": sorted(p.name for p in artifacts),
        "version": version,
        "created": datetime.datetime.now(tz=pytz.UTC).strftime(constants.TIMESTAMP_FMT),
    }
    return await write_text(directory / constants.MANIFEST_FILE, json.dumps(manifest, indent=4, sort_keys=True))


# Tables for each result type


async def write_arrival(solution: ValueSolution | ForwardSolution, path: Path, metadata: Mapping[str, Any]) -> Path:
    """One row per joint node: flat index, coordinates, arrival seconds (inf if never)."""
    grid = solution.grid
    nodes = grid.nodes()
    seconds = solution.arrival_seconds()
    header = ["node", *(f"z{d}" for d in range(grid.ndim)), "arrival"]
    rows = ([i, *(float(v) for v in nodes[i]), float(seconds[i])] for i in range(grid.node_count))
    return await write_csv(path, header, rows, metadata)


async def write_values(solution: ValueSolution, path: Path, metadata: Mapping[str, Any]) -> Path:
    """The value with every retained number of steps to go (only the final value otherwise), one row per node."""
    stack = solution.slice_stack() if solution.retained else solution.final.values[np.newaxis]
    labels = [f"v{k}" for k in range(stack.shape[0])] if solution.retained else [f"v{solution.steps}"]
    rows = ([i, *(float(v) for v in stack[:, i])] for i in range(stack.shape[1]))
    return await write_csv(path, ["node", *labels], rows, metadata)


def ttl_by_prior_rows(report: TTLReport) -> list[Row]:
    return [[s.prior, s.mean, s.std, s.unreachable] for s in report.by_prior()]


def ttl_by_state_rows(report: TTLReport) -> list[Row]:
    return [[*e.physical, e.prior, e.ttl] for e in report.entries]


async def write_ttl_report(report: TTLReport, directory: Path, metadata: Mapping[str, Any]) -> list[Path]:
    """
    Writes ``ttl_by_prior.csv`` and ``ttl_by_state.csv``.

    Args:
        report (TTLReport): The sweep to write.
        directory (Path): Output directory.
        metadata (Mapping[str, Any]): Resolved config and run options for the CSV header line.

    Returns:
        list[Path] of the two CSVs.
    """
    dims = len(report.entries[0].physical) if report.entries else 0
    return list(
        await asyncio.gather(
            write_csv(
                directory / "ttl_by_prior.csv",
                ["prior", "mean", "std", "unreachable"],
                ttl_by_prior_rows(report),
                metadata,
            ),
            write_csv(
                directory / "ttl_by_state.csv",
                [*(f"x{d}" for d in range(dims)), "prior", "ttl"],
                ttl_by_state_rows(report),
                metadata,
            ),
        )
    )


async def write_trace(trace: BehaviorTrace, path: Path, metadata: Mapping[str, Any]) -> Path:
    dims = len(trace.physical[0]) if trace.physical else 0
    header = ["step", *(f"x{d}" for d in range(dims)), "belief", "action"]
    rows = [
        [k, *state, belief, trace.actions[k] if k < len(trace.actions) else ""]
        for k, (state, belief) in enumerate(zip(trace.physical, trace.beliefs))
    ]
    return await write_csv(path, header, rows, metadata)


async def write_rollout(rollout: Rollout, path: Path, metadata: Mapping[str, Any]) -> Path:
    dims = rollout.states[0].size if rollout.states else 0
    header = ["step", *(f"z{d}" for d in range(dims)), "action"]
    rows = [
        [k, *(float(v) for v in state), rollout.actions[k] if k < len(rollout.actions) else ""]
        for k, state in enumerate(rollout.states)
    ]
    return await write_csv(path, header, rows, {**metadata, "crossing_step": rollout.crossing_step})


async def write_reachability(heatmap: ReachabilityHeatmap, directory: Path, metadata: Mapping[str, Any]) -> list[Path]:
    rows = [
        [w0, w_star, float(heatmap.arrival[i, j])]
        for i, w0 in enumerate(heatmap.initial_weights)
        for j, w_star in enumerate(heatmap.target_weights)
    ]
    csv_path, images = await asyncio.gather(
        write_csv(directory / "reach_arrival.csv", ["w0", "w_star", "arrival"], rows, metadata),
        write_heatmap(heatmap.arrival, directory / "reach_heatmap.ppm"),
    )
    return [csv_path, *images]


async def write_sim_trace(result: SimResult, path: Path, metadata: Mapping[str, Any]) -> Path:
    header = ["step", "robot_x", "robot_y", "robot_heading", "speed", "human_x", "human_y", "human_heading"]
    header += ["belief", "plan", "human_action"]
    rows = [[s.step, *s.robot, s.speed, *s.human, s.belief, s.plan, s.action] for s in result.trace]
    return await write_csv(path, header, rows, {**metadata, "trial": result.config.to_dict()})


async def write_contingency(
    trials: Sequence[Trial], summary: Sequence[SummaryRow], directory: Path, metadata: Mapping[str, Any]
) -> list[Path]:
    """
    Per-trial traces, the trial table and the per-planner summary.

    Args:
        trials (Sequence[Trial]): Every trial of the batch, planner-major.
        summary (Sequence[SummaryRow]): One row per (planner, prior kind).
        directory (Path): Output directory; traces go to ``traces/`` under it.
        metadata (Mapping[str, Any]): Resolved config and run options for the CSV header line.

    Returns:
        list[Path] of the written files, tables first.
    """
    trial_rows = [list(t.to_dict().values()) for t in trials]
    header = list(trials[0].to_dict()) if trials else []
    summary_header = list(summary[0]._fields) if summary else []
    per_planner = _per_planner(trials)
    tasks = [
        write_csv(directory / "contingency_trials.csv", header, trial_rows, metadata),
        write_csv(directory / "contingency_summary.csv", summary_header, summary, metadata),
    ]
    tasks.extend(
        write_sim_trace(t.result, directory / "traces" / f"{t.planner.value}_{i % per_planner:02d}.csv", metadata)
        for i, t in enumerate(trials)
    )
    return list(await asyncio.gather(*tasks))


def _per_planner(trials: Sequence[Trial]) -> int:
    planners = {t.planner for t in trials}
    return max(1, len(trials) // max(1, len(planners)))
