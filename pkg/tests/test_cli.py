from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from learnreach import constants
from learnreach.commands import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main

SMALL_CONFIDENCE = {
    "base": "confidence",
    "grid": {"estimate_cells": 6},
    "analysis": {"states": {"lower": [2.0, 2.0], "upper": [10.0, 10.0], "count": [3, 3]}},
}
SMALL_GRADIENT = {
    "base": "gradient-init",
    "grid": {"cells": [31, 31], "estimate_cells": 21},
    "learner": {"weight_nodes": 5},
}


@pytest.fixture(autouse=True)
def _cache(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    cache = tmp_path / "cache"
    monkeypatch.setenv(constants.CACHE_ENV_VAR, str(cache))
    return cache


def _config(tmp_path: Path, data: dict[str, Any], name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _metadata(path: Path) -> dict[str, Any]:
    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith(constants.CSV_METADATA_PREFIX)
    return json.loads(first[len(constants.CSV_METADATA_PREFIX) :])


def test_missing_config_file(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "absent.json"
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert str(path) in capsys.readouterr().err


def test_invalid_field_is_named(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = _config(tmp_path, {"base": "confidence", "human": {"speed": 0}})
    assert main(["ttl", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_USAGE
    assert "human.speed" in capsys.readouterr().err


def test_unknown_command() -> None:
    assert main(["fly"]) == EXIT_USAGE


def test_scenario_needs_a_name_or_config(tmp_path: Path) -> None:
    assert main(["scenario", "--out", str(tmp_path)]) == EXIT_USAGE


def test_solver_error_exits_one(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = _config(tmp_path, SMALL_CONFIDENCE)
    argv = ["ttl", "--config", str(path), "--out", str(tmp_path / "out"), "--state", "100,100", "--prior", "0.5"]
    assert main(argv) == EXIT_FAILURE
    assert "OutOfBoundsError" in capsys.readouterr().err


def test_scenario_writes_the_ttl_artifacts(tmp_path: Path, _cache: Path) -> None:
    out = tmp_path / "out"
    path = _config(tmp_path, SMALL_CONFIDENCE)
    assert main(["scenario", "--config", str(path), "--out", str(out), "--interpolation", "nearest"]) == EXIT_OK
    for name in ("ttl_by_prior.csv", "ttl_by_state.csv", "ttl_by_region.csv", "ttl_heatmap.ppm"):
        assert (out / name).is_file()
    assert (out / "ttl_heatmap.scale.json").is_file()

    metadata = _metadata(out / "ttl_by_prior.csv")
    assert metadata["config"]["grid"]["estimate_cells"] == 6
    assert metadata["config"]["human"]["dt"] == 0.4545
    assert metadata["run"]["interpolation"] == "nearest"
    assert "threads" not in metadata["run"]

    manifest = json.loads((out / constants.MANIFEST_FILE).read_text(encoding="utf-8"))
    assert "ttl_by_state.csv" in manifest["artifacts"]
    assert list(_cache.glob("q-*.npz"))


def test_ttl_csvs_are_identical_across_thread_counts(tmp_path: Path) -> None:
    path = _config(tmp_path, SMALL_CONFIDENCE)
    for threads in ("1", "3"):
        argv = ["ttl", "--config", str(path), "--out", str(tmp_path / threads), "--threads", threads]
        assert main(argv) == EXIT_OK
    for name in ("ttl_by_prior.csv", "ttl_by_state.csv"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()


def test_reach_writes_arrival_and_heatmap(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out = tmp_path / "out"
    path = _config(tmp_path, SMALL_GRADIENT)
    argv = ["reach", "--config", str(path), "--out", str(out), "-w", "0.25", "-w", "0.9", "--horizon", "2.469"]
    assert main(argv) == EXIT_OK
    rows = (out / "reach_arrival.csv").read_text(encoding="utf-8").splitlines()
    assert rows[1] == "w0,w_star,arrival"
    assert len(rows) == 2 + 2 * 21
    assert (out / "reach_heatmap.ppm").read_text(encoding="utf-8").startswith("P3\n21 2\n")
    assert _metadata(out / "reach_arrival.csv")["overrides"] == {"initial_weights": [0.25, 0.9], "horizon": 2.469}
    assert "w0=0.250" in capsys.readouterr().out


def test_policy_writes_a_rollout(tmp_path: Path) -> None:
    out = tmp_path / "out"
    path = _config(tmp_path, {"base": "legibility", "grid": {"estimate_cells": 6}})
    argv = ["policy", "--config", str(path), "--out", str(out), "--interpolation", "nearest", "--steps", "3"]
    assert main(argv) == EXIT_OK
    rows = (out / "policy.csv").read_text(encoding="utf-8").splitlines()
    assert rows[1] == "step,z0,z1,z2,action"
    assert 3 <= len(rows) <= 6
    assert "crossing_step" in _metadata(out / "policy.csv")


def test_solve_writes_arrival_and_values(tmp_path: Path) -> None:
    out = tmp_path / "out"
    path = _config(tmp_path, SMALL_CONFIDENCE)
    argv = ["solve", "--config", str(path), "--out", str(out), "--interpolation", "nearest", "--retain-slices"]
    assert main(argv) == EXIT_OK
    header = (out / "values.csv").read_text(encoding="utf-8").splitlines()[1].split(",")
    assert header == ["node", *(f"v{k}" for k in range(11))]
    assert _metadata(out / "arrival.csv")["solution"]["steps"] == 10
