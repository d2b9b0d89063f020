from __future__ import annotations

import inspect
from typing import TYPE_CHECKING

import pytest

from learnreach import contingency, export, learner_dynamics, queries, scenarios

if TYPE_CHECKING:
    from collections.abc import Callable

ENTRY_POINTS: list[Callable[..., object]] = [
    queries.ttl_report,
    queries.ttl_sweep,
    queries.branch_time_from,
    queries.branching_time,
    queries.synthesize_behavior,
    queries.reachable_weights,
    scenarios.run_driving,
    contingency.choose_plan,
    learner_dynamics.batch_posterior,
    export.write_ttl_report,
    export.write_contingency,
]


@pytest.mark.parametrize("function", ENTRY_POINTS, ids=lambda f: f.__qualname__)
def test_entry_points_document_every_argument(function: Callable[..., object]) -> None:
    doc = inspect.getdoc(function) or ""
    assert "Args:" in doc
    assert "Returns:" in doc
    args = doc.split("Args:", 1)[1].split("Returns:", 1)[0]
    documented = {line.split()[0] for line in args.splitlines() if line.startswith("    ") and line[4:5].strip()}
    assert set(inspect.signature(function).parameters) <= documented
