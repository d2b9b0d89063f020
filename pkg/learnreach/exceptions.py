from __future__ import annotations


class LearnReachError(Exception):
    """Base class for every error raised by learnreach."""


class OutOfBoundsError(LearnReachError, ValueError):
    """A state lies outside the grid by more than half a cell."""


class MapParseError(LearnReachError, ValueError):
    """An occupancy map file is ragged or contains characters other than 0/1."""


class UnreachableGoalError(LearnReachError):
    """The goal of an intent sits in an occupied cell."""


class InconsistentSpecError(LearnReachError):
    """The query and the joint system disagree (e.g. on the observation period)."""


class StaleSolutionError(LearnReachError):
    """Policy extraction was requested from a solution that did not retain its value slices."""


class NoSafePlanError(LearnReachError):
    """Every candidate robot plan enters an occupied cell."""


class UnreachableWithinHorizonError(LearnReachError):
    """At least one branching TTL is Unreachable within the analyzed horizon."""

    def __init__(self, msg: str, ttls: dict[str, float | None]) -> None:
        super().__init__(msg)
        self.ttls = ttls


class ConfigError(LearnReachError, ValueError):
    """A configuration value is missing or invalid. ``field`` is the dotted path to it."""

    def __init__(self, field: str, reason: str) -> None:
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
