from __future__ import annotations

import math
from enum import Enum, EnumMeta, unique
from typing import TYPE_CHECKING, Any, NamedTuple, cast

import numpy as np

from learnreach import constants, utils
from learnreach.exceptions import InconsistentSpecError, OutOfBoundsError

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import NDArray


class _CaseInsensitiveEnumMeta(EnumMeta):
    def __call__(cls, value: str, *args: list[Any], **kwargs: Any) -> type[Enum]:  # noqa: ANN401
        try:
            return super().__call__(value, *args, **kwargs)
        except ValueError:
            items = cast("Iterable[Enum]", cls)
            for item in items:
                if item.name.casefold() == str(value).casefold() or str(item.value).casefold() == str(value).casefold():
                    return cast("type[Enum]", item)
            raise


@unique
class Strategy(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    """How the human picks data: cooperatively (min) or adversarially (max)."""

    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"

    def __repr__(self) -> str:
        return self.name

    @property
    def is_best_case(self) -> bool:
        return self == Strategy.MINIMIZE

    @property
    def mode(self) -> str:
        """
        Report mode label.

        >>> Strategy.MINIMIZE.mode
        'best'
        >>> Strategy("Maximize").mode
        'worst'
        """
        return "best" if self.is_best_case else "worst"

    @property
    def blocked_value(self) -> float:
        """The value an inadmissible action contributes so that it never wins the optimization."""
        return math.inf if self.is_best_case else -math.inf

    def optimize(self, values: NDArray[np.float64], axis: int) -> NDArray[np.float64]:
        return np.min(values, axis=axis) if self.is_best_case else np.max(values, axis=axis)


@unique
class InterpolationMode(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    MULTILINEAR = "multilinear"
    NEAREST = "nearest"

    def __repr__(self) -> str:
        return self.name


@unique
class HumanKind(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    DUBINS3D = "dubins3d"
    PEDESTRIAN2D = "pedestrian2d"

    def __repr__(self) -> str:
        return self.name

    @property
    def physical_dims(self) -> int:
        return 3 if self == HumanKind.DUBINS3D else 2

    @property
    def heading_dims(self) -> tuple[int, ...]:
        """Indices of the periodic heading coordinates in the physical state."""
        return (2,) if self == HumanKind.DUBINS3D else ()


@unique
class LearnerKind(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    BAYES = "bayes"
    GRADIENT = "gradient"

    def __repr__(self) -> str:
        return self.name


@unique
class TargetKind(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    BELIEF_AT_LEAST = "belief_at_least"
    BELIEF_AT_MOST = "belief_at_most"
    ESTIMATE_NEAR = "estimate_near"
    INITIAL_SET = "initial_set"

    def __repr__(self) -> str:
        return self.name


@unique
class BehaviorMode(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    LEGIBLE = "legible"
    DECEPTIVE = "deceptive"

    def __repr__(self) -> str:
        return self.name

    @property
    def strategy(self) -> Strategy:
        return Strategy.MINIMIZE if self == BehaviorMode.LEGIBLE else Strategy.MAXIMIZE


@unique
class ScenarioKind(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    """Which case study a scenario config runs."""

    DRIVING = "driving"
    CONFIDENCE = "confidence"
    LEGIBILITY = "legibility"
    GRADIENT_INIT = "gradient-init"

    def __repr__(self) -> str:
        return self.name


@unique
class PlannerKind(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    """How the contingency planner picks its branching time."""

    SAFEGUARD_BOTH = "safeguard-both"
    HEURISTIC = "heuristic"
    MAX_TTL = "max-ttl"

    def __repr__(self) -> str:
        return self.name


@unique
class Command(str, Enum, metaclass=_CaseInsensitiveEnumMeta):
    SOLVE = "solve"
    TTL = "ttl"
    POLICY = "policy"
    REACH = "reach"
    SCENARIO = "scenario"

    def __repr__(self) -> str:
        return self.name


class JointState(NamedTuple):
    physical: tuple[float, ...]
    """Human physical state (meters; heading in radians where present)."""
    estimate: tuple[float, ...]
    """Learner estimate (a belief probability or a reward weight)."""

    def __repr__(self) -> str:
        values = ", ".join(f"{v:.4g}" for v in (*self.physical, *self.estimate))
        return f"z=[{values}]"

    @property
    def dim(self) -> int:
        return len(self.physical) + len(self.estimate)

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray((*self.physical, *self.estimate), dtype=float)

    def with_estimate(self, *estimate: float) -> JointState:
        return JointState(self.physical, tuple(float(e) for e in estimate))

    @classmethod
    def create(
        cls, physical: Sequence[float], estimate: Sequence[float], heading_dims: Sequence[int] = ()
    ) -> JointState:
        """
        Builds a JointState, wrapping heading coordinates and checking estimate bounds.

        >>> JointState.create((0.0, 0.0, -3.2), (0.5,), heading_dims=(2,)).physical[2] > 3.0
        True
        >>> JointState.create((0.0, 0.0), (1.2,))
        Traceback (most recent call last):
        ...
        learnreach.exceptions.OutOfBoundsError: estimate 1.2 outside [0, 1]
        """
        phys = [float(p) for p in physical]
        for dim in heading_dims:
            phys[dim] = utils.wrap_angle(phys[dim])
        est = tuple(float(e) for e in estimate)
        for e in est:
            if not 0.0 <= e <= 1.0:
                msg = f"estimate {e} outside [0, 1]"
                raise OutOfBoundsError(msg)
        return cls(tuple(phys), est)

    @classmethod
    def from_array(cls, values: Sequence[float] | NDArray[np.float64], physical_dims: int) -> JointState:
        flat = [float(v) for v in values]
        return cls(tuple(flat[:physical_dims]), tuple(flat[physical_dims:]))

    def to_dict(self) -> dict[str, Any]:
        return {"physical": list(self.physical), "estimate": list(self.estimate)}


class Intent(NamedTuple):
    """One hypothesis theta of the human model."""

    name: str
    goal: tuple[float, float] | None = None
    """Goal position (meters) driving the distance-to-goal feature."""
    beta: float = constants.DEFAULT_BETA
    """Rationality coefficient of the noisily-rational likelihood."""
    weight: float = 0.0
    """Obstacle weight w of theta = [1 - w, w]."""

    def __repr__(self) -> str:
        return self.name

    @property
    def reward_weights(self) -> tuple[float, float]:
        return (1.0 - self.weight, self.weight)

    def to_dict(self) -> dict[str, Any]:
        goal = list(self.goal) if self.goal else None
        return {"name": self.name, "goal": goal, "beta": self.beta, "weight": self.weight}


class TargetSpec(NamedTuple):
    kind: TargetKind
    threshold: float = constants.CONFIDENCE_THRESHOLD
    """epsilon_conf for belief targets, theta* for estimate_near."""
    epsilon: float = 0.0
    """Radius for estimate_near."""
    initial: JointState | None = None
    """z0 for initial_set targets."""

    def __repr__(self) -> str:
        if self.kind == TargetKind.INITIAL_SET:
            return f"{self.kind!r}({self.initial!r})"
        return f"{self.kind!r}({self.threshold:g}, {self.epsilon:g})"

    @classmethod
    def belief_at_least(cls, threshold: float = constants.CONFIDENCE_THRESHOLD) -> TargetSpec:
        return cls(TargetKind.BELIEF_AT_LEAST, threshold)

    @classmethod
    def belief_at_most(cls, threshold: float) -> TargetSpec:
        return cls(TargetKind.BELIEF_AT_MOST, threshold)

    @classmethod
    def estimate_near(cls, target: float, epsilon: float) -> TargetSpec:
        return cls(TargetKind.ESTIMATE_NEAR, target, epsilon)

    @classmethod
    def initial_set(cls, initial: JointState) -> TargetSpec:
        return cls(TargetKind.INITIAL_SET, 0.0, 0.0, initial)

    def to_dict(self) -> dict[str, Any]:
        r: dict[str, Any] = {"kind": self.kind.value, "threshold": self.threshold, "epsilon": self.epsilon}
        if self.initial is not None:
            r["initial"] = self.initial.to_dict()
        return r


class ControlRestriction(NamedTuple):
    """U^t = {u : P(u | x; theta*) >= delta}."""

    intent: int
    """Index of theta* in the model's intents."""
    delta: float

    def to_dict(self) -> dict[str, Any]:
        return {"intent": self.intent, "delta": self.delta}


class QuerySpec(NamedTuple):
    target: TargetSpec
    strategy: Strategy
    horizon: float
    """T in seconds."""
    dt: float
    restriction: ControlRestriction | None = None

    @property
    def steps(self) -> int:
        """
        Number of backward steps N = T / dt.

        >>> QuerySpec(TargetSpec.belief_at_least(), Strategy.MAXIMIZE, 1.7820, 0.0891).steps
        20
        """
        steps = utils.steps_in_horizon(self.horizon, self.dt)
        if steps is None:
            msg = f"horizon {self.horizon} s is not a whole number of {self.dt} s steps"
            raise InconsistentSpecError(msg)
        return steps

    def validate(self) -> QuerySpec:
        _ = self.steps
        if self.restriction is not None and not 0.0 <= self.restriction.delta <= 1.0:
            msg = f"delta {self.restriction.delta} outside [0, 1]"
            raise InconsistentSpecError(msg)
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target.to_dict(),
            "strategy": self.strategy.value,
            "horizon": self.horizon,
            "dt": self.dt,
            "restriction": None if self.restriction is None else self.restriction.to_dict(),
        }


class TTLEntry(NamedTuple):
    physical: tuple[float, ...]
    prior: float
    ttl: float | None
    """Seconds, or None when Unreachable within the horizon."""


class PriorSummary(NamedTuple):
    prior: float
    mean: float | None
    std: float | None
    unreachable: int


class TTLReport(NamedTuple):
    entries: tuple[TTLEntry, ...]
    mode: str
    """``best`` (minimize) or ``worst`` (maximize)."""
    horizon: float

    def __repr__(self) -> str:
        mean, std, missing = self.aggregate()
        return f"TTLReport({self.mode}, n={len(self.entries)}, mean={mean}, std={std}, unreachable={missing})"

    @property
    def ttls(self) -> list[float | None]:
        return [e.ttl for e in self.entries]

    @property
    def unreachable_count(self) -> int:
        return sum(1 for e in self.entries if e.ttl is None)

    @property
    def priors(self) -> list[float]:
        return sorted({e.prior for e in self.entries})

    @property
    def states(self) -> list[tuple[float, ...]]:
        seen: dict[tuple[float, ...], None] = {}
        for e in self.entries:
            seen.setdefault(e.physical, None)
        return list(seen)

    def aggregate(self) -> tuple[float | None, float | None, int]:
        """Mean and standard deviation over finite TTLs plus the Unreachable count."""
        return utils.finite_mean_std(self.ttls)

    def by_prior(self) -> list[PriorSummary]:
        rows = []
        for prior in self.priors:
            mean, std, missing = utils.finite_mean_std(e.ttl for e in self.entries if e.prior == prior)
            rows.append(PriorSummary(prior, mean, std, missing))
        return rows

    def by_state(self, prior: float) -> list[TTLEntry]:
        return [e for e in self.entries if e.prior == prior]

    def matrix(self) -> NDArray[np.float64]:
        """TTL seconds with one row per prior and one column per state; inf where Unreachable."""
        priors = {p: i for i, p in enumerate(self.priors)}
        states = {s: j for j, s in enumerate(self.states)}
        out = np.full((len(priors), len(states)), math.inf)
        for e in self.entries:
            out[priors[e.prior], states[e.physical]] = math.inf if e.ttl is None else e.ttl
        return out

    def lookup(self, physical: tuple[float, ...], prior: float) -> float | None:
        for e in self.entries:
            if e.physical == physical and e.prior == prior:
                return e.ttl
        msg = f"No entry for {physical} at prior {prior}"
        raise KeyError(msg)


class BranchTime(NamedTuple):
    ttls: dict[str, float | None]
    """Worst-case TTL per intent name."""
    t_b: float

    def __repr__(self) -> str:
        return f"t_b={self.t_b:.4f}s {self.ttls}"


class Rollout(NamedTuple):
    states: list[NDArray[np.float64]]
    """Joint states z^0 .. z^K."""
    actions: list[int]
    """Action indices u^0 .. u^{K-1}."""
    crossing_step: int | None
    """First step at which the state is inside the target set, None if never."""


class BehaviorTrace(NamedTuple):
    mode: str
    """``legible``, ``deceptive`` or ``argmax`` (pure goal-driven reference)."""
    physical: list[tuple[float, ...]]
    actions: list[int]
    beliefs: list[float]
    """b(theta*) per visited state."""
    crossing_step: int | None

    def __repr__(self) -> str:
        return f"BehaviorTrace({self.mode}, steps={len(self.actions)}, crossing={self.crossing_step})"


class ReachabilityHeatmap(NamedTuple):
    initial_weights: tuple[float, ...]
    """Rows: w0."""
    target_weights: tuple[float, ...]
    """Columns: w* (the estimate grid nodes)."""
    arrival: NDArray[np.float64]
    """Earliest arrival seconds, inf where unreachable."""

    def arrival_at(self, w0: float, w_star: float) -> float:
        row = int(np.argmin(np.abs(np.asarray(self.initial_weights) - w0)))
        col = int(np.argmin(np.abs(np.asarray(self.target_weights) - w_star)))
        return float(self.arrival[row, col])

    def reachable_count(self, w0: float) -> int:
        row = int(np.argmin(np.abs(np.asarray(self.initial_weights) - w0)))
        return int(np.isfinite(self.arrival[row]).sum())


class SimMetrics(NamedTuple):
    efficiency: float
    """Final distance from the robot to its goal (meters)."""
    safety: float
    """Minimum footprint clearance between cars (meters, negative = overlap depth)."""
