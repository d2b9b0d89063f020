"""The learner update f_L as a dynamical system over the estimate."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, NamedTuple, Protocol

import numpy as np
from scipy import special

from learnreach import constants, utils
from learnreach.exceptions import InconsistentSpecError
from learnreach.human_models import LikelihoodTable, build_q_table
from learnreach.models import Intent, LearnerKind

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

    from learnreach.gridspace import GridSpace
    from learnreach.human_models import HumanModel, HumanModelSpec, QTable, QTableCache

logger = logging.getLogger(__name__)


class LearnerSpec(NamedTuple):
    kind: LearnerKind
    tracked: int = 0
    """Index of the intent whose probability is the estimate (bayes)."""
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    """alpha (gradient)."""
    weight_nodes: int = 41
    """Number of w-grid nodes carrying Q tables (gradient)."""

    def validate(self, intent_count: int) -> LearnerSpec:
        if self.kind == LearnerKind.GRADIENT and self.learning_rate <= 0.0:
            msg = f"learning rate {self.learning_rate} must be positive"
            raise InconsistentSpecError(msg)
        if self.kind == LearnerKind.BAYES and not 0 <= self.tracked < intent_count:
            msg = f"tracked hypothesis {self.tracked} not among {intent_count} intents"
            raise InconsistentSpecError(msg)
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "tracked": self.tracked,
            "learning_rate": self.learning_rate,
            "weight_nodes": self.weight_nodes,
        }


class BeliefUpdate(NamedTuple):
    belief: float
    degenerate: bool = False
    """Both hypotheses gave the observed action zero likelihood; the belief was left unchanged."""


def bayes_posterior(belief: float, tracked: float, other: float) -> BeliefUpdate:
    """
    One Bayes update of the tracked hypothesis probability from the two action likelihoods.

    >>> bayes_posterior(0.5, 0.8, 0.2)
    BeliefUpdate(belief=0.8, degenerate=False)
    >>> round(bayes_posterior(0.3, 0.4, 0.4).belief, 12)
    0.3
    >>> bayes_posterior(0.3, 0.0, 0.0)
    BeliefUpdate(belief=0.3, degenerate=True)
    """
    evidence = tracked * belief + other * (1.0 - belief)
    if evidence <= 0.0:
        logger.warning("Degenerate likelihood (both hypotheses assign zero probability); belief kept at %s", belief)
        return BeliefUpdate(belief, degenerate=True)
    return BeliefUpdate(utils.clamp_belief(tracked * belief / evidence))


def bayes_update(
    belief: float, x: ArrayLike, action: int, tracked: LikelihoodTable, other: LikelihoodTable
) -> BeliefUpdate:
    """b' = P(u|x,theta_1) b / (P(u|x,theta_1) b + P(u|x,theta_2) (1 - b)), clamped."""
    return bayes_posterior(belief, float(tracked.at(x)[action]), float(other.at(x)[action]))


def bayes_posterior_array(
    belief: NDArray[np.float64], tracked: NDArray[np.float64], other: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Vectorized :func:`bayes_posterior`; degenerate entries keep their prior."""
    evidence = tracked * belief + other * (1.0 - belief)
    posterior = np.divide(tracked * belief, evidence, out=np.array(belief, dtype=float), where=evidence > 0.0)
    return np.where(evidence > 0.0, np.clip(posterior, constants.BELIEF_FLOOR, constants.BELIEF_CEIL), belief)


def batch_posterior(prior: float, tracked: Iterable[float], other: Iterable[float], *, clamp: bool = False) -> float:
    """
    Posterior after a whole observation sequence via the product of likelihood ratios.

    A step both hypotheses give zero likelihood carries no evidence. The first step only one of them
    rules out settles the posterior at 0 or 1 for good, as exact sequential Bayes would.

    Args:
        prior (float): Probability of the tracked hypothesis before the first observation.
        tracked (Iterable[float]): Likelihood of each observed action under the tracked hypothesis.
        other (Iterable[float]): Likelihood of each observed action under the other hypothesis.
        clamp (bool): Clamp the result into [BELIEF_FLOOR, BELIEF_CEIL].

    Returns:
        float posterior probability of the tracked hypothesis.

    >>> round(batch_posterior(0.5, [0.8, 0.8], [0.2, 0.2]), 6)
    0.941176
    >>> batch_posterior(0.5, [0.8, 0.0, 0.3], [0.2, 0.4, 0.0])
    0.0
    >>> round(batch_posterior(0.5, [0.8, 0.0], [0.2, 0.0]), 6)
    0.8
    """
    p1 = np.fromiter(tracked, dtype=float)
    p2 = np.fromiter(other, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.log(np.append(prior, p1)) - np.log(np.append(1.0 - prior, p2))
    steps[np.isnan(steps)] = 0.0
    decisive = np.flatnonzero(np.isinf(steps))
    log_odds = steps[decisive[0]] if decisive.size else steps.sum()
    posterior = float(special.expit(log_odds))
    return utils.clamp_belief(posterior) if clamp else posterior


class Learner(Protocol):
    """What the solvers need from a learner: scalar and node-vectorized updates."""

    def step(self, estimate: float, x: ArrayLike, action: int) -> float: ...

    def step_nodes(
        self, estimates: NDArray[np.float64], physical_nodes: NDArray[np.intp], action: int
    ) -> NDArray[np.float64]: ...


class BayesLearner:
    """Exact Bayes rule over two hypotheses; the estimate is the tracked hypothesis' probability."""

    def __init__(self, tracked: LikelihoodTable, other: LikelihoodTable) -> None:
        self.tracked = tracked
        self.other = other

    def __repr__(self) -> str:
        return f"BayesLearner(b({self.tracked.intent!r}) vs {self.other.intent!r})"

    @classmethod
    def from_model(cls, model: HumanModel, spec: LearnerSpec) -> BayesLearner:
        spec.validate(len(model.likelihoods))
        if len(model.likelihoods) != 2:  # noqa: PLR2004
            msg = f"bayes learner needs exactly 2 intents, got {len(model.likelihoods)}"
            raise InconsistentSpecError(msg)
        return cls(model.likelihoods[spec.tracked], model.likelihoods[1 - spec.tracked])

    def step(self, estimate: float, x: ArrayLike, action: int) -> float:
        return bayes_update(estimate, x, action, self.tracked, self.other).belief

    def step_nodes(
        self, estimates: NDArray[np.float64], physical_nodes: NDArray[np.intp], action: int
    ) -> NDArray[np.float64]:
        return bayes_posterior_array(
            estimates, self.tracked.probs[physical_nodes, action], self.other.probs[physical_nodes, action]
        )


class GradientModel:
    """
    Online MaxEnt gradient learner over the obstacle weight w, theta = [1 - w, w].

    F(x, u; w) = Q(x, u; w) - E_{u' ~ P(.|x; w)} Q(x, u'; w) is tabulated at each w node; its
    w-derivative is a central difference across neighbouring nodes (one-sided at the ends) and is
    linearly interpolated between nodes.
    """

    def __init__(self, weights: Sequence[float], q_tables: Sequence[QTable], learning_rate: float) -> None:
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.size < 2 or np.any(np.diff(self.weights) <= 0.0):  # noqa: PLR2004
            msg = "weight nodes must be at least two increasing values"
            raise InconsistentSpecError(msg)
        if learning_rate <= 0.0:
            msg = f"learning rate {learning_rate} must be positive"
            raise InconsistentSpecError(msg)
        self.learning_rate = learning_rate
        self.grid = q_tables[0].grid
        q = np.stack([t.values for t in q_tables])
        probs = np.stack([LikelihoodTable.from_q_table(t).probs for t in q_tables])
        self.objective = q - np.einsum("wna,wna->wn", probs, q)[:, :, None]
        self.gradient = np.gradient(self.objective, self.weights, axis=0, edge_order=1)

    def __repr__(self) -> str:
        return f"GradientModel({self.weights.size} w-nodes, alpha={self.learning_rate})"

    @classmethod
    def build(
        cls,
        grid: GridSpace,
        spec: HumanModelSpec,
        goal: tuple[float, float],
        learner: LearnerSpec,
        *,
        cache: QTableCache | None = None,
    ) -> GradientModel:
        weights = np.linspace(0.0, 1.0, learner.weight_nodes)
        tables = [
            build_q_table(grid, spec, Intent(f"w={w:.4f}", goal, constants.DEFAULT_BETA, float(w)), cache=cache)
            for w in weights
        ]
        logger.info("Built %d w-node Q tables on %r", len(tables), grid)
        return cls(weights, tables, learner.learning_rate)

    def _bracket(self, estimates: NDArray[np.float64]) -> tuple[NDArray[np.intp], NDArray[np.float64]]:
        w = np.clip(estimates, self.weights[0], self.weights[-1])
        lower = np.clip(np.searchsorted(self.weights, w, side="right") - 1, 0, self.weights.size - 2)
        frac = (w - self.weights[lower]) / (self.weights[lower + 1] - self.weights[lower])
        return lower, frac

    def gradient_nodes(
        self, estimates: NDArray[np.float64], physical_nodes: NDArray[np.intp], action: int
    ) -> NDArray[np.float64]:
        lower, frac = self._bracket(np.asarray(estimates, dtype=float))
        g0 = self.gradient[lower, physical_nodes, action]
        g1 = self.gradient[lower + 1, physical_nodes, action]
        return (1.0 - frac) * g0 + frac * g1

    def step_nodes(
        self, estimates: NDArray[np.float64], physical_nodes: NDArray[np.intp], action: int
    ) -> NDArray[np.float64]:
        grad = self.gradient_nodes(estimates, physical_nodes, action)
        return np.clip(estimates + self.learning_rate * grad, 0.0, 1.0)

    def step(self, estimate: float, x: ArrayLike, action: int) -> float:
        node = self.grid.nearest_nodes(x, check=False)
        return float(self.step_nodes(np.asarray([estimate]), node, action)[0])


def gradient_update(w: float, x: ArrayLike, action: int, model: GradientModel) -> float:
    """w' = clamp(w + alpha * dF/dw, 0, 1)."""
    return model.step(w, x, action)


def learner_step(learner: Learner, estimate: float, x: ArrayLike, action: int) -> float:
    """One learner update given an observed human state-action pair."""
    return learner.step(estimate, x, action)


def learner_kind(learner: Learner) -> LearnerKind:
    return LearnerKind.GRADIENT if isinstance(learner, GradientModel) else LearnerKind.BAYES
