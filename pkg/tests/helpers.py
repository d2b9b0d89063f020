"""Small hand-built systems shared by the tests."""

from __future__ import annotations

import math

import numpy as np

from learnreach import utils
from learnreach.gridspace import GridSpace
from learnreach.human_models import HumanModel, HumanModelSpec, QTable
from learnreach.learner_dynamics import BayesLearner, LearnerSpec
from learnreach.models import HumanKind, Intent, InterpolationMode, LearnerKind
from learnreach.reach_solver import JointSystem

PLANAR = 5
BELIEFS = 11


def tiny_spec(speed: float = 1.0, dt: float = 0.5) -> HumanModelSpec:
    """Four-heading pedestrian whose step (speed * dt) is exactly one 0.5 m cell."""
    return HumanModelSpec(
        HumanKind.PEDESTRIAN2D,
        speed,
        utils.evenly_spaced_headings(4),
        dt,
        (Intent("left", (0.0, 1.0)), Intent("right", (2.0, 1.0))),
    )


def tiny_physical_grid() -> GridSpace:
    return GridSpace([0.0, 0.0], [2.0, 2.0], [PLANAR, PLANAR])


def tiny_joint_grid() -> GridSpace:
    return GridSpace([0.0, 0.0, 0.0], [2.0, 2.0, 1.0], [PLANAR, PLANAR, BELIEFS])


def random_system(
    seed: int,
    *,
    interpolation: InterpolationMode = InterpolationMode.NEAREST,
    workers: int = 1,
    scale: float = 2.0,
) -> JointSystem:
    """A Bayes learner over random Q tables on the 5 x 5 planar grid."""
    rng = np.random.default_rng(seed)
    spec = tiny_spec()
    physical = tiny_physical_grid()
    tables = [
        QTable(intent, intent.beta, physical, rng.normal(scale=scale, size=(physical.node_count, spec.action_count)))
        for intent in spec.intents
    ]
    model = HumanModel(spec, physical, tables)
    learner = BayesLearner.from_model(model, LearnerSpec(LearnerKind.BAYES))
    return JointSystem(tiny_joint_grid(), model, learner, interpolation=interpolation, workers=workers)


def softmax_row(q: np.ndarray) -> list[float]:
    top = max(q)
    weights = [math.exp(v - top) for v in q]
    total = sum(weights)
    return [w / total for w in weights]
