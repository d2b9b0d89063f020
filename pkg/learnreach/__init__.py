from __future__ import annotations

import importlib.metadata

from learnreach import constants, models
from learnreach.config import load_config
from learnreach.gridspace import GridSpace, OccupancyMap, load_occupancy
from learnreach.human_models import HumanModel, HumanModelSpec
from learnreach.learner_dynamics import BayesLearner, GradientModel, LearnerSpec
from learnreach.reach_solver import JointSystem, extract_policy_rollout, extract_ttl, solve_backward, solve_forward

# set the version number within the package using importlib
try:
    __version__: str | None = importlib.metadata.version("learnreach")
except importlib.metadata.PackageNotFoundError:
    # package is not installed
    __version__ = None


__all__ = [
    "BayesLearner",
    "GradientModel",
    "GridSpace",
    "HumanModel",
    "HumanModelSpec",
    "JointSystem",
    "LearnerSpec",
    "OccupancyMap",
    "__version__",
    "constants",
    "extract_policy_rollout",
    "extract_ttl",
    "load_config",
    "load_occupancy",
    "models",
    "solve_backward",
    "solve_forward",
]
