import math
from typing import Final

LARGE: Final[float] = 1e6
"""Surrogate for +inf held by occupied nodes and blocked actions."""

BELIEF_FLOOR: Final[float] = 1e-3
BELIEF_CEIL: Final[float] = 1.0 - 1e-3

SOFT_VI_DISCOUNT: Final[float] = 0.95
SOFT_VI_TOLERANCE: Final[float] = 1e-6
SOFT_VI_MAX_SWEEPS: Final[int] = 500

CLEARANCE_CAP: Final[float] = 1.5
"""Obstacle clearance (meters) beyond which the clearance feature saturates."""

DEFAULT_LEARNING_RATE: Final[float] = 0.1
DEFAULT_BETA: Final[float] = 1.0

HORIZON_STEP_TOLERANCE: Final[float] = 1e-2
"""How far T/dt may sit from an integer and still count as a whole number of steps."""

TIE_EPSILON: Final[float] = 1e-9

# Timing and model constants of the bundled case studies.
DRIVING_DT: Final[float] = 0.0891
DRIVING_HORIZON: Final[float] = 1.7820
DRIVING_SPEED: Final[float] = 6.0
DRIVING_TURN_RATES: Final[tuple[float, ...]] = (-3.5, 0.0, 3.5)
DRIVING_DELTA: Final[float] = 0.27

CONFIDENCE_DT: Final[float] = 0.4545
PEDESTRIAN_SPEED: Final[float] = 0.6
PEDESTRIAN_HEADINGS: Final[int] = 8

LEGIBILITY_DELTA: Final[float] = 0.15

GRADIENT_DT: Final[float] = 0.2469
GRADIENT_HORIZON: Final[float] = 7.1605

CONFIDENCE_THRESHOLD: Final[float] = 0.9

HEURISTIC_BRANCH_TIME: Final[float] = 0.3265
CAR_RADIUS: Final[float] = 1.0

PRIOR_CORRECT: Final[float] = 0.9
PRIOR_INCORRECT: Final[float] = 0.1
PRIOR_UNIFORM: Final[float] = 0.5

TWO_PI: Final[float] = 2.0 * math.pi

CACHE_ENV_VAR: Final[str] = "LEARNREACH_CACHE"
PACKAGE_NAME: Final[str] = "learnreach"

CSV_METADATA_PREFIX: Final[str] = "# "
MANIFEST_FILE: Final[str] = "manifest.json"
TIMESTAMP_FMT: Final[str] = "%Y-%m-%dT%H:%M:%SZ"
