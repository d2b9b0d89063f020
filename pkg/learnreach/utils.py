from __future__ import annotations

import hashlib
import json
import logging
import math
from typing import TYPE_CHECKING, Any

import numpy as np

from learnreach import constants

if TYPE_CHECKING:
    from collections.abc import Iterable

    from numpy.typing import NDArray

logger = logging.getLogger(__name__)


def wrap_angle(angle: float) -> float:
    """
    Wraps an angle into [-pi, pi).

    >>> round(wrap_angle(-3.2), 3)
    3.083
    >>> wrap_angle(math.pi) == -math.pi
    True
    >>> wrap_angle(0.5)
    0.5
    """
    wrapped = (angle + math.pi) % constants.TWO_PI - math.pi
    # float rounding can land exactly on +pi
    return -math.pi if wrapped >= math.pi else wrapped


def wrap_angles(angles: NDArray[np.float64]) -> NDArray[np.float64]:
    """Vectorized :func:`wrap_angle`."""
    wrapped = np.mod(angles + math.pi, constants.TWO_PI) - math.pi
    return np.where(wrapped >= math.pi, -math.pi, wrapped)


def clamp(value: float, lower: float, upper: float) -> float:
    """
    Clamps the value into [lower, upper].

    >>> clamp(1.5, 0.0, 1.0)
    1.0
    >>> clamp(-0.1, 0.0, 1.0)
    0.0
    """
    return min(max(value, lower), upper)


def clamp_belief(value: float) -> float:
    """
    Clamps a belief away from the absorbing endpoints 0 and 1.

    >>> clamp_belief(1.0)
    0.999
    >>> clamp_belief(0.0)
    0.001
    >>> clamp_belief(0.25)
    0.25
    """
    return clamp(value, constants.BELIEF_FLOOR, constants.BELIEF_CEIL)


def steps_in_horizon(horizon: float, dt: float) -> int | None:
    """
    Returns the number of whole steps of length ``dt`` in ``horizon``, or None when the
    horizon is not a whole number of steps.

    >>> steps_in_horizon(1.7820, 0.0891)
    20
    >>> steps_in_horizon(7.1605, 0.2469)
    29
    >>> steps_in_horizon(0.0, 0.5)
    0
    >>> steps_in_horizon(1.0, 0.3) is None
    True
    """
    if dt <= 0.0 or horizon < 0.0:
        return None
    ratio = horizon / dt
    steps = round(ratio)
    if abs(ratio - steps) > constants.HORIZON_STEP_TOLERANCE:
        return None
    return int(steps)


def evenly_spaced_headings(count: int) -> tuple[float, ...]:
    """
    Returns ``count`` evenly spaced headings on [-pi, pi).

    >>> [round(h, 4) for h in evenly_spaced_headings(4)]
    [-3.1416, -1.5708, 0.0, 1.5708]
    """
    return tuple(-math.pi + constants.TWO_PI * k / count for k in range(count))


def digest(*parts: Any) -> str:  # noqa: ANN401
    """
    Stable SHA-256 over JSON-able parts and raw bytes.

    >>> digest("a", 1) == digest("a", 1)
    True
    >>> digest("a", 1) == digest("a", 2)
    False
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, default=jsonable).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def jsonable(value: Any) -> Any:  # noqa: ANN401
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "_asdict"):
        return value._asdict()
    msg = f"Cannot serialize {type(value).__name__}"
    raise TypeError(msg)


def finite_mean_std(values: Iterable[float | None]) -> tuple[float | None, float | None, int]:
    """
    Mean and (population) standard deviation over finite entries, plus the count of
    entries that were None or infinite.

    >>> finite_mean_std([1.0, 3.0, None])
    (2.0, 1.0, 1)
    >>> finite_mean_std([None, float("inf")])
    (None, None, 2)
    """
    items = list(values)
    finite = [v for v in items if v is not None and math.isfinite(v)]
    missing = len(items) - len(finite)
    if not finite:
        return None, None, missing
    arr = np.asarray(finite, dtype=float)
    return float(arr.mean()), float(arr.std()), missing


def format_float(value: float | None) -> str:
    """
    Formats a float for CSV output; None and inf both render as ``inf``.

    >>> format_float(0.5)
    '0.5'
    >>> format_float(None)
    'inf'
    >>> format_float(float("inf"))
    'inf'
    """
    if value is None or math.isinf(value):
        return "inf"
    return repr(float(value))


def none_to_inf(value: float | None) -> float:
    """
    >>> none_to_inf(None)
    inf
    """
    return math.inf if value is None else float(value)
