"""Integer rounding that forgives float representation error.

Size formulas like 1/(delta * epsilon^2) routinely land a hair under the
intended integer (999.9999999999998 for 1000). Both helpers first snap to
the nearest integer when the value is within a relative tolerance of it,
then round in the requested direction.
"""

from __future__ import annotations

import math

_REL_TOL = 1e-9


def _snap(x: float) -> float | None:
    nearest = round(x)
    if abs(x - nearest) <= _REL_TOL * max(1.0, abs(nearest)):
        return nearest
    return None


def snap_floor(x: float) -> int:
    snapped = _snap(x)
    return int(snapped) if snapped is not None else math.floor(x)


def snap_ceil(x: float) -> int:
    snapped = _snap(x)
    return int(snapped) if snapped is not None else math.ceil(x)
