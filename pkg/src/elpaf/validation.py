"""Input validation helpers shared by the estimators and free functions."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import InvalidInputError


class Roi(NamedTuple):
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int


def check_image(image, *, min_size: int = 1, divisible_by: int | None = None,
                name: str = "image") -> np.ndarray:
    """Return ``image`` as a finite, non-negative 2-D float64 array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if h < min_size or w < min_size:
        raise InvalidInputError(f"{name} must be at least {min_size}x{min_size}, got {h}x{w}")
    if divisible_by and (h % divisible_by or w % divisible_by):
        raise InvalidInputError(
            f"{name} dimensions {h}x{w} must be divisible by {divisible_by}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise InvalidInputError(f"{name} contains negative intensities")
    return arr


def check_positive(value, name: str) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise InvalidInputError(f"{name} must be positive and finite, got {value}")
    return value


def check_roi(roi, width: int, height: int):
    """Normalise ``roi`` to an ``(x0, y0, x1, y1)`` half-open rectangle.

    ``None`` selects the whole sensor.
    """
    if roi is None:
        return Roi(0, 0, width, height)
    x0, y0, x1, y1 = (int(v) for v in roi)
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise InvalidInputError(f"roi {roi} outside {width}x{height} sensor")
    return Roi(x0, y0, x1, y1)
