"""Input checks shared by the estimators and the CLI."""
import math

import numpy as np
from sklearn.utils.validation import check_array

HOURS_PER_YEAR = 8760.0


def check_positive(value, name: str) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_probability(value, name: str, *, open_interval: bool = False) -> float:
    value = float(value)
    lo_ok = value > 0 if open_interval else value >= 0
    hi_ok = value < 1 if open_interval else value <= 1
    if not (lo_ok and hi_ok):
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_interval else '[0, 1]'}, got {value}")
    return value


def check_time_grid(times, *, name: str = "times") -> np.ndarray:
    """1-d, finite, non-negative, non-decreasing array of times in hours."""
    arr = check_array(np.atleast_1d(np.asarray(times, dtype=float)), ensure_2d=False,
                      ensure_all_finite=True, input_name=name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    if np.any(np.diff(arr) < 0):
        raise ValueError(f"{name} must be ascending")
    return arr


def years_to_hours(years) -> np.ndarray:
    return np.asarray(years, dtype=float) * HOURS_PER_YEAR


def hours_to_years(hours) -> np.ndarray:
    return np.asarray(hours, dtype=float) / HOURS_PER_YEAR
