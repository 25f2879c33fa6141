"""Argument checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import ConfigError


def check_probability(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not (0.0 <= float(value) <= 1.0):
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_odd_window(w) -> int:
    if not isinstance(w, numbers.Integral) or w < 1 or w % 2 == 0:
        raise ConfigError(f"window must be an odd integer >= 1, got {w!r}")
    return int(w)


def check_positive(value, name: str, *, strict: bool = True) -> float:
    ok = value > 0 if strict else value >= 0
    if not isinstance(value, numbers.Real) or not ok or not np.isfinite(value):
        raise ConfigError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value!r}")
    return float(value)


def check_min_cams(value) -> int:
    if not isinstance(value, numbers.Integral) or value < 2:
        raise ConfigError(f"min_cams must be an integer >= 2, got {value!r}")
    return int(value)
