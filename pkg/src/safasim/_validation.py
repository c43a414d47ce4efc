"""Small argument checks shared by the public entry points."""

from __future__ import annotations

import math
import numbers

import numpy as np


class NumericDivergenceError(ArithmeticError):
    """Raised when a weight vector or gradient stops being finite."""

    def __init__(self, message, client=None, round=None):
        super().__init__(message)
        self.client = client
        self.round = round


class ProtocolStateError(RuntimeError):
    """Internal-consistency violation inside the protocol state machine."""


def check_positive(value, name, *, integer=False, allow_zero=False):
    if integer and not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value) and not math.isinf(value):
        raise ValueError(f"{name} must not be NaN")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value


def check_fraction(value, name, *, low_open=False, high_open=False):
    """Check ``value`` lies in [0, 1] with optionally open ends."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a number, got {value!r}")
    lo_ok = value > 0 if low_open else value >= 0
    hi_ok = value < 1 if high_open else value <= 1
    if not (lo_ok and hi_ok):
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return float(value)


def check_finite(weights, *, client=None, round=None, what="weights"):
    if not np.all(np.isfinite(weights)):
        where = []
        if client is not None:
            where.append(f"client {client}")
        if round is not None:
            where.append(f"round {round}")
        suffix = f" ({', '.join(where)})" if where else ""
        raise NumericDivergenceError(
            f"non-finite {what}{suffix}", client=client, round=round
        )
    return weights
