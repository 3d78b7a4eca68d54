"""Input checks shared across modules."""

import math
from numbers import Integral, Real


class ValidationError(ValueError):
    """Raised for inputs outside an operation's domain."""


class DivergenceError(RuntimeError):
    """Raised when an SGD run blows past the divergence guard."""


def check_exponents(s, beta):
    if not isinstance(s, Real) or not isinstance(beta, Real):
        raise ValidationError("exponents must be real numbers")
    if not (math.isfinite(float(s)) and math.isfinite(float(beta))):
        raise ValidationError("exponents must be finite")
    if s <= 0:
        raise ValidationError(f"source exponent s must be > 0, got {s}")
    if beta <= 1:
        raise ValidationError(f"capacity exponent beta must be > 1, got {beta}")


def check_positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_positive(name, value, allow_zero=False):
    if not isinstance(value, Real) or not math.isfinite(float(value)):
        raise ValidationError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValidationError(f"{name} must be {bound}, got {value}")
    return float(value)
