"""Power-law linear-regression instances and task-regime classification."""

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Rational
from typing import NamedTuple, Optional

import numpy as np

from ._validation import (
    ValidationError,
    check_exponents,
    check_positive,
    check_positive_int,
)

__all__ = [
    "ProblemSpec",
    "Spectrum",
    "Regime",
    "RegimeInfo",
    "build_spectrum",
    "default_eta_stab",
    "regime_classify",
    "truncation_dim",
    "sample_feature_batch",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Diagonal covariance eigenvalues and target coefficients, index j = 1..d."""

    lambdas: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        th = np.asarray(self.thetas, dtype=float)
        if lam.ndim != 1 or lam.shape != th.shape:
            raise ValidationError("lambdas and thetas must be 1-D arrays of equal length")
        if lam.size == 0 or np.any(lam <= 0):
            raise ValidationError("eigenvalues must be positive")
        lam.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "thetas", th)

    @property
    def d(self) -> int:
        return self.lambdas.size

    @property
    def initial_risk(self) -> float:
        """Excess risk of theta = 0."""
        return float(np.dot(self.lambdas, self.thetas**2))


def default_eta_stab(beta, d) -> float:
    """1 / (4 * trace(H)) for the exact power-law spectrum of dimension d."""
    j = np.arange(1, d + 1, dtype=float)
    return float(1.0 / (4.0 * np.sum(j ** (-float(beta)))))


@dataclass(frozen=True)
class ProblemSpec:
    """A truncated power-law regression problem.

    ``eta_stab`` defaults to ``1 / (4 * sum_j lambda_j)`` for the chosen ``d``.
    """

    s: float
    beta: float
    sigma2: float = 1.0
    d: int = 128
    eta_stab: Optional[float] = None
    seed: int = 0
    _spectrum: Spectrum = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        check_exponents(self.s, self.beta)
        check_positive("sigma2", self.sigma2, allow_zero=True)
        check_positive_int("d", self.d)
        if isinstance(self.seed, bool) or not isinstance(self.seed, Integral):
            raise ValidationError(f"seed must be an integer, got {self.seed!r}")
        if self.eta_stab is None:
            object.__setattr__(self, "eta_stab", default_eta_stab(self.beta, self.d))
        else:
            check_positive("eta_stab", self.eta_stab)
        object.__setattr__(self, "_spectrum", build_spectrum(self))

    @property
    def spectrum(self) -> Spectrum:
        return self._spectrum


def build_spectrum(spec) -> Spectrum:
    """Exact power-law spectrum: lambda_j = j^-beta, lambda_j theta_j^2 = j^-(1 + s beta)."""
    s, beta, d = spec.s, spec.beta, spec.d
    check_exponents(s, beta)
    check_positive_int("d", d)
    j = np.arange(1, d + 1, dtype=float)
    lambdas = j ** (-float(beta))
    thetas = j ** ((beta - 1.0 - s * beta) / 2.0)
    return Spectrum(lambdas, thetas)


class Regime(enum.Enum):
    EASY = "easy"
    HARD = "hard"


class RegimeInfo(NamedTuple):
    regime: Regime
    boundary: bool


def regime_classify(s, beta) -> RegimeInfo:
    """Easy iff ``s >= 1 - 1/beta``.

    Rational inputs (int, Fraction) are compared exactly; floats compare in
    floating point with a 1e-12 relative band flagged as the boundary.
    """
    check_exponents(s, beta)
    if isinstance(s, Rational) and isinstance(beta, Rational):
        threshold = 1 - Fraction(1) / Fraction(beta)
        diff = Fraction(s) - threshold
        boundary = diff == 0
    else:
        threshold = 1.0 - 1.0 / float(beta)
        diff = float(s) - threshold
        boundary = math.isclose(float(s), threshold, rel_tol=1e-12, abs_tol=1e-15)
    regime = Regime.EASY if (diff >= 0 or boundary) else Regime.HARD
    return RegimeInfo(regime, bool(boundary))


def truncation_dim(s, beta, eta0, N_max, safety=10.0) -> int:
    """d = ceil(safety * (1 + eta0 * N_max)^(1/beta)), floored at 16.

    Modes beyond d satisfy lambda_d * T << 1 and stay essentially frozen.
    """
    check_exponents(s, beta)
    check_positive("eta0", eta0)
    check_positive("N_max", N_max)
    check_positive("safety", safety)
    d = math.ceil(safety * (1.0 + eta0 * N_max) ** (1.0 / beta))
    return max(int(d), 16)


def sample_feature_batch(spectrum, count, rng, sigma2=1.0):
    """Gaussian design: coordinates independent with variance lambda_j.

    Returns ``(X, y)`` with ``y = X @ theta* + eps``, ``eps ~ N(0, sigma2)``.
    The noise draw happens even when ``sigma2 == 0`` so streams stay aligned.
    """
    check_positive_int("count", count)
    check_positive("sigma2", sigma2, allow_zero=True)
    rng = np.random.default_rng(rng)
    X = rng.standard_normal((count, spectrum.d)) * np.sqrt(spectrum.lambdas)
    eps = rng.standard_normal(count)
    y = X @ spectrum.thetas + math.sqrt(sigma2) * eps
    return X, y
