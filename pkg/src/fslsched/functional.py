"""The FSL loss functional and closed-form rate predictions.

The functional maps a schedule to ``L = (1 + T)^-s + noise`` where the noise
is the schedule convolved with the forgetting kernel
``K(t) = (1 + t)^-(2 - 1/beta)``.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._validation import ValidationError, check_exponents, check_positive
from .problem import Regime, regime_classify

__all__ = [
    "FSLEvaluation",
    "FSLValidityWarning",
    "RatePrediction",
    "kernel",
    "evaluate_trace",
    "evaluate_profile",
    "evaluate_spec",
    "evaluate_spec_grid",
    "spectral_bound",
    "predicted_fractional_rate",
    "predicted_optimal_rate",
    "evaluations_to_csv",
    "log_panels",
]


class FSLValidityWarning(UserWarning):
    """The functional is only meaningful once intrinsic time exceeds about 1."""


@dataclass(frozen=True)
class FSLEvaluation:
    signal: float
    noise: float
    T: float

    @property
    def total(self) -> float:
        return self.signal + self.noise

    def as_row(self, schedule_id="", N=""):
        return [schedule_id, N] + [repr(float(v)) for v in (self.T, self.signal, self.noise, self.total)]


def kernel(t, beta):
    """Forgetting kernel ``(1 + t)^-(2 - 1/beta)``."""
    check_exponents(1.0, beta)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("kernel is defined for t >= 0")
    out = (1.0 + t) ** (-(2.0 - 1.0 / beta))
    return float(out) if out.ndim == 0 else out


def _warn_small_T(T):
    if T < 1.0 - 1e-9:
        warnings.warn(
            f"intrinsic time T={T:.3g} < 1; the functional is a poor loss proxy here",
            FSLValidityWarning,
            stacklevel=3,
        )


def evaluate_trace(trace, s, beta) -> FSLEvaluation:
    """Discrete functional on the step grid.

    ``noise = sum_i eta_i^2 K(t_N - t_{i+1})``, the same alignment used by the
    spectral bounds.
    """
    check_exponents(s, beta)
    T = trace.T
    _warn_small_T(T)
    lag = np.maximum(T - trace.t[1:], 0.0)
    noise = float(np.sum(trace.etas**2 * (1.0 + lag) ** (-(2.0 - 1.0 / beta))))
    return FSLEvaluation((1.0 + T) ** (-s), noise, T)


# -- continuous quadrature ----------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def log_panels(lo, hi, per_decade=4):
    """Panel edges ``[0, lo, ..., hi]`` geometrically spaced between lo and hi."""
    if hi <= lo:
        return np.array([0.0, hi])
    n = max(int(math.ceil(per_decade * math.log10(hi / lo))), 1)
    edges = np.concatenate([[0.0], np.geomspace(lo, hi, n + 1)])
    edges[-1] = hi
    return edges


def _gl_nodes(edges):
    """Composite Gauss-Legendre nodes and weights over consecutive panels."""
    a = edges[:-1, None]
    b = edges[1:, None]
    half = 0.5 * (b - a)
    x = (a + b) * 0.5 + half * _GL_NODES[None, :]
    w = half * _GL_WEIGHTS[None, :]
    return x.ravel(), w.ravel()


def evaluate_profile(profile, s, beta, lo=1e-8) -> FSLEvaluation:
    """Continuous functional of an intrinsic-time profile.

    With lag ``u = T - tau`` the noise is ``int_0^T K(u) phi(T - u) du``,
    integrated by composite Gauss-Legendre on log-spaced panels so both the
    kernel scale (u ~ 1) and the profile scale (u ~ T) are resolved.
    """
    check_exponents(s, beta)
    T = float(profile.T)
    _warn_small_T(T)
    edges = log_panels(min(lo, T * 1e-3), T)
    inner = [k for k in getattr(profile, "kinks", ()) if 0.0 < k < T]
    if inner:
        edges = np.unique(np.concatenate([edges, inner]))
    u, w = _gl_nodes(edges)
    integrand = (1.0 + u) ** (-(2.0 - 1.0 / beta)) * profile.lag(u)
    return FSLEvaluation((1.0 + T) ** (-s), float(np.dot(w, integrand)), T)


def evaluate_spec(spec, s, beta) -> FSLEvaluation:
    """Continuous functional of a fractional schedule, computed in the step domain.

    With ``w = 1 - z/N`` the remaining intrinsic time is ``eta0 N m(w)`` where
    ``m(w)`` is the profile mass over the last fraction ``w``, so
    ``noise = eta0^2 N int_0^1 K(eta0 N m(w)) zeta(1 - w)^2 dw``. No inversion
    of the intrinsic clock is needed, and all of ``evaluate_spec_grid`` shares
    the nodes.
    """
    return evaluate_spec_grid(spec, [spec.eta0], s, beta)[0]


def evaluate_spec_grid(spec, eta0_grid, s, beta):
    """Evaluate ``spec`` re-peaked at every ``eta0`` in the grid."""
    check_exponents(s, beta)
    spec = spec.snapped()
    shape = spec.shape()
    N = spec.N
    rho1 = shape.rho1
    etas0 = np.asarray(eta0_grid, dtype=float)
    # resolve the tail where the remaining intrinsic time drops below ~1e-8
    target = 1e-8 / (etas0.max() * N)
    w_lo = float(shape.remaining_for_mass(np.array(min(target, 0.5 * rho1))))
    w_lo = min(max(w_lo, 1e-300), 1e-3)
    edges = log_panels(w_lo, 1.0)
    kink = getattr(shape, "r", 1.0)
    if 0.0 < kink < 1.0:
        edges = np.unique(np.append(edges, kink))
    w, weight = _gl_nodes(edges)
    mass = shape.mass_rem(w)
    z2 = shape.zeta_rem(w) ** 2
    p = 2.0 - 1.0 / beta
    out = []
    for eta0 in etas0:
        T = eta0 * N * rho1
        _warn_small_T(T)
        noise = eta0 * eta0 * N * float(np.dot(weight, z2 * (1.0 + eta0 * N * mass) ** (-p)))
        out.append(FSLEvaluation((1.0 + T) ** (-s), noise, T))
    return out


# -- spectrum-level bounds ----------------------------------------------------


def spectral_bound(trace, spectrum, s=None, beta=None, chunk=4096):
    """Spectral signal and noise terms ``(S_N, N_N)`` of the risk decomposition.

    ``S_N = sum_j lambda_j theta_j^2 exp(-2 lambda_j t_N)`` and
    ``N_N = sum_i eta_i^2 sum_j lambda_j^2 exp(-2 lambda_j (t_N - t_{i+1}))``.
    ``s`` and ``beta`` are accepted for signature symmetry; the spectrum
    already encodes them.
    """
    lam = spectrum.lambdas
    T = trace.T
    S = float(np.sum(lam * spectrum.thetas**2 * np.exp(-2.0 * lam * T)))
    lag = np.maximum(T - trace.t[1:], 0.0)
    e2 = trace.etas**2
    lam2 = lam**2
    total = 0.0
    for start in range(0, lag.size, chunk):
        block = lag[start : start + chunk]
        decay = np.exp(-2.0 * np.outer(block, lam)) @ lam2
        total += float(np.dot(e2[start : start + chunk], decay))
    return S, total


# -- rate predictions ---------------------------------------------------------


@dataclass(frozen=True)
class RatePrediction:
    """Predicted loss ``N^-exponent (log N)^log_exponent`` and tuned peak
    ``N^eta0_exponent (log N)^eta0_log_exponent``."""

    exponent: float
    log_factor: bool
    eta0_exponent: float
    eta0_log_exponent: float
    alpha: float
    regime: Regime = Regime.EASY

    @property
    def log_exponent(self) -> float:
        return self.exponent if self.log_factor else 0.0


def _is_equal(x, y):
    if isinstance(x, Fraction) or isinstance(y, Fraction):
        return Fraction(x) == Fraction(y)
    return math.isclose(float(x), float(y), rel_tol=1e-12, abs_tol=1e-12)


def predicted_fractional_rate(s, beta, gamma) -> RatePrediction:
    """Tuned fractional schedule with power tail ``gamma``; ``alpha = min(beta, gamma + 1)``."""
    check_exponents(s, beta)
    check_positive("gamma", gamma, allow_zero=True)
    s, beta, gamma = float(s), float(beta), float(gamma)
    alpha = min(beta, gamma + 1.0)
    if s >= 1.0 - 1.0 / alpha or math.isclose(s, 1.0 - 1.0 / alpha, rel_tol=1e-12):
        log = _is_equal(beta, gamma + 1.0)
        return RatePrediction(
            exponent=s * alpha / (s * alpha + 1.0),
            log_factor=log,
            eta0_exponent=-(s - 1.0 + 1.0 / alpha) / (s + 1.0 / alpha),
            eta0_log_exponent=-1.0 / (s + 1.0 / alpha) if log else 0.0,
            alpha=alpha,
            regime=Regime.EASY,
        )
    return RatePrediction(s, False, 0.0, 0.0, alpha, Regime.HARD)


def predicted_optimal_rate(s, beta) -> RatePrediction:
    """Rate of the optimal schedule: minimax ``s beta / (s beta + 1)`` when easy, ``s`` when hard."""
    check_exponents(s, beta)
    regime = regime_classify(s, beta).regime
    s, beta = float(s), float(beta)
    if regime is Regime.EASY:
        sb = s * beta
        return RatePrediction(sb / (sb + 1.0), False, -(1.0 + sb - beta) / (1.0 + sb), 0.0, beta, regime)
    return RatePrediction(s, False, 0.0, 0.0, beta, regime)


def evaluations_to_csv(rows, path=None):
    """Write ``(schedule_id, N, evaluation)`` triples as CSV (schedule_id,N,T,signal,noise,total)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schedule_id", "N", "T", "signal", "noise", "total"])
    for schedule_id, N, ev in rows:
        writer.writerow(ev.as_row(schedule_id, N))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
