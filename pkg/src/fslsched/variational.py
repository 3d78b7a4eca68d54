"""Variational optimum of the FSL functional under a step budget.

At fixed intrinsic budget T and step count N, Cauchy-Schwarz gives the
optimal profile ``phi* ∝ K^-1/2``. Optimizing T then yields the easy-regime
schedule. In the hard regime the peak bound binds, and the optimum is a
stable phase followed by a fixed-budget optimal decay, parametrized by the
decay fraction ``r`` and the decay-start ratio ``a``.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from ._validation import ValidationError, check_exponents, check_positive, check_positive_int
from .problem import Regime, regime_classify
from .schedules import IntrinsicProfile

__all__ = [
    "optimal_intrinsic_profile",
    "optimal_noise",
    "optimal_T",
    "surrogate_T",
    "WSDObjective",
    "wsd_objective_eval",
    "wsd_objective_exact",
    "wsd_profile",
    "wsd_minimize",
    "VariationalSolution",
    "solve",
    "BeltramiStats",
    "beltrami_residual",
    "solutions_to_csv",
]


def optimal_intrinsic_profile(T, N, beta) -> IntrinsicProfile:
    """``phi*(tau) = a (1 + T - tau)^(1 - 1/(2 beta))`` with ``a = (2 beta / N)((1 + T)^(1/(2 beta)) - 1)``.

    The constant makes the step budget ``int_0^T 1/phi* = N`` hold exactly.
    """
    T = check_positive("T", T)
    check_positive("N", N)
    check_exponents(1.0, beta)
    h = 1.0 / (2.0 * beta)
    a = (2.0 * beta / N) * math.expm1(h * math.log1p(T))
    q = 1.0 - h

    def lag(u):
        return a * (1.0 + np.asarray(u, dtype=float)) ** q

    def phi(tau):
        return lag(T - np.asarray(tau, dtype=float))

    return IntrinsicProfile(T=T, phi=phi, N=N, tail_exponent=0.0, phi_lag=lag, name="optimal")


def optimal_noise(T, N, beta) -> float:
    """Noise of the optimal profile, ``(int_0^T sqrt K)^2 / N = (2 beta)^2 ((1 + T)^(1/(2 beta)) - 1)^2 / N``."""
    h = 1.0 / (2.0 * beta)
    return (2.0 * beta) ** 2 * math.expm1(h * math.log1p(T)) ** 2 / N


def surrogate_T(s, beta, N) -> float:
    """Stationary point of ``T^-s + (2 beta)^2 T^(1/beta) / N``, the large-T form of the budget objective."""
    check_exponents(s, beta)
    return (s * beta * N / (2.0 * beta) ** 2) ** (beta / (s * beta + 1.0))


def optimal_T(s, beta, N, xtol=1e-10) -> float:
    """Minimize ``g(T) = (1 + T)^-s + optimal_noise(T, N, beta)`` over T > 0.

    Works in ``x = log T``: a bracket is found by stepping outward from the
    surrogate optimum, doubling the step, and then golden-section search
    polishes it.
    """
    check_exponents(s, beta)
    check_positive("N", N)
    s, beta = float(s), float(beta)

    def g(x):
        T = math.exp(x)
        return (1.0 + T) ** (-s) + optimal_noise(T, N, beta)

    x0 = math.log(surrogate_T(s, beta, N))
    lo, mid, hi = x0 - 1.0, x0, x0 + 1.0
    step = 1.0
    for _ in range(200):
        g_lo, g_mid, g_hi = g(lo), g(mid), g(hi)
        if g_mid <= g_lo and g_mid <= g_hi:
            break
        step *= 2.0
        if g_lo < g_mid:
            lo, mid, hi = lo - step, lo, mid
        else:
            lo, mid, hi = mid, hi, hi + step
    else:
        raise RuntimeError("optimal_T: bracket expansion did not converge in 200 doublings")
    res = minimize_scalar(g, bracket=(lo, mid, hi), method="golden", options={"xtol": xtol})
    return float(math.exp(res.x))


# -- hard regime: stable phase plus optimal decay -----------------------------


@dataclass(frozen=True)
class WSDObjective:
    """Loss of the stable-decay ansatz with unit stable level and ``N`` steps.

    ``r`` is the fraction of steps spent decaying; ``a_prime = a / (2 beta)``
    where ``a`` is the ratio of the decay-start rate to the stable level.
    """

    s: float
    beta: float
    N: float

    def __post_init__(self):
        check_exponents(self.s, self.beta)
        check_positive("N", self.N)

    @property
    def alpha(self) -> float:
        return 1.0 - 1.0 / self.beta

    def __call__(self, r, a_prime):
        return wsd_objective_eval(self, r, a_prime)


def _check_wsd_args(obj, r, a_prime):
    r = np.asarray(r, dtype=float)
    a_prime = np.asarray(a_prime, dtype=float)
    if np.any(r <= 0) or np.any(r > 1):
        raise ValidationError("decay fraction r must lie in (0, 1]")
    if np.any(a_prime <= 0) or np.any(a_prime > 1.0 / (2.0 * obj.beta) * (1 + 1e-12)):
        raise ValidationError("a_prime must lie in (0, 1/(2 beta)]")
    return r, a_prime


def wsd_objective_eval(obj: WSDObjective, r, a_prime):
    """Large-N form of the ansatz loss.

    ``N^-s B^-s + N^-alpha [(1/alpha + 4 beta^2 a') (a' r)^-alpha - (1/alpha) B^-alpha]``
    with ``B = 1 - r + a' r`` and ``alpha = 1 - 1/beta``. It drops the relative
    ``(1 + M)^(-1/(2 beta))`` corrections of the decay phase, with M its
    intrinsic length; ``wsd_objective_exact`` keeps them.
    """
    r, ap = _check_wsd_args(obj, r, a_prime)
    s, beta, N, al = obj.s, obj.beta, float(obj.N), obj.alpha
    B = 1.0 - r + ap * r
    out = N ** (-s) * B ** (-s) + N ** (-al) * (
        (1.0 / al + 4.0 * beta**2 * ap) * (ap * r) ** (-al) - B ** (-al) / al
    )
    return float(out) if out.ndim == 0 else out


def _decay_length(beta, a, steps):
    """Intrinsic length M of an optimal decay starting at rate a and lasting ``steps`` steps.

    Solves ``(2 beta / a)(1 + M)(1 - (1 + M)^(-1/(2 beta))) = steps``.
    """
    h = 1.0 / (2.0 * beta)
    target = math.log(steps * a / (2.0 * beta))

    def gap(lm):
        # log of the left side, in terms of lm = log(1 + M)
        return lm + math.log(-math.expm1(-h * lm)) - target

    lo, hi = 1e-300, max(1.0, target + 10.0)
    while gap(hi) < 0:
        hi *= 2.0
    return math.expm1(brentq(gap, lo, hi, xtol=1e-300, rtol=1e-15))


def wsd_objective_exact(obj: WSDObjective, r, a):
    """Exact functional of the ansatz profile: stable at 1 for ``(1 - r) N`` steps, then
    ``a ((1 + u) / (1 + M))^(1 - 1/(2 beta))`` in lag ``u`` over the last M intrinsic units.
    """
    check_positive("r", r)
    check_positive("a", a)
    s, beta, N, al = obj.s, obj.beta, float(obj.N), obj.alpha
    h = 1.0 / (2.0 * beta)
    M = _decay_length(beta, a, r * N)
    T = (1.0 - r) * N + M
    lm = math.log1p(M)
    stable = (math.exp(-al * lm) - (1.0 + T) ** (-al)) / al
    decay = 2.0 * beta * a * math.exp(-al * lm) * (-math.expm1(-h * lm))
    return (1.0 + T) ** (-s) + stable + decay


def wsd_profile(obj: WSDObjective, r, a, eta_stab=1.0) -> IntrinsicProfile:
    """Intrinsic-time profile of the ansatz with its stable level at ``eta_stab``.

    Scaling every rate by ``eta_stab`` at a fixed step count scales intrinsic
    time by the same factor, so ``phi(tau) = eta_stab * phi_1(tau / eta_stab)``.
    """
    N = float(obj.N)
    q = 1.0 - 1.0 / (2.0 * obj.beta)
    M = _decay_length(obj.beta, a, r * N)
    T = eta_stab * ((1.0 - r) * N + M)

    def lag(u):
        u = np.asarray(u, dtype=float) / eta_stab
        decay = a * ((1.0 + np.minimum(u, M)) / (1.0 + M)) ** q
        return eta_stab * np.where(u <= M, decay, 1.0)

    def phi(tau):
        return lag(T - np.asarray(tau, dtype=float))

    return IntrinsicProfile(
        T=T, phi=phi, N=N, tail_exponent=q, phi_lag=lag, name="wsd-ansatz", kinks=(eta_stab * M,)
    )


def _argmin_grid(values, r_axis, a_axis):
    """Minimum of a (len(a), len(r)) table; ties go to larger r, then larger a."""
    best = values.min()
    ia, ir = np.nonzero(values == best)
    order = np.lexsort((a_axis[ia], r_axis[ir]))
    k = order[-1]
    return ia[k], ir[k]


def wsd_minimize(s, beta, N, points=64, rounds=2, shrink=8.0, r_min=1e-8, a_min=1e-3, form="large_n"):
    """Minimize the stable-decay ansatz over ``(a, r)`` in ``(0, 1]^2``.

    A log-spaced grid of ``points`` per axis is refined ``rounds`` times, each
    time shrinking the log-window by ``shrink`` around the incumbent. ``form``
    selects ``"large_n"`` (``wsd_objective_eval``) or ``"exact"``.

    Returns ``(a_star, r_star, loss)``.
    """
    check_exponents(s, beta)
    if regime_classify(s, beta).regime is not Regime.HARD:
        raise ValidationError("wsd_minimize applies to the hard regime s < 1 - 1/beta")
    check_positive("N", N)
    points = check_positive_int("points", points, minimum=2)
    obj = WSDObjective(float(s), float(beta), float(N))
    two_beta = 2.0 * obj.beta
    lo_r = max(r_min, 1.0 / float(N))

    if form == "large_n":
        def table(r_axis, a_axis):
            return wsd_objective_eval(obj, r_axis[None, :], a_axis[:, None] / two_beta)
    elif form == "exact":
        def table(r_axis, a_axis):
            return np.array([[wsd_objective_exact(obj, r, a) for r in r_axis] for a in a_axis])
    else:
        raise ValidationError(f"unknown objective form {form!r}")

    log_r = (math.log(lo_r), 0.0)
    log_a = (math.log(a_min), 0.0)
    for round_ in range(rounds + 1):
        r_axis = np.exp(np.linspace(*log_r, points))
        a_axis = np.exp(np.linspace(*log_a, points))
        r_axis[-1] = min(r_axis[-1], 1.0)
        a_axis[-1] = min(a_axis[-1], 1.0)
        ia, ir = _argmin_grid(table(r_axis, a_axis), r_axis, a_axis)
        r_star, a_star = float(r_axis[ir]), float(a_axis[ia])
        if round_ == rounds:
            break
        half_r = (log_r[1] - log_r[0]) / (2.0 * shrink)
        half_a = (log_a[1] - log_a[0]) / (2.0 * shrink)
        cr, ca = math.log(r_star), math.log(a_star)
        log_r = (max(cr - half_r, math.log(lo_r)), min(cr + half_r, 0.0))
        log_a = (max(ca - half_a, math.log(a_min)), min(ca + half_a, 0.0))

    # The loss depends mostly on the product a * r, so the valley runs
    # diagonally across the grid and a grid step in r can hide the true a.
    # Polish by minimizing over r for each remaining a (profile in a).
    def value(r, a):
        return float(table(np.array([r]), np.array([a]))[0, 0])

    def best_r(a):
        span = max(log_r[1] - log_r[0], 1e-3)
        lo = max(math.log(r_star) - span, math.log(lo_r))
        hi = min(math.log(r_star) + span, 0.0)
        res = minimize_scalar(lambda x: value(math.exp(x), a), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-10})
        x = res.x if res.fun <= value(math.exp(hi), a) else hi
        return math.exp(x), value(math.exp(x), a)

    candidates = []
    for a in np.unique(np.concatenate([a_axis, [a_star, 1.0]])):
        r, v = best_r(float(a))
        candidates.append((v, r, float(a)))
    loss = min(c[0] for c in candidates)
    _, r_star, a_star = max((c for c in candidates if c[0] == loss), key=lambda c: (c[1], c[2]))
    # the upper edges (r = 1, a = 1) are legitimate optima; only the lower
    # edges signal a search window that is too narrow
    if r_star <= lo_r * (1 + 1e-6) or a_star <= a_min * (1 + 1e-6):
        warnings.warn(
            f"WSD minimizer on the lower grid edge (r={r_star:.3g}, a={a_star:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return a_star, r_star, loss


@dataclass(frozen=True)
class VariationalSolution:
    T_star: float
    profile: IntrinsicProfile
    loss: float
    a_star: Optional[float] = None
    r_star: Optional[float] = None
    regime: Regime = Regime.EASY

    @property
    def peak(self) -> float:
        return float(self.profile.lag(np.array(self.profile.T)))


def solve(s, beta, N, eta_stab=1.0) -> VariationalSolution:
    """Optimal schedule in intrinsic time.

    Easy regime: the unconstrained optimum ``phi*`` at ``T*``. Its peak may
    exceed ``eta_stab`` at small N; ``optimal_schedule`` clamps the
    step-domain version. Hard regime: the stable-decay minimizer with the
    stable level normalized to 1, then rescaled to ``eta_stab``.
    """
    check_exponents(s, beta)
    check_positive("N", N)
    info = regime_classify(s, beta)
    if info.regime is Regime.EASY:
        T = optimal_T(s, beta, N)
        loss = (1.0 + T) ** (-float(s)) + optimal_noise(T, N, beta)
        return VariationalSolution(T, optimal_intrinsic_profile(T, N, beta), loss, regime=info.regime)
    a, r, loss = wsd_minimize(s, beta, N)
    prof = wsd_profile(WSDObjective(float(s), float(beta), float(N)), r, a, eta_stab=eta_stab)
    return VariationalSolution(prof.T, prof, loss, a_star=a, r_star=r, regime=info.regime)


# -- diagnostics ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BeltramiStats:
    residual: float
    mean: float
    values: np.ndarray


def beltrami_residual(profile, T=None, beta=2.0, grid_size=1000) -> BeltramiStats:
    """Spread of ``B(tau) = -K(T - tau) phi(tau)^2`` along a profile.

    ``B`` is the conserved first integral of the Euler-Lagrange equation in
    intrinsic time, so it is constant on the optimum. Returns
    ``max |B - mean B| / |mean B|`` over a uniform grid on ``[0, T)``.
    """
    check_exponents(1.0, beta)
    T = float(profile.T if T is None else T)
    grid_size = check_positive_int("grid_size", grid_size, minimum=2)
    lag = T - np.linspace(0.0, T, grid_size, endpoint=False)
    B = -((1.0 + lag) ** (-(2.0 - 1.0 / beta))) * profile.lag(lag) ** 2
    mean = float(np.mean(B))
    if mean == 0.0:
        return BeltramiStats(math.inf, mean, B)
    return BeltramiStats(float(np.max(np.abs(B - mean)) / abs(mean)), mean, B)


def solutions_to_csv(rows, path=None):
    """CSV with columns N,T_star,a_star,r_star,loss from ``(N, VariationalSolution)`` pairs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["N", "T_star", "a_star", "r_star", "loss"])
    for N, sol in rows:
        writer.writerow([N, repr(sol.T_star), "" if sol.a_star is None else repr(sol.a_star),
                         "" if sol.r_star is None else repr(sol.r_star), repr(sol.loss)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
