"""Learning-rate schedule families, traces, and intrinsic-time profiles.

Every built-in family is fractional, ``eta_k = eta0 * zeta(k / N)``. Shapes
are written in terms of the *remaining* fraction ``w = 1 - x`` so that the
decay tail stays accurate when ``w`` is tiny (intrinsic times up to 1e30 are
used by the continuous FSL evaluator).
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from ._validation import ValidationError, check_exponents, check_positive, check_positive_int

__all__ = [
    "FAMILIES",
    "ScheduleSpec",
    "ScheduleTrace",
    "IntrinsicProfile",
    "materialize",
    "tail_exponent",
    "to_intrinsic_profile",
    "optimal_schedule",
    "optimal_decay_fraction",
    "parse_family",
]

FAMILIES = (
    "constant",
    "cosine",
    "one_minus_sqrt",
    "power",
    "wsd",
    "optimal_easy",
    "optimal_wsd",
)

_ALIASES = {
    "const": "constant",
    "cos": "cosine",
    "1-sqrt": "one_minus_sqrt",
    "one-minus-sqrt": "one_minus_sqrt",
    "sqrt": "one_minus_sqrt",
    "linear": "power",
}


# -- shapes -------------------------------------------------------------------


class _Shape:
    """Profile zeta on [0, 1] with zeta(0) = 1, addressed by w = 1 - x."""

    tail_exponent = 0.0

    def zeta_rem(self, w):
        raise NotImplementedError

    def mass_rem(self, w):
        """Integral of zeta over [1 - w, 1]."""
        raise NotImplementedError

    @property
    def rho1(self):
        return float(self.mass_rem(np.array(1.0)))

    def zeta(self, x):
        return self.zeta_rem(1.0 - np.asarray(x, dtype=float))

    def rho(self, x):
        return self.rho1 - self.mass_rem(1.0 - np.asarray(x, dtype=float))

    def remaining_for_mass(self, target):
        """Solve mass_rem(w) = target for w in [0, 1] by bisection.

        Tolerance is relative to w (1e-12) so tails far below machine epsilon
        of 1 resolve correctly.
        """
        target = np.asarray(target, dtype=float)
        lo = np.zeros_like(target)
        hi = np.ones_like(target)
        for _ in range(1100):
            mid = 0.5 * (lo + hi)
            below = self.mass_rem(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-12 * hi):
                break
        return 0.5 * (lo + hi)

    def zeta_tilde_rem(self, delta):
        """Intrinsic-time profile at y = 1 - delta."""
        w = self.remaining_for_mass(np.asarray(delta, dtype=float) * self.rho1)
        return self.zeta_rem(w)


class _Constant(_Shape):
    tail_exponent = 0.0

    def zeta_rem(self, w):
        return np.ones_like(np.asarray(w, dtype=float))

    def mass_rem(self, w):
        return np.asarray(w, dtype=float)

    def zeta_tilde_rem(self, delta):
        return np.ones_like(np.asarray(delta, dtype=float))


class _Cosine(_Shape):
    tail_exponent = 2.0

    def zeta_rem(self, w):
        return np.sin(0.5 * np.pi * np.asarray(w, dtype=float)) ** 2

    def mass_rem(self, w):
        w = np.asarray(w, dtype=float)
        pw = np.pi * w
        # w/2 - sin(pi w)/(2 pi) cancels catastrophically for small w
        series = (pw**3 / 12.0 - pw**5 / 240.0 + pw**7 / 10080.0) / np.pi
        exact = 0.5 * w - np.sin(pw) / (2.0 * np.pi)
        return np.where(w < 1e-2, series, exact)


class _OneMinusSqrt(_Shape):
    tail_exponent = 1.0

    def zeta_rem(self, w):
        w = np.asarray(w, dtype=float)
        return w / (1.0 + np.sqrt(1.0 - w))

    def mass_rem(self, w):
        w = np.asarray(w, dtype=float)
        series = w**2 / 4.0 + w**3 / 24.0 + w**4 / 64.0
        exact = w - (2.0 / 3.0) * (1.0 - (1.0 - w) ** 1.5)
        return np.where(w < 1e-3, series, exact)


class _StableDecay(_Shape):
    """Level 1 for w >= r, then a * ((eps + w/r) / (1 + eps))^gamma.

    Power(gamma) is r=1, a=1, eps=0. The optimal schedules use eps > 0.
    """

    def __init__(self, r=1.0, gamma=1.0, a=1.0, eps=0.0):
        self.r = float(r)
        self.gamma = float(gamma)
        self.a = float(a)
        self.eps = float(eps)
        self.tail_exponent = self.gamma

    def zeta_rem(self, w):
        w = np.asarray(w, dtype=float)
        v = np.minimum(w, self.r) / self.r
        decay = self.a * ((self.eps + v) / (1.0 + self.eps)) ** self.gamma
        return np.where(w >= self.r, 1.0, decay)

    def _decay_mass(self, v):
        g1 = self.gamma + 1.0
        if self.eps > 0.0:
            grown = self.eps**g1 * np.expm1(g1 * np.log1p(v / self.eps))
        else:
            grown = v**g1
        return self.a * self.r * grown / (g1 * (1.0 + self.eps) ** self.gamma)

    def mass_rem(self, w):
        w = np.asarray(w, dtype=float)
        v = np.minimum(w, self.r) / self.r
        return self._decay_mass(v) + np.maximum(w - self.r, 0.0)

    def zeta_tilde_rem(self, delta):
        if self.r == 1.0 and self.eps == 0.0:
            return self.a * np.asarray(delta, dtype=float) ** (self.gamma / (self.gamma + 1.0))
        return super().zeta_tilde_rem(delta)


# -- specs and traces ---------------------------------------------------------


def parse_family(text):
    """Parse ``"power:4.2"``, ``"wsd:0.2:2:1"`` (r, gamma, a) or a bare name.

    Returns a dict of ScheduleSpec keyword arguments (without eta0 and N).
    """
    parts = [p.strip() for p in str(text).strip().split(":")]
    name = _ALIASES.get(parts[0].lower(), parts[0].lower())
    if name not in FAMILIES:
        raise ValidationError(f"unknown schedule family {parts[0]!r}")
    args = [float(p) for p in parts[1:]]
    if parts[0].lower() == "linear" and not args:
        args = [1.0]
    if name == "power":
        if len(args) != 1:
            raise ValidationError("power family needs one exponent, e.g. power:2")
        return {"family": name, "gamma": args[0]}
    if name == "wsd":
        if len(args) != 3:
            raise ValidationError("wsd family needs r:gamma:a, e.g. wsd:0.2:2:1")
        return {"family": name, "r": args[0], "gamma": args[1], "a": args[2]}
    if args:
        raise ValidationError(f"family {name!r} takes no parameters")
    return {"family": name}


@dataclass(frozen=True)
class ScheduleSpec:
    """Symbolic schedule: family, peak rate ``eta0``, horizon ``N`` and shape parameters.

    ``r`` is the decay fraction of WSD-type families and ``a`` the ratio of
    the decay-phase start to the stable level. ``eps`` is the offset of the
    optimal schedules' power decay.
    """

    family: str
    eta0: float
    N: int
    gamma: Optional[float] = None
    r: Optional[float] = None
    a: Optional[float] = None
    eps: Optional[float] = None

    def __post_init__(self):
        fam = _ALIASES.get(str(self.family).lower(), str(self.family).lower())
        if fam not in FAMILIES:
            raise ValidationError(f"unknown schedule family {self.family!r}")
        object.__setattr__(self, "family", fam)
        check_positive_int("N", self.N)
        check_positive("eta0", self.eta0)
        if fam in ("power", "wsd", "optimal_easy", "optimal_wsd"):
            if self.gamma is None:
                raise ValidationError(f"family {fam!r} requires gamma")
            if not self.gamma > 0:
                raise ValidationError(f"gamma must be > 0, got {self.gamma}")
        if fam in ("wsd", "optimal_wsd"):
            if self.r is None or not 0 < self.r <= 1:
                raise ValidationError(f"decay fraction r must be in (0, 1], got {self.r}")
            a = 1.0 if self.a is None else self.a
            if not 0 < a <= 1:
                raise ValidationError(f"peak ratio a must be in (0, 1], got {self.a}")
        if self.eps is not None and self.eps < 0:
            raise ValidationError("eps must be >= 0")

    @property
    def tail_exponent(self) -> float:
        return tail_exponent(self)

    @property
    def label(self) -> str:
        if self.family == "power":
            return f"power:{self.gamma:g}"
        if self.family == "wsd":
            return f"wsd:{self.r:g}:{self.gamma:g}:{1.0 if self.a is None else self.a:g}"
        return self.family

    def snapped(self):
        """Copy with the decay fraction rounded onto the step grid.

        The stable phase covers steps ``k <= N1`` with ``N1 = round((1 - r) N)``,
        clipped so that at least one step decays.
        """
        if self.family not in ("wsd", "optimal_wsd"):
            return self
        N = self.N
        n1 = int(math.floor((1.0 - self.r) * N + 0.5))
        n1 = min(max(n1, 0), max(N - 2, 0))
        r_eff = (N - n1) / N
        return replace(self, r=r_eff)

    def shape(self) -> _Shape:
        fam = self.family
        if fam == "constant":
            return _Constant()
        if fam == "cosine":
            return _Cosine()
        if fam == "one_minus_sqrt":
            return _OneMinusSqrt()
        if fam == "power":
            return _StableDecay(1.0, self.gamma, 1.0, 0.0)
        if fam == "optimal_easy":
            return _StableDecay(1.0, self.gamma, 1.0, self.eps or 0.0)
        spec = self.snapped()
        a = 1.0 if spec.a is None else spec.a
        return _StableDecay(spec.r, spec.gamma, a, spec.eps or 0.0)


@dataclass(frozen=True, eq=False)
class ScheduleTrace:
    """Per-step rates ``etas[k]`` and cumulative intrinsic times ``t[k]`` (length N + 1)."""

    etas: np.ndarray
    t: np.ndarray
    spec: Optional[ScheduleSpec] = None

    @property
    def N(self) -> int:
        return self.etas.size

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def eta_max(self) -> float:
        return float(self.etas.max()) if self.etas.size else 0.0

    @classmethod
    def from_etas(cls, etas, spec=None):
        etas = np.asarray(etas, dtype=float)
        if etas.ndim != 1 or etas.size == 0:
            raise ValidationError("a trace needs a non-empty 1-D array of rates")
        if np.any(etas < 0) or not np.all(np.isfinite(etas)):
            raise ValidationError("learning rates must be finite and non-negative")
        t = np.empty(etas.size + 1)
        t[0] = 0.0
        np.cumsum(etas, out=t[1:])
        return cls(etas, t, spec)

    def scaled(self, factor):
        """Trace with every rate multiplied by ``factor`` (fractional families re-peaked)."""
        spec = None if self.spec is None else replace(self.spec, eta0=self.spec.eta0 * factor)
        return ScheduleTrace(self.etas * factor, self.t * factor, spec)

    def to_csv(self, path=None):
        """Two-column CSV (step, eta). Returns the text when ``path`` is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "eta"])
        for k, eta in enumerate(self.etas):
            writer.writerow([k, repr(float(eta))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def materialize(spec: ScheduleSpec) -> ScheduleTrace:
    """Evaluate ``eta_k = eta0 * zeta(k / N)`` for k = 0..N-1."""
    N = spec.N
    w = (N - np.arange(N, dtype=float)) / N
    etas = spec.eta0 * spec.shape().zeta_rem(w)
    return ScheduleTrace.from_etas(etas, spec.snapped())


def tail_exponent(family, gamma=None) -> float:
    """Power-tail exponent of a family (``zeta(x) ~ (1 - x)^gamma`` near x = 1)."""
    if isinstance(family, ScheduleSpec):
        family, gamma = family.family, family.gamma
    fam = _ALIASES.get(str(family).lower(), str(family).lower())
    if fam == "constant":
        return 0.0
    if fam == "cosine":
        return 2.0
    if fam == "one_minus_sqrt":
        return 1.0
    if fam in ("power", "wsd", "optimal_easy", "optimal_wsd"):
        if gamma is None:
            raise ValidationError(f"family {fam!r} requires gamma")
        return float(gamma)
    raise ValidationError(f"unknown schedule family {family!r}")


# -- intrinsic time -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IntrinsicProfile:
    """Learning rate as a function of intrinsic time on [0, T].

    ``phi_lag(u)`` evaluates ``phi(T - u)``; profiles built here compute it
    directly from the tail so it stays accurate for huge T. ``kinks`` lists
    lags where phi has a slope discontinuity, so quadrature can split there.
    """

    T: float
    phi: Callable
    N: Optional[float] = None
    tail_exponent: Optional[float] = None
    phi_lag: Optional[Callable] = None
    name: str = ""
    kinks: Tuple[float, ...] = ()

    def __call__(self, tau):
        return self.phi(np.asarray(tau, dtype=float))

    def lag(self, u):
        u = np.asarray(u, dtype=float)
        if self.phi_lag is not None:
            return self.phi_lag(u)
        return self.phi(self.T - u)

    def budget(self) -> float:
        """Steps consumed, the integral of 1/phi over [0, T]."""
        return lag_quad(lambda u: 1.0 / self.lag(u), self.T, scale=self.T, kinks=self.kinks)


def lag_quad(f, T, scale=1.0, epsrel=1e-10, kinks=()):
    """Integrate ``f(u)`` over [0, T] on geometrically spaced panels.

    Panels start at ``1e-6 * min(scale, T)`` so integrands that vary on both
    an O(1) and an O(T) scale are resolved; ``kinks`` become extra edges.
    """
    from scipy.integrate import quad

    if T <= 0:
        return 0.0
    lo = 1e-6 * min(scale, 1.0, T)
    decades = max(math.log10(T / lo), 1.0)
    edges = np.concatenate([[0.0], np.geomspace(lo, T, int(math.ceil(2 * decades)) + 1)])
    edges[-1] = T
    inner = [k for k in kinks if 0.0 < k < T]
    if inner:
        edges = np.unique(np.concatenate([edges, inner]))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += quad(lambda u: float(f(u)), a, b, limit=200, epsrel=epsrel, epsabs=0.0)[0]
    return total


def to_intrinsic_profile(spec: ScheduleSpec) -> IntrinsicProfile:
    """Map a fractional step-domain schedule to ``phi(tau) = eta0 * zeta_tilde(tau / T)``.

    ``zeta_tilde(y) = zeta(rho^-1(y rho_1))`` with ``rho(x) = int_0^x zeta``;
    ``T = eta0 * N * rho_1`` is the continuous intrinsic horizon.
    """
    spec = spec.snapped()
    shape = spec.shape()
    rho1 = shape.rho1
    if not rho1 > 0:
        raise ValidationError("degenerate profile: zeta integrates to zero")
    eta0 = spec.eta0
    T = eta0 * spec.N * rho1

    def phi_lag(u):
        delta = np.clip(np.asarray(u, dtype=float) / T, 0.0, 1.0)
        return eta0 * shape.zeta_tilde_rem(delta)

    def phi(tau):
        return phi_lag(T - np.asarray(tau, dtype=float))

    gamma = shape.tail_exponent
    r = getattr(shape, "r", 1.0)
    kinks = (float(eta0 * spec.N * shape.mass_rem(np.array(r))),) if r < 1.0 else ()
    return IntrinsicProfile(
        T=T,
        phi=phi,
        N=spec.N,
        tail_exponent=gamma / (gamma + 1.0),
        phi_lag=phi_lag,
        name=spec.label,
        kinks=kinks,
    )


# -- optimal schedules --------------------------------------------------------


def optimal_decay_fraction(s, beta, N, constant=1.0):
    """Hard-regime decay fraction ``c * N^-((1 - 1/beta - s) / (2 - 1/beta))``, unclamped."""
    check_exponents(s, beta)
    kappa = ((1.0 - 1.0 / beta) - s) / (2.0 - 1.0 / beta)
    return constant * float(N) ** (-kappa)


def _offset_for_peak(peak, steps, beta):
    """Offset eps of the fixed-budget optimum over ``steps`` steps whose first rate is ``peak``.

    The optimum has first rate ``(2 beta / M)(A - 1) A^(2 beta - 1)`` with
    ``A = (1 + T)^(1/(2 beta))``; solve for A, then ``eps = 1 / (A - 1)``.
    """
    from scipy.optimize import brentq

    target = peak * steps / (2.0 * beta)
    p = 2.0 * beta - 1.0

    def gap(log_excess):
        x = math.exp(log_excess)
        return math.log(x) + p * math.log1p(x) - math.log(target)

    lo, hi = -200.0, 200.0
    x = math.exp(brentq(gap, lo, hi, xtol=1e-14))
    return 1.0 / x


def optimal_schedule(s, beta, N, eta_stab=1.0, peak_constant=1.0, decay_constant=1.0):
    """Schedules that minimize the FSL functional under the peak bound.

    Easy regime: ``eta_peak * ((1 + eps - z/N) / (1 + eps))^(2 beta - 1)`` with
    ``eps = ((1 + T*)^(1/(2 beta)) - 1)^-1``. The peak is
    ``min(eta_stab, peak_constant * N^-nu)``; ``peak_constant=None`` uses the
    peak of the variational solution at T* instead.

    Hard regime: WSD at level ``eta_stab`` with decay fraction
    ``decay_constant * N^-kappa`` and the fixed-budget optimal tail over the
    decay steps.

    Returns ``(spec, trace)``.
    """
    from .problem import Regime, regime_classify
    from .variational import optimal_T

    check_exponents(s, beta)
    N = check_positive_int("N", N, minimum=2)
    check_positive("eta_stab", eta_stab)
    p = 2.0 * beta - 1.0
    if regime_classify(s, beta).regime is Regime.EASY:
        T_star = optimal_T(s, beta, N)
        A = (1.0 + T_star) ** (1.0 / (2.0 * beta))
        eps = 1.0 / (A - 1.0)
        if peak_constant is None:
            peak = (2.0 * beta / N) * (A - 1.0) * A**p
        else:
            nu = (1.0 + s * beta - beta) / (1.0 + s * beta)
            peak = peak_constant * float(N) ** (-nu)
        if peak > eta_stab:
            warnings.warn(
                f"optimal peak {peak:.4g} exceeds eta_stab={eta_stab:.4g}; clamped",
                RuntimeWarning,
                stacklevel=2,
            )
            peak = eta_stab
        spec = ScheduleSpec("optimal_easy", eta0=peak, N=N, gamma=p, eps=eps)
    else:
        r = optimal_decay_fraction(s, beta, N, decay_constant)
        if not 0 < r <= 1:
            warnings.warn(f"decay fraction {r:.4g} clamped to (0, 1]", RuntimeWarning, stacklevel=2)
            r = min(max(r, 1.0 / N), 1.0)
        spec = ScheduleSpec("optimal_wsd", eta0=eta_stab, N=N, gamma=p, r=r, a=1.0).snapped()
        steps = spec.r * N
        spec = replace(spec, eps=_offset_for_peak(eta_stab, steps, beta))
    return spec, materialize(spec)
