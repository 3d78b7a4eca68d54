"""One-pass SGD on power-law linear regression.

Two engines run the same model: a seeded Monte Carlo simulation of the SGD
iterates, and an exact deterministic recursion for the per-coordinate second
moments of the error, which closes under Gaussian design.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import DivergenceError, ValidationError, check_exponents, check_positive, check_positive_int
from .problem import Spectrum
from .schedules import ScheduleSpec, ScheduleTrace, materialize

__all__ = [
    "MomentState",
    "RunResult",
    "LowerBound",
    "exact_moment_step",
    "run_exact",
    "run_exact_grid",
    "run_monte_carlo",
    "lower_bound_instance",
    "checkpoint_steps",
    "ScheduledSGDRegressor",
    "DIVERGENCE_FACTOR",
]

DIVERGENCE_FACTOR = 1e6
MC_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class MomentState:
    """Second moments ``m_j = E[(theta_j - theta*_j)^2]`` after ``k`` steps."""

    m: np.ndarray
    k: int
    lambdas: np.ndarray

    @property
    def risk(self) -> float:
        return float(np.dot(self.lambdas, self.m))

    @classmethod
    def initial(cls, spectrum):
        """Start from theta_0 = 0, so ``m_j = theta*_j^2``."""
        return cls(spectrum.thetas**2, 0, spectrum.lambdas)


def exact_moment_step(state: MomentState, eta, spectrum, sigma2) -> MomentState:
    """One step of the closed second-moment recursion under Gaussian design.

    ``m_j' = (1 - eta l_j)^2 m_j + eta^2 (l_j S + l_j^2 m_j + sigma2 l_j)`` with
    ``S = sum_i l_i m_i``. The fourth-moment term uses
    ``E[x_j^4] = 3 l_j^2``; two of the three cancel against the drift.
    """
    if eta < 0:
        raise ValidationError("learning rate must be non-negative")
    m = _moment_update(state.m, float(eta), spectrum.lambdas, float(sigma2))
    return MomentState(m, state.k + 1, state.lambdas)


def _moment_update(m, eta, lam, sigma2):
    S = m @ lam
    decay = (1.0 - eta * lam) ** 2
    if np.ndim(S) == 0:
        return decay * m + eta * eta * (lam * S + lam * lam * m + sigma2 * lam)
    return decay * m + (eta * eta) * (lam * S[:, None] + lam * lam * m + sigma2 * lam)


@dataclass(frozen=True, eq=False)
class RunResult:
    final_risk: float
    std_error: float = 0.0
    trajectory: Optional[np.ndarray] = field(default=None, repr=False)

    def trajectory_csv(self, path=None):
        """CSV with columns step,t,risk for the recorded checkpoints."""
        if self.trajectory is None:
            raise ValidationError("no trajectory was recorded for this run")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "t", "risk"])
        for step, t, risk in self.trajectory:
            writer.writerow([int(step), repr(float(t)), repr(float(risk))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def checkpoint_steps(N, count=64):
    """Roughly log-spaced step indices in [0, N], always including both ends."""
    steps = np.unique(np.round(np.geomspace(1, N, count)).astype(int))
    return np.concatenate([[0], steps])


def _spectrum_and_noise(spec):
    spectrum = getattr(spec, "spectrum", spec)
    sigma2 = getattr(spec, "sigma2", 1.0)
    return spectrum, sigma2


def run_exact(spec, trace: ScheduleTrace, record=False, sigma2=None) -> RunResult:
    """Apply the exact recursion along ``trace`` starting from theta_0 = 0.

    ``spec`` is a ``ProblemSpec`` or a bare ``Spectrum`` (then ``sigma2`` is
    taken from the argument, default 1). Raises ``DivergenceError`` once the
    risk exceeds ``1e6`` times its initial value.
    """
    spectrum, default_sigma2 = _spectrum_and_noise(spec)
    sigma2 = default_sigma2 if sigma2 is None else sigma2
    lam = spectrum.lambdas
    m = spectrum.thetas**2
    initial = float(lam @ m)
    limit = DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny)
    marks = set(checkpoint_steps(trace.N).tolist()) if record else ()
    traj = [(0, 0.0, initial)] if record else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k, eta in enumerate(trace.etas):
            m = _moment_update(m, eta, lam, sigma2)
            if (k & 255) == 255 or k + 1 == trace.N:
                risk = float(lam @ m)
                if not risk <= limit:
                    raise DivergenceError(
                        f"exact recursion diverged at step {k + 1}: risk {risk:.3g} exceeds "
                        f"{DIVERGENCE_FACTOR:g} x initial {initial:.3g}"
                    )
            if record and (k + 1) in marks:
                traj.append((k + 1, float(trace.t[k + 1]), float(lam @ m)))
    risk = float(lam @ m)
    return RunResult(risk, 0.0, np.array(traj) if record else None)


def run_exact_grid(spec, base_etas, eta0_grid, sigma2=None):
    """Final exact risks of ``eta0 * base_etas`` for every ``eta0`` in the grid.

    Rows are advanced together so a peak-rate sweep costs about one run.
    Diverging rows are reported as ``inf`` rather than raising.
    """
    spectrum, default_sigma2 = _spectrum_and_noise(spec)
    sigma2 = default_sigma2 if sigma2 is None else sigma2
    lam = spectrum.lambdas
    grid = np.asarray(eta0_grid, dtype=float)
    base = np.asarray(base_etas, dtype=float)
    m = np.tile(spectrum.thetas**2, (grid.size, 1))
    initial = float(lam @ m[0])
    limit = DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny)
    alive = np.ones(grid.size, dtype=bool)
    lam2 = lam * lam
    col = grid[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        for k, z in enumerate(base):
            e = col * z
            S = m @ lam
            m = (1.0 - e * lam) ** 2 * m + (e * e) * (lam * S[:, None] + lam2 * m + sigma2 * lam)
            if (k & 255) == 255:
                bad = ~((m @ lam) <= limit)
                if np.any(bad & alive):
                    alive &= ~bad
                    m[bad] = 0.0
        risks = m @ lam
    risks[~alive | ~(risks <= limit)] = np.inf
    return risks


def _mc_block(args):
    lam, thetas, etas, sigma2, seed, block, count = args
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    scale = np.sqrt(lam)
    sigma = math.sqrt(sigma2)
    u = np.tile(-thetas, (count, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for eta in etas:
            phi = rng.standard_normal((count, lam.size)) * scale
            eps = rng.standard_normal(count)
            resid = np.einsum("ij,ij->i", u, phi) - sigma * eps
            u -= (eta * resid)[:, None] * phi
    return (u * u) @ lam


def run_monte_carlo(spec, trace: ScheduleTrace, runs, seed=None, workers=1) -> RunResult:
    """Simulate ``runs`` independent one-pass SGD trajectories.

    Each step draws a fresh Gaussian feature vector and label noise. Runs are
    grouped in fixed blocks of 1024 whose streams derive from
    ``SeedSequence(seed, spawn_key=(block,))``, so the result is identical for
    any worker count.
    """
    runs = check_positive_int("runs", runs)
    workers = check_positive_int("workers", workers)
    spectrum, sigma2 = _spectrum_and_noise(spec)
    if seed is None:
        seed = getattr(spec, "seed", 0)
    jobs = []
    for block, start in enumerate(range(0, runs, MC_BLOCK)):
        count = min(MC_BLOCK, runs - start)
        jobs.append((spectrum.lambdas, spectrum.thetas, trace.etas, sigma2, int(seed), block, count))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_mc_block, jobs))
    else:
        parts = [_mc_block(job) for job in jobs]
    risks = np.concatenate(parts)
    initial = spectrum.initial_risk
    mean = float(np.mean(risks))
    if not mean <= DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny):
        raise DivergenceError(f"Monte Carlo mean risk {mean:.3g} exceeds {DIVERGENCE_FACTOR:g} x initial")
    se = float(np.std(risks, ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    return RunResult(mean, se)


class LowerBound(NamedTuple):
    j_star: int
    bound: float
    exact_risk: float
    T: float


def lower_bound_instance(s, beta, trace: ScheduleTrace, sigma2=1.0) -> LowerBound:
    """Single-mode adversarial target and its guaranteed risk.

    ``j* = max(j0, ceil((4T/s)^(1/beta)))`` with ``j0`` the first index whose
    curvature satisfies ``eta_max lambda_j <= 1/2``. The target has
    ``theta*_{j*}^2 = lambda_{j*}^(s-1)`` and no other component, and the
    bound is ``(1/2) lambda_{j*}^s prod_i (1 - eta_i lambda_{j*})^2``. The exact
    recursion is run on modes ``1..j*`` for comparison.
    """
    check_exponents(s, beta)
    s, beta = float(s), float(beta)
    T = trace.T
    eta_max = trace.eta_max
    j0 = max(1, math.ceil((2.0 * eta_max) ** (1.0 / beta) - 1e-12)) if eta_max > 0 else 1
    j_star = max(j0, math.ceil((4.0 * T / s) ** (1.0 / beta)))
    lam_star = float(j_star) ** (-beta)
    log_prod = 2.0 * np.sum(np.log1p(-trace.etas * lam_star))
    bound = 0.5 * lam_star**s * math.exp(log_prod)
    j = np.arange(1, j_star + 1, dtype=float)
    thetas = np.zeros(j_star)
    thetas[-1] = lam_star ** ((s - 1.0) / 2.0)
    spectrum = Spectrum(j ** (-beta), thetas)
    risk = run_exact(spectrum, trace, sigma2=sigma2).final_risk
    return LowerBound(j_star, bound, risk, T)


class ScheduledSGDRegressor(RegressorMixin, BaseEstimator):
    """Linear least squares fitted by a single pass of SGD under a schedule.

    Each row of ``X`` is consumed once, in order. The step size at row ``k``
    of ``N`` follows the named schedule family with peak ``eta0``.

    Parameters
    ----------
    schedule : str
        Family name (``constant``, ``cosine``, ``one_minus_sqrt``, ``power``, ``wsd``).
    eta0 : float
        Peak learning rate.
    gamma, r, a : float, optional
        Shape parameters for power and WSD families.
    fit_intercept : bool
        Center the data before the pass and recover an intercept.
    """

    def __init__(self, schedule="cosine", eta0=0.01, gamma=None, r=None, a=None, fit_intercept=True):
        self.schedule = schedule
        self.eta0 = eta0
        self.gamma = gamma
        self.r = r
        self.a = a
        self.fit_intercept = fit_intercept

    def _trace(self, n):
        spec = ScheduleSpec(self.schedule, eta0=self.eta0, N=n, gamma=self.gamma, r=self.r, a=self.a)
        return materialize(spec)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        check_positive("eta0", self.eta0)
        if self.fit_intercept:
            x_mean, y_mean = X.mean(axis=0), float(y.mean())
            X, y = X - x_mean, y - y_mean
        trace = self._trace(X.shape[0])
        w = np.zeros(X.shape[1])
        with np.errstate(over="ignore", invalid="ignore"):
            for eta, x, target in zip(trace.etas, X, y):
                w -= eta * (x @ w - target) * x
                if not np.all(np.isfinite(w)):
                    raise DivergenceError("SGD iterates overflowed; lower eta0")
        self.coef_ = w
        self.intercept_ = y_mean - float(x_mean @ w) if self.fit_intercept else 0.0
        self.n_features_in_ = X.shape[1]
        self.schedule_trace_ = trace
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_
