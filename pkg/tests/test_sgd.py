import math

import numpy as np
import pytest

from fslsched import (
    DivergenceError,
    MomentState,
    ProblemSpec,
    ScheduleSpec,
    exact_moment_step,
    lower_bound_instance,
    materialize,
    run_exact,
    run_monte_carlo,
)
from fslsched.problem import Spectrum
from fslsched.schedules import ScheduleTrace
from fslsched.sgd import run_exact_grid


def _one_mode():
    return Spectrum(np.array([1.0]), np.array([1.0]))


def test_closure_single_mode_value():
    sp = _one_mode()
    new = exact_moment_step(MomentState.initial(sp), 0.1, sp, 1.0)
    # E[(1 - eta x^2)^2] = 1 - 2 eta + 3 eta^2 for x ~ N(0, 1), plus eta^2 sigma^2
    by_hand = (1 - 2 * 0.1 + 3 * 0.01) * 1.0 + 0.01 * 1.0
    assert new.m[0] == pytest.approx(by_hand, rel=1e-14)
    assert new.m[0] == pytest.approx(0.84, rel=1e-14)
    assert new.k == 1


def test_closure_against_monte_carlo():
    rng = np.random.default_rng(2024)
    eta, n = 0.1, 10**6
    x = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    u = -1.0
    u1 = u - eta * (u * x - eps) * x
    mean, se = np.mean(u1**2), np.std(u1**2) / math.sqrt(n)
    assert abs(mean - 0.84) <= 3 * se
    # the alternative closure value 0.85 is rejected by the same sample
    assert abs(mean - 0.85) > 3 * se


def test_zero_rate_is_identity():
    sp = ProblemSpec(1.0, 2.0, d=5).spectrum
    st = MomentState.initial(sp)
    np.testing.assert_array_equal(exact_moment_step(st, 0.0, sp, 1.0).m, st.m)


def test_noiseless_interpolation_fixed_point():
    sp = ProblemSpec(1.0, 2.0, d=5).spectrum
    st = MomentState(np.zeros(5), 0, sp.lambdas)
    np.testing.assert_array_equal(exact_moment_step(st, 0.2, sp, 0.0).m, 0.0)


def test_state_risk():
    sp = ProblemSpec(1.0, 2.0, d=5).spectrum
    st = MomentState.initial(sp)
    assert st.risk == pytest.approx(float(np.sum(sp.lambdas * sp.thetas**2)), rel=1e-12)


def test_zero_schedule_keeps_initial_risk():
    spec = ProblemSpec(1.0, 2.0, d=30)
    res = run_exact(spec, ScheduleTrace.from_etas(np.zeros(7)))
    j = np.arange(1, 31)
    assert res.final_risk == pytest.approx(np.sum(j ** -3.0), rel=1e-12)
    assert res.std_error == 0


def test_three_hand_steps():
    spec = ProblemSpec(1.0, 2.0, sigma2=1.0, d=2)
    lam = [1.0, 0.25]
    m = [1.0, 0.5]  # theta_j^2 = j^(beta - 1 - s beta) = j^-1
    eta = 0.1
    for _ in range(3):
        S = lam[0] * m[0] + lam[1] * m[1]
        m = [(1 - eta * l) ** 2 * mj + eta**2 * (l * S + l * l * mj + l) for l, mj in zip(lam, m)]
    res = run_exact(spec, materialize(ScheduleSpec("constant", eta, 3)))
    assert res.final_risk == pytest.approx(lam[0] * m[0] + lam[1] * m[1], rel=1e-14)


def test_stationary_noise_floor():
    spec = ProblemSpec(1.0, 2.0, d=6)
    lam = spec.spectrum.lambdas
    eta = 0.05
    # stationary point: m = A m + b with A = diag((1 - eta l)^2 + eta^2 l^2) + eta^2 l l^T
    A = np.diag((1 - eta * lam) ** 2 + eta**2 * lam**2) + eta**2 * np.outer(lam, lam)
    b = eta**2 * lam
    m_inf = np.linalg.solve(np.eye(6) - A, b)
    res = run_exact(spec, materialize(ScheduleSpec("constant", eta, 40_000)), record=True)
    assert res.final_risk == pytest.approx(float(lam @ m_inf), rel=1e-3)
    traj = res.trajectory[:, 2]
    late = traj[traj.size // 2 :]
    assert np.all(np.diff(late) <= 1e-15)


def test_monte_carlo_matches_exact():
    spec = ProblemSpec(1.0, 2.0, d=4, seed=9)
    tr = materialize(ScheduleSpec("constant", 0.05, 200))
    mc = run_monte_carlo(spec, tr, 20_000)
    ex = run_exact(spec, tr)
    assert mc.std_error > 0
    assert abs(mc.final_risk - ex.final_risk) <= 3 * mc.std_error


def test_monte_carlo_two_step_by_hand():
    seed = 17
    spec = ProblemSpec(1.0, 1.5, sigma2=0.5, d=1, seed=seed)
    tr = ScheduleTrace.from_etas([0.3, 0.2])
    res = run_monte_carlo(spec, tr, 1)
    # replay the documented stream: block 0, per step phi then eps
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    u = -spec.spectrum.thetas[0]
    for eta in tr.etas:
        phi = rng.standard_normal((1, 1))[0, 0]
        eps = rng.standard_normal(1)[0]
        u = u - eta * (u * phi - math.sqrt(0.5) * eps) * phi
    assert res.final_risk == pytest.approx(u * u, rel=1e-12)
    assert res.std_error == 0


def test_monte_carlo_deterministic_and_worker_invariant():
    spec = ProblemSpec(0.8, 2.0, d=3, seed=4)
    tr = materialize(ScheduleSpec("cosine", 0.1, 50))
    a = run_monte_carlo(spec, tr, 2500)
    b = run_monte_carlo(spec, tr, 2500)
    c = run_monte_carlo(spec, tr, 2500, workers=2)
    assert a.final_risk == b.final_risk == c.final_risk
    assert a.std_error == c.std_error


def test_divergence_guard():
    spec = ProblemSpec(1.0, 2.0, d=4)
    tr = materialize(ScheduleSpec("constant", 5.0, 600))
    with pytest.raises(DivergenceError):
        run_exact(spec, tr)
    with pytest.raises(DivergenceError):
        run_monte_carlo(spec, materialize(ScheduleSpec("constant", 5.0, 60)), 4)
    risks = run_exact_grid(spec, np.ones(600), [0.01, 5.0])
    assert np.isfinite(risks[0]) and np.isinf(risks[1])


def test_grid_runner_matches_single_runs():
    spec = ProblemSpec(1.0, 2.0, d=12)
    base = materialize(ScheduleSpec("power", 1.0, 300, gamma=2.0))
    grid = [0.02, 0.05, 0.1]
    risks = run_exact_grid(spec, base.etas, grid)
    for e, r in zip(grid, risks):
        assert r == pytest.approx(run_exact(spec, base.scaled(e)).final_risk, rel=1e-12)


@pytest.mark.parametrize("family", ["constant", "cosine", "one_minus_sqrt", "power"])
def test_uniformly_bounded_and_contracting(family):
    kw = {"gamma": 2.0} if family == "power" else {}
    for s, beta in [(0.8, 5.0), (0.5, 4.0), (1.2, 2.0)]:
        spec = ProblemSpec(s, beta, d=64)
        tr = materialize(ScheduleSpec(family, spec.eta_stab, 3000, **kw))
        res = run_exact(spec, tr, record=True)
        assert res.trajectory[:, 2].max() <= 4 * spec.spectrum.initial_risk
        clean = ProblemSpec(s, beta, sigma2=0.0, d=64)
        assert run_exact(clean, tr).final_risk <= clean.spectrum.initial_risk


def test_trajectory_csv(tmp_path):
    spec = ProblemSpec(1.0, 2.0, d=4)
    res = run_exact(spec, materialize(ScheduleSpec("cosine", 0.1, 100)), record=True)
    text = res.trajectory_csv(tmp_path / "traj.csv")
    lines = text.strip().splitlines()
    assert lines[0] == "step,t,risk"
    assert lines[1].startswith("0,") and lines[-1].startswith("100,")


def test_lower_bound_constant_rate_chain():
    s, beta, eta = 0.5, 4.0, 0.25
    tr = materialize(ScheduleSpec("constant", eta, 64))
    lb = lower_bound_instance(s, beta, tr)
    lam = lb.j_star ** -beta
    assert lam * lb.T <= s / 4 + 1e-12
    assert lb.bound >= 0.5 * lam**s * math.exp(-4 * lam * lb.T) * (1 - 1e-12)
    assert lb.bound >= 0.5 * lam**s * math.exp(-s)


def test_lower_bound_zero_schedule():
    tr = ScheduleTrace.from_etas(np.zeros(10))
    lb = lower_bound_instance(0.5, 4.0, tr)
    assert lb.bound == pytest.approx(0.5 * (lb.j_star ** -4.0) ** 0.5)


@pytest.mark.parametrize("family", ["constant", "cosine", "power"])
def test_lower_bound_below_exact_risk(family):
    kw = {"gamma": 2.0} if family == "power" else {}
    for N in (256, 2048, 8192):
        lb = lower_bound_instance(0.5, 4.0, materialize(ScheduleSpec(family, 0.2, N, **kw)))
        assert lb.exact_risk >= lb.bound


def test_lower_bound_j0_clause():
    # huge rates push j0 above the horizon-driven index
    tr = materialize(ScheduleSpec("constant", 1.0, 2))
    lb = lower_bound_instance(2.0, 2.0, tr)
    j0 = math.ceil((2 * 1.0) ** 0.5)
    assert lb.j_star >= j0
    assert (lb.j_star ** -2.0) * 1.0 <= 0.5
