import math
import warnings

import numpy as np
import pytest

from fslsched import ProblemSpec, ValidationError
from fslsched.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    SweepRow,
    emit_plot_script,
    eta0_grid,
    fit_rate,
    fit_table,
    load_config,
    log_int_grid,
    read_table,
    sweep,
    tune_peak_lr,
)


def _config(engine="fsl", families=("cosine", "power:2"), Ns=(1000, 2000, 4000, 8000), points=9, **kw):
    P = ProblemSpec(0.8, 5.0, d=32, seed=kw.pop("seed", 0))
    return ExperimentConfig(P, tuple(families), tuple(Ns), tuple(eta0_grid(P.eta_stab, points)), engine=engine, **kw)


def test_fit_exact_power_law():
    pts = [(2**k, 3 * (2**k) ** -0.8) for k in range(10, 17)]
    fit = fit_rate(pts)
    assert fit.slope == pytest.approx(-0.8, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 7


def test_fit_two_points():
    assert fit_rate([(10, 1.0), (100, 0.1)]).slope == pytest.approx(-1.0)


def test_fit_noisy():
    rng = np.random.default_rng(5)
    N = np.logspace(2, 7, 30)
    y = N**-0.5 * rng.uniform(0.9, 1.1, N.size)
    fit = fit_rate(zip(N, y))
    assert fit.slope == pytest.approx(-0.5, abs=0.05)
    assert fit.r2 > 0.98


def test_fit_rejects_bad_points():
    with pytest.raises(ValidationError):
        fit_rate([(10, 1.0), (100, 0.0)])
    with pytest.raises(ValidationError):
        fit_rate([(10, 1.0)])


def test_fit_upper_half_rule():
    pts = [(2**k, (2**k) ** -0.5 * (1 + 2 ** (-k / 2))) for k in range(10, 18)]
    fit = fit_rate(pts, upper_half=True)
    assert fit.n_points == 4
    fit6 = fit_rate(pts[:6], upper_half=True)
    assert fit6.n_points == 4  # half of 6 is 3, the floor of 4 points wins


def test_eta0_grid_default():
    g = eta0_grid(0.25)
    assert len(g) == 21 and g[-1] == 0.25
    assert g[0] == pytest.approx(0.25 / 1024)
    np.testing.assert_allclose(np.diff(np.log(g)), math.log(math.sqrt(2)))


def test_log_int_grid():
    g = log_int_grid(1e3, 1e7, 9)
    assert g[0] == 1000 and g[-1] == 10**7 and g == sorted(set(g))


def test_tune_single_point_grid_warns():
    P = ProblemSpec(0.8, 5.0, d=16)
    cfg = ExperimentConfig(P, ("cosine",), (1000,), (P.eta_stab / 2,), engine="fsl")
    with pytest.warns(RuntimeWarning):
        res = tune_peak_lr(cfg, "cosine", 1000)
    assert res.eta0_star == P.eta_stab / 2


def test_tune_ties_go_to_smaller_rate(monkeypatch):
    import fslsched.harness as h

    cfg = _config()
    flat = lambda config, family, N: (np.array([1.0, 0.5, 0.5, 2.0, 3, 4, 5, 6, 7]), np.zeros(9), np.ones(9))
    monkeypatch.setattr(h, "_grid_losses", flat)
    res = tune_peak_lr(cfg, "cosine", 1000)
    assert res.eta0_star == cfg.eta0_grid[1]


def test_tuned_loss_is_grid_minimum():
    cfg = _config(engine="exact")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = tune_peak_lr(cfg, "cosine", 2000)
    assert np.all(res.loss <= res.losses)


def test_easy_regime_peak_rate_slope():
    s, beta = 1.2, 2.0
    P = ProblemSpec(s, beta, d=64)
    ratio = 2**0.25
    Ns = [int(n) for n in np.logspace(8, 16, 9)]
    cfg = ExperimentConfig(P, ("power:3",), tuple(Ns), tuple(eta0_grid(P.eta_stab, 90, ratio)), engine="fsl-quad")
    pts = [(N, tune_peak_lr(cfg, "power:3", N).eta0_star) for N in Ns]
    alpha = min(beta, 4.0)
    predicted = -(s - 1 + 1 / alpha) / (s + 1 / alpha)
    assert fit_rate(pts).slope == pytest.approx(predicted, abs=0.02)


def test_hard_regime_peak_rate_flat():
    P = ProblemSpec(0.5, 4.0, d=64)
    Ns = [2**k for k in range(12, 18)]
    cfg = ExperimentConfig(P, ("power:2",), tuple(Ns), tuple(eta0_grid(P.eta_stab)), engine="fsl")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pts = [(N, tune_peak_lr(cfg, "power:2", N).eta0_star) for N in Ns]
    assert fit_rate(pts).slope == pytest.approx(0.0, abs=0.05)
    assert all(e == P.eta_stab for _, e in pts)


def test_sweep_empty_grid(tmp_path):
    out = tmp_path / "s.csv"
    cfg = _config(Ns=())
    assert sweep(cfg, output=str(out)) == []
    assert not out.exists()


def test_sweep_rerun_byte_identical(tmp_path):
    out = tmp_path / "s.csv"
    cfg = _config()
    rows = sweep(cfg, output=str(out))
    first = out.read_bytes()
    assert len(rows) == 8
    again = sweep(cfg, output=str(out))
    assert out.read_bytes() == first
    assert again == rows
    fresh = tmp_path / "fresh.csv"
    sweep(cfg, output=str(fresh), resume=False)
    assert fresh.read_bytes() == first


def test_sweep_resume_skips_done_cells(tmp_path, monkeypatch):
    import fslsched.harness as h

    out = tmp_path / "s.csv"
    sweep(_config(Ns=(1000, 2000)), output=str(out))
    calls = []
    real = h._run_cell
    monkeypatch.setattr(h, "_run_cell", lambda job: calls.append(job[1:]) or real(job))
    rows = sweep(_config(Ns=(1000, 2000, 4000)), output=str(out))
    assert sorted(calls) == [("cosine", 4000), ("power:2", 4000)]
    assert [r.N for r in rows] == [1000, 2000, 4000, 1000, 2000, 4000]


def test_sweep_worker_count_invariant(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sweep(_config(engine="exact"), output=str(a))
    sweep(_config(engine="exact", workers=2), output=str(b))
    assert a.read_bytes() == b.read_bytes()


def test_sweep_engine_error_contract(tmp_path):
    rows = sweep(_config(engine="monte_carlo", families=("cosine",), Ns=(64, 128), points=3, runs=50), output=None)
    assert all(r.std_error > 0 for r in rows)
    rows = sweep(_config(engine="exact", families=("cosine",), Ns=(64, 128), points=3), output=None)
    assert all(r.std_error == 0 for r in rows)


def test_sweep_csv_columns(tmp_path):
    out = tmp_path / "s.csv"
    sweep(_config(families=("cosine",), Ns=(1000, 2000)), output=str(out))
    header = out.read_text().splitlines()[0]
    assert tuple(header.split(",")) == CSV_COLUMNS
    rows = read_table(out)
    assert rows[0].family == "cosine" and rows[0].gamma == 2.0 and rows[0].engine == "fsl"


def test_read_table_reports_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(",".join(CSV_COLUMNS) + "\ncosine,2.0,notanint,1,1,1,0,fsl,0\n")
    with pytest.raises(ValidationError, match=":2:"):
        read_table(p)


def test_fit_table_families():
    rows = [SweepRow(f, 1.0, N, 0.1, 1.0, N**-0.5 * (2 if f == "b" else 1), 0.0, "fsl", 0)
            for f in ("a", "b") for N in (10, 100, 1000, 10_000, 100_000)]
    fits = fit_table(rows)
    assert set(fits) == {"a", "b"}
    assert fits["a"].slope == pytest.approx(-0.5) and fits["a"].n_points == 4
    assert fit_table(rows, full=True)["b"].n_points == 5


def test_load_config_ini_and_overrides(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[problem]\ns = 0.8\nbeta = 5\n\n[schedules]\nfamilies = power:4.2, cosine\n\n"
        "[grid]\nN_min = 4096\nN_max = 131072\nN_points = 6\n\n[engine]\nengine = exact\n\n[output]\noutput = out.csv\n"
    )
    cfg = load_config(str(ini))
    assert cfg.families == ("power:4.2", "cosine")
    assert cfg.N_grid == tuple(2**k for k in range(12, 18))
    assert cfg.problem.d == 106
    assert cfg.problem.eta_stab == pytest.approx(1 / (4 * np.sum(np.arange(1, 107.0) ** -5)))
    assert len(cfg.eta0_grid) == 21 and cfg.eta0_grid[-1] == cfg.problem.eta_stab
    cfg2 = load_config(str(ini), {"engine": "fsl", "N": "100, 200", "d": "20", "seed": "3"})
    assert cfg2.engine == "fsl" and cfg2.N_grid == (100, 200) and cfg2.problem.d == 20 and cfg2.seed == 3


def test_load_config_errors(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[problem]\ns = 0.8\nbeta = 5\nbogus = 1\n")
    with pytest.raises(ValidationError):
        load_config(str(ini))
    with pytest.raises(ValidationError):
        load_config(None, {"s": "0.8"})
    with pytest.raises(ValidationError):
        load_config(None, {"s": "0.8", "beta": "5", "engine": "warp"})
    with pytest.raises(ValidationError):
        load_config(None, {"s": "0.8", "beta": "5", "N": "200 100"})


def test_config_rejects_rates_above_stability():
    P = ProblemSpec(0.8, 5.0, d=16)
    with pytest.raises(ValidationError):
        ExperimentConfig(P, ("cosine",), (100,), (P.eta_stab * 2,))


def _rows():
    return [SweepRow(f, 2.0, N, 0.1, 1.0, N**-0.7, 0.0, "fsl", 0) for f in ("cosine", "power:4.2") for N in (100, 1000)]


def test_plot_script_series_and_guides():
    script = emit_plot_script(_rows(), guides=[-0.8, (-0.70588, "12/17")])
    ns = {}
    exec(compile(script, "plot.py", "exec"), ns)
    assert len(ns["SERIES"]) == 2
    assert len(ns["GUIDES"]) == 2
    assert "-0.8" in script
    assert (ns["X_LABEL"], ns["Y_LABEL"]) == ("N", "loss")


def test_plot_script_custom_axes_and_errors():
    script = emit_plot_script(_rows(), axes=("N", "eta0_star"))
    assert "'eta0_star'" in script
    with pytest.raises(ValidationError):
        emit_plot_script([])
    with pytest.raises(ValidationError):
        emit_plot_script(_rows(), axes=("N", "nope"))
