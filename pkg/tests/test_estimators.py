import numpy as np
import pytest
from sklearn.base import clone

from fslsched import DivergenceError, ValidationError
from fslsched.harness import LogLogRateFit, fit_rate
from fslsched.sgd import ScheduledSGDRegressor


def _data(n=4000, d=5, noise=0.1, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    return X, X @ w + 2.0 + noise * rng.standard_normal(n), w


def test_regressor_recovers_linear_model():
    X, y, w = _data()
    est = ScheduledSGDRegressor(schedule="cosine", eta0=0.05).fit(X, y)
    np.testing.assert_allclose(est.coef_, w, atol=0.05)
    assert est.intercept_ == pytest.approx(2.0, abs=0.05)
    assert est.score(X, y) > 0.99
    assert est.schedule_trace_.N == X.shape[0]


def test_regressor_without_intercept():
    X, y, w = _data(noise=0.0)
    est = ScheduledSGDRegressor(schedule="power", eta0=0.05, gamma=2.0, fit_intercept=False).fit(X, y - 2.0)
    assert est.intercept_ == 0.0
    np.testing.assert_allclose(est.coef_, w, atol=1e-3)


def test_regressor_wsd_schedule():
    X, y, w = _data()
    est = ScheduledSGDRegressor(schedule="wsd", eta0=0.05, r=0.2, gamma=1.0, a=1.0).fit(X, y)
    np.testing.assert_allclose(est.coef_, w, atol=0.05)


def test_regressor_params_and_clone():
    est = ScheduledSGDRegressor(schedule="power", eta0=0.1, gamma=3.0)
    params = est.get_params()
    assert params["gamma"] == 3.0 and params["schedule"] == "power"
    twin = clone(est).set_params(eta0=0.2)
    assert twin.eta0 == 0.2 and est.eta0 == 0.1
    assert not hasattr(twin, "coef_")


def test_regressor_errors():
    X, y, _ = _data(n=200)
    with pytest.raises(DivergenceError):
        ScheduledSGDRegressor(schedule="constant", eta0=50.0).fit(X, y)
    with pytest.raises(Exception):
        ScheduledSGDRegressor().predict(X)
    est = ScheduledSGDRegressor().fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :2])
    with pytest.raises(ValidationError):
        ScheduledSGDRegressor(eta0=-1.0).fit(X, y)


def test_rate_fit_estimator_matches_function():
    N = np.array([2.0**k for k in range(8, 16)])
    y = 5 * N**-0.66 * (1 + 1 / np.sqrt(N))
    est = LogLogRateFit(upper_fraction=0.5, min_points=4).fit(N, y)
    ref = fit_rate(zip(N, y), upper_half=True)
    assert est.slope_ == pytest.approx(ref.slope, rel=1e-12)
    assert est.n_points_ == ref.n_points == 4
    np.testing.assert_allclose(est.predict(N[-4:]), y[-4:], rtol=1e-3)
    assert est.to_rate_fit().slope == est.slope_


def test_rate_fit_accepts_column_matrix_and_clone():
    N = np.array([[10.0], [100.0], [1000.0]])
    est = clone(LogLogRateFit()).fit(N, [1.0, 0.1, 0.01])
    assert est.slope_ == pytest.approx(-1.0)
    assert est.r2_ == pytest.approx(1.0)


def test_rate_fit_rejects_bad_input():
    with pytest.raises(ValidationError):
        LogLogRateFit().fit([1, 2], [1.0])
    with pytest.raises(ValidationError):
        LogLogRateFit().fit([1, 2], [1.0, -1.0])
