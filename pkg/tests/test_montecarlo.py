import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedgelab import montecarlo as mc
from hedgelab.analytics import OptionSpec, PricingInputs, bs_quote
from hedgelab.errors import DegenerateError, DomainError, WeightOverflowError
from hedgelab.hedging import variance_below

ATM = 10.450583572185565


def cfg(strike=100.0, spot=100.0, n=40_000, steps=10, seed=11, kind="call"):
    return mc.McConfig(spot=spot, option=OptionSpec(strike, 1.0, kind), rate=0.05, vol=0.2, n_paths=n,
                       steps=steps, master_seed=seed)


def bs(c):
    return bs_quote(PricingInputs(c.spot, c.rate, c.vol, c.option.maturity), c.option).price


def test_drift_spec():
    d = mc.DriftSpec(2, (1.0, -1.0, 0.5))
    u = (np.arange(4) + 0.5) / 4
    assert np.allclose(d.vector(4), 1 - u + 0.5 * u * u)
    assert mc.DriftSpec.zero(1).coeffs == (0.0, 0.0)
    with pytest.raises(DomainError):
        mc.DriftSpec(3, (0, 0, 0, 0))
    with pytest.raises(DomainError):
        mc.DriftSpec(1, (0.0,))


def test_config_validation():
    with pytest.raises(DomainError):
        cfg(n=1)
    with pytest.raises(DomainError):
        mc.McConfig(100, OptionSpec(100, 1), 0.05, 0.0, 100)
    assert mc.McConfig(100, OptionSpec(100, 1), 0.05, 0.0, 100, degenerate=True).vol == 0


def test_zero_vol_estimate_is_exact():
    c = mc.McConfig(100, OptionSpec(90, 1), 0.05, 0.0, 1000, degenerate=True)
    est = mc.mc_basic(c)
    assert est.value == pytest.approx(100 - 90 * math.exp(-0.05), rel=1e-12)
    assert est.std_error == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("name", ["basic", "antithetic", "cv", "is0"])
@pytest.mark.parametrize("strike,kind", [(100.0, "call"), (120.0, "put")])
def test_estimators_are_unbiased(name, strike, kind):
    c = cfg(strike=strike, kind=kind)
    est, _ = mc.run_estimator(name, c, pilot_paths=5000)
    assert abs(est.value - bs(c)) < 4 * est.std_error


def test_zero_drift_importance_is_basic():
    c = cfg(n=5000)
    a, b = mc.mc_basic(c), mc.mc_importance(c, mc.DriftSpec.zero(2))
    assert np.array_equal(a.samples, b.samples)


def test_importance_weights_have_unit_mean():
    c = cfg(n=100_000, steps=4)
    w = mc.importance_weights(c, mc.DriftSpec(1, (0.4, -0.2)))
    assert abs(w.mean() - 1) < 5 * w.std() / math.sqrt(w.size)
    assert np.all(w > 0)


def test_extreme_drift_underflows_instead_of_overflowing():
    w = mc.importance_weights(cfg(n=1000, steps=50), mc.DriftSpec(0, (80.0,)))
    assert np.all(np.isfinite(w)) and w.max() < 1e-300


def test_weight_overflow_is_reported(monkeypatch):
    monkeypatch.setattr(mc, "_log_weights", lambda tau, z: np.full(z.shape[0], 1e4))
    with pytest.raises(WeightOverflowError):
        mc.mc_importance(cfg(n=1000), mc.DriftSpec(0, (1.0,)))


def test_antithetic_needs_even_paths():
    with pytest.raises(DomainError):
        mc.mc_antithetic(cfg(n=1001))
    est = mc.mc_antithetic(cfg(n=1000))
    assert est.n_used == 500


def test_control_coefficient_rejects_constant_control():
    c = mc.McConfig(100, OptionSpec(90, 1), 0.05, 0.0, 1000, degenerate=True)
    with pytest.raises(DegenerateError):
        mc.control_coefficient(c, 2000, 5)


def test_optimized_drift_for_deep_otm_call():
    c = cfg(strike=200.0, n=50_000, steps=1)
    drift = mc.optimize_drift(c, 0)
    # one step: the shift carries the whole log-moneyness, about ln(2) / 0.2
    assert 3.0 < drift.coeffs[0] < 4.5
    basic, is0 = mc.mc_basic(c), mc.mc_importance(c, drift)
    assert variance_below(is0.samples, basic.samples)
    assert abs(is0.value - bs(c)) < 4 * is0.std_error


def test_drift_sign_follows_option_kind():
    call = mc.optimize_drift(cfg(strike=130.0, steps=2), 0, pilot_paths=5000)
    put = mc.optimize_drift(cfg(strike=70.0, kind="put", steps=2), 0, pilot_paths=5000)
    assert call.coeffs[0] > 0 > put.coeffs[0]


def test_zero_payoff_returns_zero_drift():
    c = mc.McConfig(1.0, OptionSpec(1e6, 1.0), 0.05, 0.01, 1000, steps=1)
    d = mc.optimize_drift(c, 1, pilot_paths=2000)
    assert d.coeffs == (0.0, 0.0) and d.objective == 0.0
    with pytest.raises(DomainError):
        mc.optimize_drift(c, 1, pilot_paths=10)


def test_checkpoints_and_running_ci():
    idx = mc.checkpoints(100_000)
    assert idx[0] == 1 and idx[-1] == 100_000 and np.all(np.diff(idx) > 0)
    assert np.array_equal(idx[:1000], np.arange(1, 1001))
    x = np.random.default_rng(1).normal(size=5000)
    i, half = mc.running_ci(x)
    assert i[0] == 2
    assert half[-1] == pytest.approx(mc.Z95 * x.std(ddof=1) / math.sqrt(x.size))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 3000))
def test_estimate_from_matches_numpy(n):
    x = np.random.default_rng(n).exponential(size=n)
    est = mc.estimate_from(x)
    assert est.value == pytest.approx(x.mean())
    assert est.sample_variance == pytest.approx(x.var(ddof=1))
    assert est.running_means[-1] == (n, pytest.approx(x.mean()))


def test_thread_count_does_not_change_results():
    c = cfg(n=40_000)
    for fn in (mc.mc_basic, mc.mc_antithetic, lambda c_, w: mc.mc_control_variate(c_, 2000, workers=w)):
        a, b = fn(c, 1), fn(c, 8)
        assert np.array_equal(a.samples, b.samples)


def test_compare_rows_and_reduction_factors():
    rows = mc.compare_estimators(cfg(n=20_000), pilot_paths=5000)
    assert [r.estimator for r in rows] == list(mc.ESTIMATORS)
    assert rows[0].variance_reduction == 1.0
    for r in rows[1:]:
        assert r.variance_reduction == pytest.approx(rows[0].estimate.std_error**2 / r.estimate.std_error**2)
    assert [r.drift is not None for r in rows] == [False, True, True, True, False, False]
