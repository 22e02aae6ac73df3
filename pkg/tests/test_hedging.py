import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedgelab import hedging as hg
from hedgelab.analytics import OptionSpec, PricingInputs, bs_quote
from hedgelab.errors import DomainError, ModelConditionError, SingularSystemError, UnsupportedOrderError
from hedgelab.market import MarketState, SecurityParams, build_model, simulate_path


def spread_book(n=20, sigma=0.2, lo=0.1, hi=0.3):
    return hg.uniform_portfolio(n, phi=np.linspace(lo, hi, n), sigma_idio=sigma)


def direct_hedge_error(p, spots0, spots1, t, dt):
    """Delta-hedge error built from scalar quotes, independent of the vectorised kernel."""
    r = p.model.rate
    total = 0.0
    for i, opt in enumerate(p.options):
        vol = float(p.model.sigma_total[i])
        q0 = bs_quote(PricingInputs(spots0[i], r, vol, opt.maturity - t), opt)
        q1 = bs_quote(PricingInputs(spots1[i], r, vol, opt.maturity - t - dt), opt)
        cash = q0.price - q0.delta * spots0[i]
        total += q0.delta * (spots1[i] - spots0[i]) + cash * (math.exp(r * dt) - 1) - (q1.price - q0.price)
    return total / p.n


def test_builder_parse():
    assert hg.Builder.parse("delta") == hg.Builder()
    assert hg.Builder.parse("matched:3") == hg.Builder("matched", 3)
    assert str(hg.Builder.parse("matched")) == "matched:2"
    with pytest.raises(DomainError):
        hg.Builder.parse("gamma")


def test_delta_strategy_is_self_financing():
    p = spread_book(5)
    s = hg.delta_strategy(p, 0.0)
    price, delta, _ = hg.book_greeks(p, s.spots, 0.0)
    assert np.allclose(s.psi, delta)
    assert s.cash + np.mean(s.psi * s.spots) == pytest.approx(np.mean(price), rel=1e-14)
    assert np.all(s.deviations == 0)
    custom = hg.custom_strategy(p, delta, 0.0)
    assert custom.cash == pytest.approx(s.cash) and np.allclose(custom.deviations, 0)


def test_kernel_matches_direct_path_replay():
    p = spread_book(4)
    seed, horizon, steps = 99, 0.5, 5
    stats = hg.run_path_experiment(p, hg.Builder(), horizon, steps, 6, seed)
    dt = horizon / steps
    r = p.model.rate
    for rep in (0, 5):
        path = simulate_path(p.model, p.initial, horizon, steps, rep, seed)
        acc = 0.0
        for k in range(steps):
            step_err = direct_hedge_error(p, path[k].spots, path[k + 1].spots, k * dt, dt)
            acc += step_err * math.exp(r * (horizon - (k + 1) * dt))
        assert stats.samples[rep] == pytest.approx(acc, abs=1e-11)


def test_hedge_error_single_step():
    p = spread_book(3)
    s = hg.delta_strategy(p, 0.0)
    path = simulate_path(p.model, p.initial, 0.1, 1, 3, 1)
    value = hg.hedge_error(s, p, path[1], 0.0, 0.1)
    assert value == pytest.approx(direct_hedge_error(p, path[0].spots, path[1].spots, 0.0, 0.1), abs=1e-12)
    with pytest.raises(DomainError):
        hg.hedge_error(s, p, MarketState(path[1].spots, time=0.2), 0.0, 0.1)


@pytest.mark.parametrize("a", [1, 2, 3, 4])
def test_matched_constraints_hold(a):
    p = spread_book(30)
    s = hg.matched_strategy(p, 0.0, a)
    scale = [np.sum(np.abs(s.psi * s.spots) * p.model.phi**k) for k in range(1, a + 1)]
    assert np.all(np.abs(hg.constraint_residuals(p, s, a)) <= 1e-14 * np.array(scale))
    if a >= 2:
        assert hg.var_general_theory(p, s, 0.0, 1 / 12).f2 <= 1e-18


def test_matched_is_min_norm():
    p = spread_book(12)
    s = hg.matched_strategy(p, 0.0, 2)
    # moving along the null space of the constraints only increases the deviation norm
    v = np.vstack([p.model.phi, p.model.phi**2])
    null = np.linalg.svd(v)[2][2:]
    for row in null[:3]:
        assert np.linalg.norm(s.deviations + 0.1 * row) > np.linalg.norm(s.deviations)


def test_matched_rank_failures():
    with pytest.raises(SingularSystemError):
        hg.matched_strategy(hg.uniform_portfolio(10, phi=0.2), 0.0, 2)
    with pytest.raises(SingularSystemError):
        hg.matched_strategy(spread_book(2), 0.0, 3)
    with pytest.raises(UnsupportedOrderError):
        hg.matched_strategy(spread_book(10), 0.0, 7)


def test_expired_and_put_books_rejected():
    p = spread_book(2)
    with pytest.raises(DomainError):
        hg.delta_strategy(p, 1.0)
    with pytest.raises(DomainError):
        hg.PortfolioSpec(p.model, (OptionSpec(100, 1), OptionSpec(100, 1, "put")), p.initial)


def test_pricing_condition_enforced():
    secs = [SecurityParams(0.2, 0.1, k_idio=0.3)]
    model = build_model(secs, 0.05)
    p = hg.PortfolioSpec(model, (OptionSpec(100, 1),), MarketState((100.0,)))
    with pytest.raises(ModelConditionError):
        hg.var_general_theory(p, hg.delta_strategy(p, 0.0), 0.0, 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 0.4), st.floats(0.05, 0.4), st.floats(0.005, 0.2))
def test_general_theory_reduces_to_delta_theory(n, phi, sigma, dt):
    p = hg.uniform_portfolio(n, phi=phi, sigma_idio=sigma)
    delta = hg.var_delta_theory(p, 0.0, dt)
    general = hg.var_general_theory(p, hg.delta_strategy(p, 0.0), 0.0, dt)
    assert general.f1 == 0.0
    assert general.total == pytest.approx(delta.total, rel=1e-12)


def test_one_period_variance_matches_theory():
    p = hg.uniform_portfolio(1, phi=0.2, sigma_idio=0.0)
    st_ = hg.run_one_period_experiment(p, hg.Builder(), 1 / 52, 200_000, 3)
    assert st_.variance == pytest.approx(st_.theory.total, rel=0.05)
    assert abs(st_.mean) <= 0.1 * st_.std


def test_idiosyncratic_risk_diversifies():
    small = hg.run_one_period_experiment(hg.uniform_portfolio(2), hg.Builder(), 1 / 52, 20_000, 4)
    large = hg.run_one_period_experiment(hg.uniform_portfolio(32), hg.Builder(), 1 / 52, 20_000, 4)
    assert 12 < small.variance / large.variance < 21


def test_matched_beats_delta_when_idiosyncratic_noise_is_small():
    p = spread_book(200, sigma=0.02)
    dt = 0.25
    delta = hg.run_one_period_experiment(p, hg.Builder(), dt, 20_000, 8)
    matched = hg.run_one_period_experiment(p, hg.Builder("matched", 2), dt, 20_000, 8)
    assert matched.theory.total < 0.2 * delta.theory.total
    assert hg.variance_below(matched.samples, delta.samples)
    assert matched.variance == pytest.approx(matched.theory.total, rel=0.15)
    assert delta.variance == pytest.approx(delta.theory.total, rel=0.15)


def test_results_independent_of_workers_and_batches():
    p = spread_book(6)
    a = hg.run_path_experiment(p, hg.Builder("matched", 2), 0.5, 4, 3000, 21, workers=1, batch_size=4096)
    b = hg.run_path_experiment(p, hg.Builder("matched", 2), 0.5, 4, 3000, 21, workers=8, batch_size=257)
    assert np.array_equal(a.samples, b.samples)


def test_loglog_slope_and_variance_test():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    assert hg.loglog_slope(xs, 3 * xs**-1.5) == pytest.approx(-1.5)
    rng = np.random.default_rng(0)
    wide, narrow = rng.normal(0, 2, 5000), rng.normal(0, 1, 5000)
    assert hg.variance_below(narrow, wide)
    assert not hg.variance_below(wide, narrow)
    assert not hg.variance_below(narrow, narrow)


def test_experiment_argument_checks():
    p = spread_book(2)
    with pytest.raises(DomainError):
        hg.run_path_experiment(p, hg.Builder(), 2.0, 4, 100, 0)
    with pytest.raises(DomainError):
        hg.run_one_period_experiment(p, hg.Builder(), 0.1, 10, 0)
    with pytest.raises(DomainError):
        hg.run_path_experiment(p, hg.Builder(), 0.5, 0, 100, 0)
