import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hedgelab.errors import DegenerateError, DomainError
from hedgelab.market import (
    GOLDEN,
    MarketState,
    SecurityParams,
    build_model,
    covariance,
    draw_shocks,
    mix64,
    normal_block,
    simulate_path,
    simulate_terminal,
    step_exact,
    uniform_block,
)


def test_mix64_is_splitmix64():
    # reference SplitMix64 stream seeded with 0
    assert int(mix64(np.uint64(GOLDEN))) == 0xE220A8397B1DCDAF
    assert int(mix64(np.uint64((2 * GOLDEN) % 2**64))) == 0x6E789E6AA1B965F4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(0, 10_000))
def test_draws_are_pure_functions_of_coordinates(seed, path, step):
    a = uniform_block(seed, [path], step, 4)
    b = uniform_block(seed, np.array([7, path, 3]), step, 4)[1]
    assert np.array_equal(a[0], b)
    assert np.all((a > 0) & (a < 1))


def test_normals_pass_ks_and_moments():
    z = normal_block(123, np.arange(200_000), 0, 1)[:, 0]
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 5 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 5 * math.sqrt(2 / z.size)


def test_streams_for_adjacent_steps_and_seeds_are_unrelated():
    paths = np.arange(50_000)
    a = normal_block(9, paths, 0, 1)[:, 0]
    b = normal_block(9, paths, 1, 1)[:, 0]
    c = normal_block(10, paths, 0, 1)[:, 0]
    for other in (b, c):
        assert abs(np.corrcoef(a, other)[0, 1]) < 4 / math.sqrt(paths.size)
        assert stats.ks_2samp(a, other).pvalue > 1e-3


def _model(n=3, mode="risk_prices_given"):
    secs = [SecurityParams(phi=0.1 * (i + 1), sigma_idio=0.2, alpha=0.07, k_idio=0.1) for i in range(n)]
    return build_model(secs, rate=0.03, k0=0.4, mode=mode)


def test_build_model_modes():
    m = _model()
    assert np.allclose(m.alpha, 0.03 + 0.4 * m.phi + 0.1 * 0.2)
    assert np.allclose(_model(mode="alphas_given").alpha, 0.07)
    assert np.allclose(m.sigma_total, np.sqrt(m.phi**2 + 0.04))
    assert np.allclose(covariance(m), np.outer(m.phi, m.phi) + 0.04 * np.eye(3))


def test_build_model_rejections():
    with pytest.raises(DegenerateError):
        build_model([SecurityParams(0.0, 0.0)], 0.05)
    assert build_model([SecurityParams(0.0, 0.0)], 0.05, allow_degenerate=True).n == 1
    with pytest.raises(DomainError):
        build_model([SecurityParams(0.1, -0.1)], 0.05)
    with pytest.raises(DomainError):
        build_model([SecurityParams(0.1, 0.1)], 0.05, mode="alphas_given")
    with pytest.raises(DomainError):
        build_model([], 0.05)


def test_zero_shock_step_is_deterministic_drift():
    m = _model()
    state = MarketState((100.0, 50.0, 20.0))
    from hedgelab.market import ShockVector

    nxt = step_exact(m, state, 0.5, ShockVector(0.0, (0.0, 0.0, 0.0)))
    expect = np.array(state.spots) * np.exp((m.alpha - 0.5 * m.sigma_total**2) * 0.5)
    assert np.allclose(nxt.spots, expect, rtol=1e-15)
    assert nxt.time == 0.5


def test_path_and_terminal_agree():
    m = _model()
    state = MarketState((100.0, 50.0, 20.0))
    path = simulate_path(m, state, 1.0, 8, path_index=17, master_seed=5)
    terminal = simulate_terminal(m, state, 1.0, 8, [3, 17], master_seed=5)
    assert len(path) == 9
    assert np.allclose(path[-1].spots, terminal[1], rtol=1e-12)
    assert path[-1].time == pytest.approx(1.0)
    z = draw_shocks(5, 17, 0, 3)
    assert np.allclose(path[1].spots, step_exact(m, state, 1 / 8, z).spots)


def test_terminal_moments_match_lognormal():
    m = _model(2)
    state = MarketState((100.0, 100.0))
    x = simulate_terminal(m, state, 1.0, 4, np.arange(200_000), master_seed=77)
    mean = 100.0 * np.exp(m.alpha)
    se = mean * np.sqrt(np.expm1(m.sigma_total**2) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean) < 5 * se)
    logret = np.log(x / 100.0)
    cov = np.cov(logret.T)
    assert np.allclose(cov, covariance(m), atol=3e-3)


def test_market_state_validation():
    with pytest.raises(DomainError):
        MarketState(())
    with pytest.raises(DomainError):
        MarketState((100.0, -1.0))
    with pytest.raises(DomainError):
        step_exact(_model(), MarketState((1.0, 1.0, 1.0)), 0.0, draw_shocks(0, 0, 0, 3))
