import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hedgelab.analytics import OptionSpec, PricingInputs, bs_quote
from hedgelab.errors import DomainError, ExactRegimeError, NumericError, StabilityError
from hedgelab.pde_fd import (
    FdScheme,
    GridSpec,
    TimeScheme,
    estimate_order,
    fd_diff,
    richardson_reference,
    solve_bs_pde,
    thomas_factor,
    thomas_solve,
)

H_SEQ = [1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3]
ATM = 10.450583572185565


def test_fd_diff_schemes_on_exp():
    assert fd_diff(math.exp, 1.0, 1e-5, "forward") == pytest.approx(math.e, rel=1e-5)
    assert fd_diff(math.exp, 1.0, 1e-5, FdScheme.BACKWARD) == pytest.approx(math.e, rel=1e-5)
    assert fd_diff(math.exp, 1.0, 1e-4, "central") == pytest.approx(math.e, rel=1e-8)


@pytest.mark.parametrize("scheme,order", [("forward", 1), ("backward", 1), ("central", 2)])
def test_estimated_orders(scheme, order):
    est = estimate_order(math.exp, 1.0, scheme, H_SEQ)
    assert est.order == pytest.approx(order, abs=0.1)
    assert est.r_squared >= 0.999
    assert len(est.samples) == len(H_SEQ)


def test_richardson_reference_is_accurate():
    assert richardson_reference(math.sin, 0.3, 1e-2) == pytest.approx(math.cos(0.3), abs=1e-11)


def test_exact_regime_detected():
    # central differences are exact for quadratics
    with pytest.raises(ExactRegimeError):
        estimate_order(lambda x: x * x, 1.0, "central", H_SEQ, true_derivative=2.0)


def test_bad_step_ladders():
    with pytest.raises(DomainError):
        estimate_order(math.exp, 1.0, "forward", [1e-1, 1e-2, 1e-3])
    with pytest.raises(DomainError):
        estimate_order(math.exp, 1.0, "forward", [1e-1, 1e-2, 1e-2, 1e-3])
    with pytest.raises(DomainError):
        fd_diff(math.exp, 1.0, 0.0)


def test_non_finite_function_values():
    with pytest.raises(NumericError):
        fd_diff(lambda x: math.inf if x > 1 else x, 1.0, 0.1, "central")


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_thomas_matches_dense_solve(n, seed):
    rng = np.random.default_rng(seed)
    lower, upper = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    diag = 2.5 + rng.uniform(0, 1, n)  # diagonally dominant
    rhs = rng.normal(size=n)
    dense = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    x = thomas_solve(lower, thomas_factor(lower, diag, upper), rhs)
    assert np.allclose(dense @ x, rhs, atol=1e-12)


def test_crank_nicolson_benchmark_and_refinement():
    opt = OptionSpec(100, 1.0)
    coarse = solve_bs_pde(opt, 0.05, 0.2, 100, GridSpec(400, 400, "crank_nicolson", 400), compare_analytic=True)
    fine = solve_bs_pde(opt, 0.05, 0.2, 100, GridSpec(800, 800, "crank_nicolson", 400), compare_analytic=True)
    e1, e2 = abs(coarse.price_at_spot - ATM), abs(fine.price_at_spot - ATM)
    assert e1 <= 1e-2
    assert 3 <= e1 / e2 <= 6
    assert coarse.values.shape == (401, 400)
    assert coarse.s_grid[-1] == 400.0
    assert coarse.max_abs_error_vs_analytic < 5e-3


@pytest.mark.parametrize("scheme,n_time", [("implicit", 400), ("explicit", 2000)])
def test_other_schemes_converge(scheme, n_time):
    sol = solve_bs_pde(OptionSpec(100, 1.0), 0.05, 0.2, 100, GridSpec(200, n_time, scheme, 400))
    assert sol.price_at_spot == pytest.approx(ATM, abs=2e-2)


def test_put_pde_matches_analytic():
    opt = OptionSpec(100, 1.0, "put")
    sol = solve_bs_pde(opt, 0.05, 0.2, 90, GridSpec(400, 400))
    ref = bs_quote(PricingInputs(90, 0.05, 0.2, 1.0), opt).price
    assert sol.price_at_spot == pytest.approx(ref, abs=1e-2)


def test_explicit_instability_names_node():
    with pytest.raises(StabilityError, match=r"node j=\d+"):
        solve_bs_pde(OptionSpec(100, 1.0), 0.05, 0.2, 100, GridSpec(200, 100, TimeScheme.EXPLICIT, 400))


def test_pde_domain_checks():
    opt = OptionSpec(100, 1.0)
    with pytest.raises(DomainError):
        solve_bs_pde(opt, 0.05, 0.2, 100, GridSpec(50, 50, s_max=90))
    with pytest.raises(DomainError):
        solve_bs_pde(opt, 0.05, 0.2, 500, GridSpec(50, 50, s_max=400))
    with pytest.raises(DomainError):
        solve_bs_pde(opt, 0.05, 0.0, 100, GridSpec(50, 50))
    with pytest.raises(DomainError):
        GridSpec(2, 10)
