"""Finite-difference derivatives, empirical convergence order, and a
theta-scheme solver for the Black-Scholes PDE on a uniform spot grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from hedgelab.analytics import OptionSpec, price_arrays
from hedgelab.errors import DomainError, ExactRegimeError, NumericError, StabilityError

_EPS = np.finfo(float).eps


class FdScheme(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    CENTRAL = "central"


class TimeScheme(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    CRANK_NICOLSON = "crank_nicolson"


_THETA = {TimeScheme.EXPLICIT: 0.0, TimeScheme.IMPLICIT: 1.0, TimeScheme.CRANK_NICOLSON: 0.5}


def _finite(value, where):
    if not math.isfinite(value):
        raise NumericError(f"non-finite function value at x={where}")
    return value


def fd_diff(f: Callable[[float], float], x: float, h: float, scheme="forward") -> float:
    """First-derivative finite difference of ``f`` at ``x`` with step ``h``."""
    if not h > 0:
        raise DomainError(f"step h must be > 0, got {h}")
    scheme = FdScheme(scheme)
    if scheme is FdScheme.FORWARD:
        return (_finite(f(x + h), x + h) - _finite(f(x), x)) / h
    if scheme is FdScheme.BACKWARD:
        return (_finite(f(x), x) - _finite(f(x - h), x - h)) / h
    return (_finite(f(x + h), x + h) - _finite(f(x - h), x - h)) / (2.0 * h)


@dataclass(frozen=True)
class OrderEstimate:
    order: float
    r_squared: float
    samples: list  # [(h, abs_error), ...]


def richardson_reference(f, x, h):
    """Central difference at h/2 and h/4 combined by one Richardson step."""
    coarse = fd_diff(f, x, 0.5 * h, FdScheme.CENTRAL)
    fine = fd_diff(f, x, 0.25 * h, FdScheme.CENTRAL)
    return (4.0 * fine - coarse) / 3.0


def estimate_order(
    f: Callable[[float], float],
    x: float,
    scheme,
    h_seq: Sequence[float],
    true_derivative: Optional[float] = None,
) -> OrderEstimate:
    """Fit the slope of log|error| against log h over a decreasing step ladder.

    Without ``true_derivative`` the reference is a Richardson-extrapolated
    central difference below the smallest step.
    """
    h_seq = [float(h) for h in h_seq]
    if len(h_seq) < 4:
        raise DomainError("estimate_order needs at least 4 step sizes")
    if any(h <= 0 for h in h_seq) or any(b >= a for a, b in zip(h_seq, h_seq[1:])):
        raise DomainError("h_seq must be positive and strictly decreasing")

    ref = true_derivative if true_derivative is not None else richardson_reference(f, x, h_seq[-1])
    scale = max(abs(ref), 1.0)
    samples = []
    for h in h_seq:
        err = abs(fd_diff(f, x, h, scheme) - ref)
        if err <= 1e2 * _EPS * scale:
            raise ExactRegimeError(
                f"error {err:.3e} at h={h:g} is at round-off level; truncation error vanishes and order is undefined"
            )
        samples.append((h, err))

    logh = np.log([h for h, _ in samples])
    loge = np.log([e for _, e in samples])
    slope, intercept = np.polyfit(logh, loge, 1)
    resid = loge - (slope * logh + intercept)
    ss_tot = float(np.sum((loge - loge.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return OrderEstimate(order=float(slope), r_squared=r2, samples=samples)


# ---------------------------------------------------------------------------
# Black-Scholes PDE


@dataclass(frozen=True)
class GridSpec:
    n_space: int
    n_time: int
    scheme: TimeScheme = TimeScheme.CRANK_NICOLSON
    s_max: Optional[float] = None  # default 4 * max(K, S0)

    def __post_init__(self):
        if self.n_space < 3:
            raise DomainError(f"n_space must be >= 3, got {self.n_space}")
        if self.n_time < 1:
            raise DomainError(f"n_time must be >= 1, got {self.n_time}")
        if self.s_max is not None and not self.s_max > 0:
            raise DomainError(f"s_max must be > 0, got {self.s_max}")
        object.__setattr__(self, "scheme", TimeScheme(self.scheme))


@dataclass
class PdeSolution:
    values: np.ndarray  # [time, space]; row 0 is t = 0, last row is maturity
    s_grid: np.ndarray
    t_grid: np.ndarray
    price_at_spot: float
    max_abs_error_vs_analytic: Optional[float] = None
    analytic_row: Optional[np.ndarray] = field(default=None, repr=False)


def thomas_factor(lower, diag, upper):
    """Forward-elimination factors of a tridiagonal matrix.

    ``lower[i]`` multiplies x[i-1] in row i (lower[0] unused), ``upper[i]``
    multiplies x[i+1] (upper[-1] unused).
    """
    n = len(diag)
    c_prime = np.empty(n)
    denom = np.empty(n)
    prev = 0.0
    for i in range(n):
        d = diag[i] - (lower[i] * prev if i else 0.0)
        if d == 0.0 or not math.isfinite(d):
            raise NumericError(f"singular tridiagonal system (zero pivot at row {i})")
        denom[i] = d
        prev = upper[i] / d if i < n - 1 else 0.0
        c_prime[i] = prev
    return c_prime, denom


def thomas_solve(lower, factors, rhs):
    c_prime, denom = factors
    n = len(rhs)
    y = np.empty(n)
    y[0] = rhs[0] / denom[0]
    for i in range(1, n):
        y[i] = (rhs[i] - lower[i] * y[i - 1]) / denom[i]
    for i in range(n - 2, -1, -1):
        y[i] -= c_prime[i] * y[i + 1]
    return y


def _boundaries(opt: OptionSpec, rate, s_max, tau):
    disc_k = opt.strike * math.exp(-rate * tau)
    if opt.kind == "call":
        return 0.0, s_max - disc_k
    return disc_k, 0.0


def solve_bs_pde(opt: OptionSpec, rate: float, vol: float, spot: float, grid: GridSpec,
                 compare_analytic: bool = False) -> PdeSolution:
    """March the Black-Scholes PDE backwards from the payoff at maturity.

    Dirichlet boundaries: C(0) = 0, C(s_max) = s_max - K e^{-r tau} for calls,
    the mirror image for puts.
    """
    if not vol > 0:
        raise DomainError(f"vol must be > 0, got {vol}")
    if not opt.maturity > 0:
        raise DomainError("option must have positive maturity")
    s_max = grid.s_max if grid.s_max is not None else 4.0 * max(opt.strike, spot)
    if not s_max > opt.strike:
        raise DomainError(f"s_max={s_max} must exceed the strike {opt.strike}")
    if not 0.0 <= spot <= s_max:
        raise DomainError(f"spot {spot} lies outside the grid [0, {s_max}]")

    n, m = grid.n_space, grid.n_time
    theta = _THETA[grid.scheme]
    ds = s_max / (n - 1)
    dt = opt.maturity / m
    j = np.arange(n, dtype=float)
    s_grid = np.linspace(0.0, s_max, n)
    t_grid = np.linspace(0.0, opt.maturity, m + 1)

    if grid.scheme is TimeScheme.EXPLICIT:
        bound = dt * (vol * vol * j * j + rate)
        bad = np.nonzero(bound > 1.0)[0]
        if bad.size:
            k = int(bad[0])
            raise StabilityError(
                f"explicit scheme unstable at node j={k} (S={s_grid[k]:g}): "
                f"dt*(sigma^2 j^2 + r) = {bound[k]:.4g} > 1; increase n_time"
            )

    # L V_j = a_j V_{j-1} + b_j V_j + c_j V_{j+1} on interior nodes
    ji = j[1:-1]
    a = 0.5 * (vol * vol * ji * ji - rate * ji)
    b = -(vol * vol * ji * ji + rate)
    c = 0.5 * (vol * vol * ji * ji + rate * ji)

    values = np.empty((m + 1, n))
    if opt.kind == "call":
        values[m] = np.maximum(s_grid - opt.strike, 0.0)
    else:
        values[m] = np.maximum(opt.strike - s_grid, 0.0)

    implicit = theta > 0.0
    if implicit:
        lower = -theta * dt * a
        diag = 1.0 - theta * dt * b
        upper = -theta * dt * c
        factors = thomas_factor(lower, diag, upper)

    w = (1.0 - theta) * dt
    for step in range(m - 1, -1, -1):
        old = values[step + 1]
        lo_new, hi_new = _boundaries(opt, rate, s_max, opt.maturity - t_grid[step])
        rhs = old[1:-1] + w * (a * old[:-2] + b * old[1:-1] + c * old[2:])
        if implicit:
            rhs[0] += theta * dt * a[0] * lo_new
            rhs[-1] += theta * dt * c[-1] * hi_new
            interior = thomas_solve(lower, factors, rhs)
        else:
            interior = rhs
        row = values[step]
        row[0], row[-1] = lo_new, hi_new
        row[1:-1] = interior
        if not np.all(np.isfinite(interior)):
            raise NumericError(f"non-finite values at time step {step}")

    sol = PdeSolution(
        values=values,
        s_grid=s_grid,
        t_grid=t_grid,
        price_at_spot=float(np.interp(spot, s_grid, values[0])),
    )
    if compare_analytic:
        exact = np.empty(n)
        exact[1:] = price_arrays(s_grid[1:], opt.strike, rate, vol, opt.maturity, opt.kind)
        exact[0] = _boundaries(opt, rate, s_max, opt.maturity)[0]
        sol.analytic_row = exact
        sol.max_abs_error_vs_analytic = float(np.max(np.abs(values[0] - exact)))
    return sol
