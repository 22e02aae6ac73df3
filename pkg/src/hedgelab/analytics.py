"""Closed-form Black-Scholes prices, Greeks and normal-distribution kernels.

Scalar entry points (``bs_quote``, ``log_space_derivative``) take the small
value types below. The ``*_arrays`` helpers are the vectorised kernels used by
the simulation modules; they broadcast over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import ndtr

from hedgelab.errors import DegenerateError, DomainError, UnsupportedOrderError

MAX_LOG_ORDER = 6

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float
    kind: Literal["call", "put"] = "call"

    def __post_init__(self):
        if not self.strike > 0:
            raise DomainError(f"strike must be > 0, got {self.strike}")
        if not self.maturity >= 0:
            raise DomainError(f"maturity must be >= 0, got {self.maturity}")
        if self.kind not in ("call", "put"):
            raise DomainError(f"kind must be 'call' or 'put', got {self.kind!r}")


@dataclass(frozen=True)
class PricingInputs:
    spot: float
    rate: float
    vol: float
    tau: float

    def __post_init__(self):
        if not self.spot > 0:
            raise DomainError(f"spot must be > 0, got {self.spot}")
        if not self.vol >= 0:
            raise DomainError(f"vol must be >= 0, got {self.vol}")
        if not self.tau >= 0:
            raise DomainError(f"tau must be >= 0, got {self.tau}")
        if not math.isfinite(self.rate):
            raise DomainError(f"rate must be finite, got {self.rate}")


@dataclass(frozen=True)
class BsQuote:
    price: float
    d1: float
    d2: float
    delta: float
    gamma: float


# ---------------------------------------------------------------------------
# normal distribution


def norm_cdf(x):
    """Standard normal CDF. Accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("norm_cdf requires finite input")
    out = ndtr(arr)
    return float(out) if out.ndim == 0 else out


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


# Wichura (1988), algorithm AS241 PPND16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coeffs, x):
    acc = np.zeros_like(x) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * x + c
    return acc


def norm_inv_cdf(p):
    """Inverse standard normal CDF (AS241). Accepts scalars or arrays in (0, 1)."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("norm_inv_cdf requires 0 < p < 1")
    flat = p.ravel()
    q = flat - 0.5
    out = np.empty_like(flat)

    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    out[central] = qc * _poly(_A, r) / _poly(_B, r)

    tail_idx = np.nonzero(~central)[0]
    if tail_idx.size:
        qt = q[tail_idx]
        s = np.sqrt(-np.log(np.where(qt < 0.0, flat[tail_idx], 1.0 - flat[tail_idx])))
        near = s <= 5.0
        x = np.empty_like(s)
        a = s[near] - 1.6
        x[near] = _poly(_C, a) / _poly(_D, a)
        b = s[~near] - 5.0
        x[~near] = _poly(_E, b) / _poly(_F, b)
        out[tail_idx] = np.where(qt < 0.0, -x, x)

    out = out.reshape(p.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Black-Scholes kernels


def call_arrays(spot, strike, rate, vol, tau):
    """Vectorised call price, d1, d2, delta and gamma.

    When ``vol * sqrt(tau) == 0`` the price collapses to the forward intrinsic
    value ``max(S - K e^{-r tau}, 0)``; delta is 1, 0 or 1/2 on the kink and
    gamma is 0. d1/d2 are reported as +-inf (or 0 at the money) there.
    """
    spot, strike, rate, vol, tau = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (spot, strike, rate, vol, tau))
    )
    disc_k = strike * np.exp(-rate * tau)
    v = vol * np.sqrt(tau)
    live = v > 0.0
    v_safe = np.where(live, v, 1.0)

    d1 = (np.log(spot / strike) + (rate + 0.5 * vol * vol) * tau) / v_safe
    d2 = d1 - v_safe
    price = spot * ndtr(d1) - disc_k * ndtr(d2)
    delta = ndtr(d1)
    gamma = norm_pdf(d1) / (spot * v_safe)

    fwd = spot - disc_k
    dead_price = np.maximum(fwd, 0.0)
    dead_delta = np.where(fwd > 0.0, 1.0, np.where(fwd < 0.0, 0.0, 0.5))
    dead_d = np.where(fwd > 0.0, np.inf, np.where(fwd < 0.0, -np.inf, 0.0))

    price = np.where(live, price, dead_price)
    delta = np.where(live, delta, dead_delta)
    gamma = np.where(live, gamma, 0.0)
    d1 = np.where(live, d1, dead_d)
    d2 = np.where(live, d2, dead_d)
    return price, d1, d2, delta, gamma


def price_arrays(spot, strike, rate, vol, tau, kind="call"):
    """Vectorised option price; puts via parity."""
    price, _, _, _, _ = call_arrays(spot, strike, rate, vol, tau)
    if kind == "put":
        price = price - spot + strike * np.exp(-rate * np.asarray(tau, dtype=float))
    return price


def bs_quote(inputs: PricingInputs, opt: OptionSpec) -> BsQuote:
    price, d1, d2, delta, gamma = (
        float(a) for a in call_arrays(inputs.spot, opt.strike, inputs.rate, inputs.vol, inputs.tau)
    )
    if opt.kind == "put":
        price = price - inputs.spot + opt.strike * math.exp(-inputs.rate * inputs.tau)
        delta = delta - 1.0
    return BsQuote(price=price, d1=d1, d2=d2, delta=delta, gamma=gamma)


def _hermite(n, x):
    """Probabilists' Hermite polynomial He_n(x)."""
    prev, cur = np.ones_like(x), x
    if n == 0:
        return prev
    for m in range(1, n):
        prev, cur = cur, x * cur - m * prev
    return cur


def log_space_derivatives(spot, strike, rate, vol, tau, max_order, kind="call"):
    """Return ``[(S d/dS)^k C for k = 0..max_order]`` as a stacked array.

    With v = vol*sqrt(tau) and u = ln S, each log-derivative of ``S*f(d1)`` is
    ``S*(f + f'/v)(d1)``, so for k >= 1

        (S d/dS)^k C = S * sum_j binom(k-1, j) v^-j N^(j)(d1)

    where N^(j) = (-1)^(j-1) He_{j-1} n for j >= 1. Requires v > 0 beyond k = 2.
    """
    if max_order < 0 or max_order > MAX_LOG_ORDER:
        raise UnsupportedOrderError(f"log-space derivative order must be in [0, {MAX_LOG_ORDER}], got {max_order}")
    spot = np.asarray(spot, dtype=float)
    price, d1, _, delta, gamma = call_arrays(spot, strike, rate, vol, tau)
    if kind == "put":
        price = price - spot + strike * np.exp(-rate * np.asarray(tau, dtype=float))
        delta = delta - 1.0
    out = [price, spot * delta, spot * spot * gamma + spot * delta][: max_order + 1]
    if max_order >= 3:
        v = vol * np.sqrt(np.asarray(tau, dtype=float))
        density = norm_pdf(d1)
        # N^(j)(d1) / v^j for j = 1..max_order-1
        scaled = [(-1.0) ** (j - 1) * _hermite(j - 1, d1) * density / v**j for j in range(1, max_order)]
        for k in range(3, max_order + 1):
            acc = delta + sum(math.comb(k - 1, j) * scaled[j - 1] for j in range(1, k))
            out.append(spot * acc)
    return np.stack(np.broadcast_arrays(*out))


def log_space_derivative(k: int, inputs: PricingInputs, opt: OptionSpec) -> float:
    """``(X d/dX)^k`` applied to the Black-Scholes price, for 0 <= k <= 6."""
    if k < 0 or k > MAX_LOG_ORDER:
        raise UnsupportedOrderError(f"log-space derivative order must be in [0, {MAX_LOG_ORDER}], got {k}")
    if k == 0:
        return bs_quote(inputs, opt).price
    if not inputs.vol * math.sqrt(inputs.tau) > 0:
        raise DegenerateError("log-space derivatives need vol * sqrt(tau) > 0")
    values = log_space_derivatives(inputs.spot, opt.strike, inputs.rate, inputs.vol, inputs.tau, k, opt.kind)
    return float(values[k])
