"""Discrete-time hedging of an equally weighted book of calls.

The book holds one call per security of a one-factor model, each weighted
1/n. A hedge holds ``psi_i`` units of security i plus cash; the hedging error
over one rebalancing interval is

    dH = (1/n) sum_i psi_i (X_i(t+dt) - X_i(t)) + P (e^{r dt} - 1)
         - (1/n) sum_i (C_i(t+dt) - C_i(t))

Options are valued at the total volatility sqrt(sigma_i^2 + phi_i^2).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from hedgelab.analytics import MAX_LOG_ORDER, OptionSpec, call_arrays, log_space_derivatives
from hedgelab.errors import DomainError, ModelConditionError, SingularSystemError, UnsupportedOrderError
from hedgelab.market import MarketState, OneFactorModel, log_increments, normal_block

DEFAULT_BATCH = 4096
PRICING_CONDITION_TOL = 1e-12
RANK_TOL = 1e-10


@dataclass(frozen=True)
class PortfolioSpec:
    model: OneFactorModel
    options: tuple
    initial: MarketState

    def __post_init__(self):
        options = tuple(self.options)
        object.__setattr__(self, "options", options)
        if len(options) != self.model.n or len(self.initial.spots) != self.model.n:
            raise DomainError("model, options and initial spots must have the same length")
        if any(o.kind != "call" for o in options):
            raise DomainError("hedging portfolios hold calls only")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def strikes(self) -> np.ndarray:
        return np.array([o.strike for o in self.options])

    @property
    def maturities(self) -> np.ndarray:
        return np.array([o.maturity for o in self.options])


@dataclass
class HedgeStrategy:
    psi: np.ndarray
    cash: float
    deviations: np.ndarray
    spots: np.ndarray
    time: float
    builder: str = "custom"


@dataclass(frozen=True)
class VarianceDecomposition:
    f1: float
    f2: float
    f3: float

    @property
    def total(self) -> float:
        return self.f1 + self.f2 + self.f3


@dataclass
class HedgeStats:
    mean: float
    variance: float
    std_error_of_mean: float
    replications: int
    theory: Optional[VarianceDecomposition] = None
    samples: np.ndarray = field(default=None, repr=False)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class Builder:
    """Hedge construction rule: ``delta`` or ``matched`` with a matching order."""

    kind: str = "delta"
    order: int = 1

    def __post_init__(self):
        if self.kind not in ("delta", "matched"):
            raise DomainError(f"unknown hedge builder {self.kind!r}")
        if self.kind == "matched" and self.order < 1:
            raise DomainError("matching order must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "Builder":
        """``"delta"`` or ``"matched:<a>"`` (``"matched"`` means a = 2)."""
        if text == "delta":
            return cls()
        if text.startswith("matched"):
            _, _, order = text.partition(":")
            return cls("matched", int(order) if order else 2)
        raise DomainError(f"unknown hedge builder {text!r}")

    def __str__(self):
        return "delta" if self.kind == "delta" else f"matched:{self.order}"


# ---------------------------------------------------------------------------
# pricing helpers


def _taus(p: PortfolioSpec, t: float) -> np.ndarray:
    return np.maximum(p.maturities - t, 0.0)


def _alive(p: PortfolioSpec, t: float):
    expired = np.nonzero(p.maturities - t <= 0.0)[0]
    if expired.size:
        raise DomainError(f"option {int(expired[0])} has expired at t={t}")


def book_greeks(p: PortfolioSpec, spots, t: float):
    """Price, delta, gamma of each call at ``spots`` (any leading shape, last axis n)."""
    price, _, _, delta, gamma = call_arrays(spots, p.strikes, p.model.rate, p.model.sigma_total, _taus(p, t))
    return price, delta, gamma


class MatchedSystem:
    """Moment constraints ``sum_i D_i phi_i^k = sum_i (L^k C_i - delta_i X_i) phi_i^k``.

    Rows k = 1..a of ``V[k-1, i] = phi_i^k``. The minimum-norm deviation
    ``D = V' (V V')^{-1} b`` is computed from a QR factorisation of V'.
    """

    def __init__(self, phi: np.ndarray, order: int):
        if order > MAX_LOG_ORDER:
            raise UnsupportedOrderError(f"matching order {order} exceeds the derivative ceiling {MAX_LOG_ORDER}")
        if order < 1:
            raise DomainError("matching order must be >= 1")
        phi = np.asarray(phi, dtype=float)
        if phi.size < order:
            raise SingularSystemError(f"need n >= a securities, got n={phi.size}, a={order}")
        self.order = order
        self.powers = np.vstack([phi**k for k in range(1, order + 1)])
        sv = np.linalg.svd(self.powers, compute_uv=False)
        if sv[0] == 0.0 or sv[-1] / sv[0] < RANK_TOL:
            raise SingularSystemError(
                f"moment constraint matrix has rank < {order}; need at least {order} distinct nonzero loadings"
            )
        self.q, self.r = np.linalg.qr(self.powers.T)

    def rhs(self, log_derivs: np.ndarray, spots: np.ndarray) -> np.ndarray:
        """Right-hand sides b_k, shape (..., a); ``log_derivs`` is (a+1, ..., n)."""
        excess = log_derivs[1:] - log_derivs[1][None]  # L^k C - X C_X
        return np.moveaxis(np.einsum("k...i,ki->k...", excess, self.powers), 0, -1)

    def solve(self, b: np.ndarray) -> np.ndarray:
        b2 = np.atleast_2d(b)
        y = solve_triangular(self.r.T, b2.T, lower=True)
        d = (self.q @ y).T
        return d.reshape(np.shape(b)[:-1] + (self.q.shape[0],))

    def residuals(self, deviations: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.powers @ deviations - b


def _matched_deviations(p: PortfolioSpec, spots, t: float, system: MatchedSystem):
    derivs = log_space_derivatives(spots, p.strikes, p.model.rate, p.model.sigma_total, _taus(p, t), system.order)
    return system.solve(system.rhs(derivs, spots))


def _strategy(p, psi, spots, t, builder, price=None, delta=None):
    if price is None:
        price, delta, _ = book_greeks(p, spots, t)
    cash = float(np.mean(price - psi * spots))
    dev = (psi - delta) * spots
    return HedgeStrategy(psi=psi, cash=cash, deviations=dev, spots=np.array(spots), time=t, builder=builder)


def _spots(p: PortfolioSpec, state: Optional[MarketState]) -> np.ndarray:
    return np.array((state or p.initial).spots)


def delta_strategy(p: PortfolioSpec, t: float, state: Optional[MarketState] = None) -> HedgeStrategy:
    _alive(p, t)
    spots = _spots(p, state)
    price, delta, _ = book_greeks(p, spots, t)
    return HedgeStrategy(psi=delta, cash=float(np.mean(price - delta * spots)),
                         deviations=np.zeros(p.n), spots=spots, time=t, builder="delta")


def custom_strategy(p: PortfolioSpec, psi: Sequence[float], t: float,
                    state: Optional[MarketState] = None) -> HedgeStrategy:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (p.n,):
        raise DomainError(f"psi must have length {p.n}, got shape {psi.shape}")
    return _strategy(p, psi, _spots(p, state), t, "custom")


def matched_strategy(p: PortfolioSpec, t: float, a: int, state: Optional[MarketState] = None) -> HedgeStrategy:
    """Allocation matching the systematic exposure of the book through order ``a``.

    Among all allocations meeting the a moment constraints, returns the one
    with the smallest sum of squared deviations from the delta hedge.
    """
    _alive(p, t)
    system = MatchedSystem(p.model.phi, a)
    spots = _spots(p, state)
    price, delta, _ = book_greeks(p, spots, t)
    dev = _matched_deviations(p, spots, t, system)
    psi = delta + dev / spots
    strat = HedgeStrategy(psi=psi, cash=float(np.mean(price - psi * spots)), deviations=dev,
                          spots=spots, time=t, builder=f"matched:{a}")
    return strat


def constraint_residuals(p: PortfolioSpec, strategy: HedgeStrategy, a: int) -> np.ndarray:
    """``sum_i psi_i X_i phi_i^k - sum_i L^k C_i phi_i^k`` for k = 1..a."""
    spots = strategy.spots
    derivs = log_space_derivatives(spots, p.strikes, p.model.rate, p.model.sigma_total,
                                   _taus(p, strategy.time), a)
    phi = p.model.phi
    return np.array([np.sum(strategy.psi * spots * phi**k) - np.sum(derivs[k] * phi**k)
                     for k in range(1, a + 1)])


def build(builder: Builder, p: PortfolioSpec, t: float, state: Optional[MarketState] = None) -> HedgeStrategy:
    if builder.kind == "delta":
        return delta_strategy(p, t, state)
    return matched_strategy(p, t, builder.order, state)


# ---------------------------------------------------------------------------
# hedge error and its theoretical variance


def _errors(p: PortfolioSpec, psi, cash, price0, x0, x1, t, dt):
    price1, _, _ = book_greeks(p, x1, t + dt)
    r = p.model.rate
    return (np.mean(psi * (x1 - x0), axis=-1) + cash * math.expm1(r * dt)
            - np.mean(price1 - price0, axis=-1))


def hedge_error(strategy: HedgeStrategy, p: PortfolioSpec, state_next: MarketState, t: float, dt: float) -> float:
    if abs(state_next.time - (t + dt)) > 1e-12 * max(1.0, abs(t + dt)):
        raise DomainError(f"state_next.time={state_next.time} does not equal t + dt = {t + dt}")
    x0 = strategy.spots
    price0, _, _ = book_greeks(p, x0, t)
    return float(_errors(p, strategy.psi, strategy.cash, price0, x0, np.array(state_next.spots), t, dt))


def _gamma_dollars(p: PortfolioSpec, spots, t):
    _, _, gamma = book_greeks(p, spots, t)
    return gamma * spots * spots


def var_delta_theory(p: PortfolioSpec, t: float, dt: float, state: Optional[MarketState] = None) -> VarianceDecomposition:
    """Leading variance terms of the delta-hedged book over one interval."""
    _alive(p, t)
    g = _gamma_dollars(p, _spots(p, state), t)
    phi, sig = p.model.phi, p.model.sigma_total
    n = p.n
    f2 = 0.5 * (np.sum(g * phi**2) / n) ** 2 * dt**2
    f3 = np.sum(g**2 * (sig**4 - phi**4)) / (2.0 * n * n) * dt**2
    return VarianceDecomposition(f1=0.0, f2=float(f2), f3=float(f3))


def check_pricing_condition(model: OneFactorModel):
    gap = model.alpha - model.rate - model.k0 * model.phi
    bad = np.nonzero(np.abs(gap) > PRICING_CONDITION_TOL)[0]
    if bad.size:
        i = int(bad[0])
        raise ModelConditionError(
            f"security {i} violates alpha = r + k0*phi (alpha={model.alpha[i]}, gap={gap[i]:.3e}); "
            "the variance formula assumes only systematic risk is priced"
        )


def var_general_theory(p: PortfolioSpec, strategy: HedgeStrategy, t: float, dt: float) -> VarianceDecomposition:
    """Leading variance terms for an arbitrary allocation with deviations D_i."""
    check_pricing_condition(p.model)
    _alive(p, t)
    g = _gamma_dollars(p, strategy.spots, t)
    d = strategy.deviations
    m = p.model
    phi, sig, stot, alpha, r = m.phi, m.sigma_idio, m.sigma_total, m.alpha, m.rate
    n = p.n
    f1 = np.sum((d * sig) ** 2) / n**2 * dt
    f2 = 0.5 * (np.sum((g - d) * phi**2) / n) ** 2 * dt**2
    f3 = np.sum(0.5 * (stot**4 - phi**4) * (g - d) ** 2
                + 2.0 * alpha * sig**2 * d**2
                - 2.0 * (alpha - r) * sig**2 * d * g) / n**2 * dt**2
    return VarianceDecomposition(f1=float(f1), f2=float(f2), f3=float(f3))


# ---------------------------------------------------------------------------
# experiments


def _batch_errors(p: PortfolioSpec, builder: Builder, system: Optional[MatchedSystem],
                  horizon: float, steps: int, reps: np.ndarray, seed: int) -> np.ndarray:
    """Terminal hedge error for replications ``reps``, compounded to the horizon."""
    t0 = p.initial.time
    dt = horizon / steps
    r = p.model.rate
    x = np.broadcast_to(np.array(p.initial.spots), (reps.size, p.n))
    total = np.zeros(reps.size)
    for k in range(steps):
        t = t0 + k * dt
        # the starting state is shared by every replication
        at = x[:1] if k == 0 else x
        price, delta, _ = book_greeks(p, at, t)
        if system is None:
            psi = delta
        else:
            psi = delta + _matched_deviations(p, at, t, system) / at
        cash = np.mean(price - psi * at, axis=-1)
        z = normal_block(seed, reps, k, p.n + 1)
        x1 = x * np.exp(log_increments(p.model, dt, z[:, 0], z[:, 1:]))
        err = _errors(p, psi, cash, price, x, x1, t, dt)
        total += err * math.exp(r * (horizon - (k + 1) * dt))
        x = x1
    return total


def _collect(fn, replications: int, workers: int, batch_size: int) -> np.ndarray:
    bounds = [(lo, min(lo + batch_size, replications)) for lo in range(0, replications, batch_size)]
    jobs = [np.arange(lo, hi, dtype=np.int64) for lo, hi in bounds]
    if workers <= 1:
        parts = [fn(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, jobs))
    return np.concatenate(parts)


def summarize(samples: np.ndarray, theory: Optional[VarianceDecomposition] = None) -> HedgeStats:
    n = samples.size
    var = float(np.var(samples, ddof=1))
    return HedgeStats(mean=float(np.mean(samples)), variance=var, std_error_of_mean=math.sqrt(var / n),
                      replications=n, theory=theory, samples=samples)


def _system_for(p: PortfolioSpec, builder: Builder) -> Optional[MatchedSystem]:
    return MatchedSystem(p.model.phi, builder.order) if builder.kind == "matched" else None


def run_path_experiment(p: PortfolioSpec, builder: Builder, horizon: float, steps: int, replications: int,
                        master_seed: int, workers: int = 1, batch_size: int = DEFAULT_BATCH) -> HedgeStats:
    """Rebalance at every step; replication k uses path index k of the seed contract."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if replications < 2:
        raise DomainError("replications must be >= 2")
    if not horizon > 0:
        raise DomainError("horizon must be > 0")
    if np.any(p.maturities < p.initial.time + horizon - 1e-12):
        raise DomainError("horizon extends beyond an option's maturity")
    system = _system_for(p, builder)
    samples = _collect(lambda reps: _batch_errors(p, builder, system, horizon, steps, reps, master_seed),
                       replications, workers, batch_size)
    return summarize(samples)


def run_one_period_experiment(p: PortfolioSpec, builder: Builder, dt: float, replications: int,
                              master_seed: int, workers: int = 1, batch_size: int = DEFAULT_BATCH) -> HedgeStats:
    if replications < 100:
        raise DomainError("replications must be >= 100")
    stats = run_path_experiment(p, builder, dt, 1, replications, master_seed, workers, batch_size)
    t = p.initial.time
    if builder.kind == "delta":
        stats.theory = var_delta_theory(p, t, dt)
    else:
        try:
            stats.theory = var_general_theory(p, build(builder, p, t), t, dt)
        except ModelConditionError:
            stats.theory = None
    return stats


def loglog_slope(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def uniform_portfolio(n: int, spot: float = 100.0, strike: float = 100.0, maturity: float = 1.0,
                      rate: float = 0.05, k0: float = 0.0, sigma_idio=0.2, phi=0.0) -> PortfolioSpec:
    """Book of n identical-spot ATM-style calls; ``phi``/``sigma_idio`` may be scalars or length-n."""
    from hedgelab.market import SecurityParams, build_model

    phis = np.broadcast_to(np.asarray(phi, float), (n,))
    sigs = np.broadcast_to(np.asarray(sigma_idio, float), (n,))
    model = build_model([SecurityParams(phi=float(f), sigma_idio=float(s)) for f, s in zip(phis, sigs)],
                        rate=rate, k0=k0, mode="risk_prices_given")
    return PortfolioSpec(model=model, options=tuple(OptionSpec(strike, maturity) for _ in range(n)),
                         initial=MarketState(spots=(spot,) * n))


def variance_below(a: np.ndarray, b: np.ndarray, factor: float = 1.0, z: float = 1.6448536269514722) -> bool:
    """One-sided test that Var(a) < factor * Var(b) at the level implied by ``z``.

    Uses the asymptotic standard error of a sample variance, sqrt((m4 - s^4)/n),
    and treats the two estimates as independent (conservative when they share draws).
    """
    def var_and_se(x):
        x = np.asarray(x, float)
        c = x - x.mean()
        s2 = float(np.mean(c * c))
        m4 = float(np.mean(c**4))
        return s2, math.sqrt(max(m4 - s2 * s2, 0.0) / x.size)

    va, sa = var_and_se(a)
    vb, sb = var_and_se(b)
    return (factor * vb - va) > z * math.hypot(sa, factor * sb)
