"""One-factor multivariate geometric Brownian motion with a counter-based shock stream.

Each security follows

    dX_i / X_i = alpha_i dt + phi_i dz_0 + sigma_i dz_i

with a shared systematic shock z_0 and independent idiosyncratic shocks z_i.
Steps are integrated exactly (lognormal), never by Euler.

Shocks are a pure function of ``(master_seed, path_index, step_index, position)``:
the stream key is ``mix64(seed ^ path*GOLDEN ^ rotl(step, 32))`` and draw ``d``
is ``mix64(key + (d + 1)*GOLDEN)``, i.e. the d-th SplitMix64 output of a
generator seeded with the key. Uniforms use the top 53 bits, offset by half an
ulp so they lie strictly inside (0, 1), and are mapped to normals by AS241.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from hedgelab.analytics import norm_inv_cdf
from hedgelab.errors import DegenerateError, DomainError

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_U64 = np.uint64


def mix64(z):
    """SplitMix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=_U64)
    with np.errstate(over="ignore"):  # numpy scalars warn on wraparound, arrays do not
        z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def stream_key(master_seed: int, path_index, step_index: int):
    """Per-(path, step) stream key; ``path_index`` may be an array."""
    step = int(step_index) & _MASK
    rot = ((step << 32) | (step >> 32)) & _MASK
    paths = np.asarray(path_index, dtype=_U64)
    mixed = (paths * _U64(GOLDEN)) ^ _U64((int(master_seed) & _MASK) ^ rot)
    return mix64(mixed)


def uniform_block(master_seed: int, path_index, step_index: int, count: int):
    """Uniforms with shape ``(len(path_index), count)`` from the keyed streams."""
    key = np.atleast_1d(stream_key(master_seed, path_index, step_index))
    counters = (np.arange(1, count + 1, dtype=_U64) * _U64(GOLDEN))
    bits = mix64(key[:, None] + counters[None, :])
    return ((bits >> _U64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal_block(master_seed: int, path_index, step_index: int, count: int):
    return norm_inv_cdf(uniform_block(master_seed, path_index, step_index, count))


@dataclass(frozen=True)
class SecurityParams:
    phi: float
    sigma_idio: float
    alpha: Optional[float] = None
    k_idio: float = 0.0

    @property
    def sigma_total(self) -> float:
        return math.sqrt(self.sigma_idio**2 + self.phi**2)


@dataclass(frozen=True)
class OneFactorModel:
    securities: tuple
    rate: float
    k0: float = 0.0

    @property
    def n(self) -> int:
        return len(self.securities)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([s.alpha for s in self.securities], dtype=float)

    @property
    def phi(self) -> np.ndarray:
        return np.array([s.phi for s in self.securities], dtype=float)

    @property
    def sigma_idio(self) -> np.ndarray:
        return np.array([s.sigma_idio for s in self.securities], dtype=float)

    @property
    def sigma_total(self) -> np.ndarray:
        return np.sqrt(self.sigma_idio**2 + self.phi**2)


@dataclass(frozen=True)
class ShockVector:
    z0: float
    z_idio: tuple


@dataclass(frozen=True)
class MarketState:
    spots: tuple
    time: float = 0.0

    def __post_init__(self):
        spots = tuple(float(s) for s in self.spots)
        if not spots:
            raise DomainError("market state needs at least one spot")
        if not all(s > 0 for s in spots):
            raise DomainError("all spots must be > 0")
        object.__setattr__(self, "spots", spots)


def build_model(
    securities: Sequence[SecurityParams],
    rate: float,
    k0: float = 0.0,
    mode: str = "risk_prices_given",
    allow_degenerate: bool = False,
) -> OneFactorModel:
    """Assemble an immutable model.

    ``mode="risk_prices_given"`` derives ``alpha_i = r + k0*phi_i + k_idio_i*sigma_i``;
    ``mode="alphas_given"`` keeps each security's own alpha. ``allow_degenerate``
    admits zero total volatility (static test worlds only).
    """
    if not securities:
        raise DomainError("model needs at least one security")
    if mode not in ("alphas_given", "risk_prices_given"):
        raise DomainError(f"unknown mode {mode!r}")
    built = []
    for i, sec in enumerate(securities):
        if sec.sigma_idio < 0:
            raise DomainError(f"security {i}: sigma_idio must be >= 0")
        if not sec.sigma_total > 0 and not allow_degenerate:
            raise DegenerateError(f"security {i} has zero total volatility")
        if mode == "risk_prices_given":
            sec = replace(sec, alpha=rate + k0 * sec.phi + sec.k_idio * sec.sigma_idio)
        elif sec.alpha is None:
            raise DomainError(f"security {i}: alpha required in alphas_given mode")
        built.append(sec)
    return OneFactorModel(securities=tuple(built), rate=float(rate), k0=float(k0))


def covariance(model: OneFactorModel) -> np.ndarray:
    phi = model.phi
    return np.outer(phi, phi) + np.diag(model.sigma_idio**2)


def draw_shocks(master_seed: int, path_index: int, step_index: int, n: int) -> ShockVector:
    z = normal_block(master_seed, [path_index], step_index, n + 1)[0]
    return ShockVector(z0=float(z[0]), z_idio=tuple(float(v) for v in z[1:]))


def log_increments(model: OneFactorModel, dt: float, z0, z_idio):
    """Exact log-return over ``dt``; ``z0`` shape (m,), ``z_idio`` shape (m, n)."""
    sq = math.sqrt(dt)
    drift = (model.alpha - 0.5 * model.sigma_total**2) * dt
    return drift + np.multiply.outer(z0, model.phi * sq) + z_idio * (model.sigma_idio * sq)


def step_exact(model: OneFactorModel, state: MarketState, dt: float, shocks: ShockVector) -> MarketState:
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if len(shocks.z_idio) != model.n:
        raise DomainError("shock vector length does not match the model")
    incr = log_increments(model, dt, np.array([shocks.z0]), np.array([shocks.z_idio]))[0]
    spots = np.array(state.spots) * np.exp(incr)
    return MarketState(spots=tuple(spots), time=state.time + dt)


def simulate_path(model: OneFactorModel, initial: MarketState, horizon: float, steps: int,
                  path_index: int, master_seed: int) -> list:
    if steps < 1:
        raise DomainError("steps must be >= 1")
    dt = horizon / steps
    path = [initial]
    for k in range(steps):
        path.append(step_exact(model, path[-1], dt, draw_shocks(master_seed, path_index, k, model.n)))
    return path


def simulate_terminal(model: OneFactorModel, initial: MarketState, horizon: float, steps: int,
                      path_indices, master_seed: int) -> np.ndarray:
    """Vectorised terminal spots, shape (len(path_indices), n); same draws as ``simulate_path``."""
    dt = horizon / steps
    paths = np.asarray(path_indices)
    log_x = np.tile(np.log(np.array(initial.spots)), (paths.size, 1))
    for k in range(steps):
        z = normal_block(master_seed, paths, k, model.n + 1)
        log_x += log_increments(model, dt, z[:, 0], z[:, 1:])
    return np.exp(log_x)
