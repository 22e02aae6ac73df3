"""Single-asset Monte Carlo pricing with variance reduction.

Paths follow risk-neutral GBM stepped exactly; path ``k`` consumes the first
draw of stream ``(master_seed, k, step)`` for each step, so every estimator
driven by the same seed sees the same underlying normals. Estimators:

* basic        plain mean of discounted payoffs
* importance   per-step drift ``tau_step`` on the driving normal, reweighted by
               the likelihood ratio ``exp(sum(-tau Z + tau^2/2))``
* antithetic   pair-means of a path and its negated twin
* control      discounted terminal spot (mean S0) with a pilot-estimated slope
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from hedgelab.analytics import OptionSpec
from hedgelab.errors import DegenerateError, DomainError, OptimizationError, WeightOverflowError
from hedgelab.market import normal_block

Z95 = 1.959964
DEFAULT_BATCH = 16384
ESTIMATORS = ("basic", "is0", "is1", "is2", "antithetic", "cv")


@dataclass(frozen=True)
class McConfig:
    spot: float
    option: OptionSpec
    rate: float
    vol: float
    n_paths: int
    steps: int = 1
    master_seed: int = 0
    degenerate: bool = False  # admit vol == 0
    payoff: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.spot > 0:
            raise DomainError(f"spot must be > 0, got {self.spot}")
        if self.n_paths < 2:
            raise DomainError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.vol < 0 or (self.vol == 0 and not self.degenerate):
            raise DomainError(f"vol must be > 0 (got {self.vol}); set degenerate=True for vol = 0")
        if not self.option.maturity > 0:
            raise DomainError("option maturity must be > 0")

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.option.maturity)

    def payoff_of(self, terminal: np.ndarray) -> np.ndarray:
        if self.payoff is not None:
            return np.asarray(self.payoff(terminal), dtype=float)
        if self.option.kind == "call":
            return np.maximum(terminal - self.option.strike, 0.0)
        return np.maximum(self.option.strike - terminal, 0.0)


@dataclass(frozen=True)
class DriftSpec:
    """Polynomial drift ``tau(u) = c0 + c1 u + c2 u^2`` at u = (step + 1/2) / steps."""

    degree: int
    coeffs: tuple
    objective: Optional[float] = None  # pilot second moment, when optimised

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise DomainError(f"drift degree must be 0, 1 or 2, got {self.degree}")
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != self.degree + 1:
            raise DomainError(f"degree {self.degree} drift needs {self.degree + 1} coefficients, got {len(coeffs)}")
        if not all(math.isfinite(c) for c in coeffs):
            raise DomainError("drift coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zero(cls, degree: int = 0) -> "DriftSpec":
        return cls(degree, (0.0,) * (degree + 1))

    def vector(self, steps: int) -> np.ndarray:
        u = (np.arange(steps) + 0.5) / steps
        return np.polynomial.polynomial.polyval(u, self.coeffs)


@dataclass
class McEstimate:
    value: float
    std_error: float
    ci95_half_width: float
    sample_variance: float
    n_used: int
    running_means: list
    samples: np.ndarray = field(default=None, repr=False)


def checkpoints(n: int, dense: int = 1000, per_decade: int = 60) -> np.ndarray:
    """Every index up to ``dense``, then log-spaced out to ``n`` (1-based, inclusive)."""
    head = np.arange(1, min(n, dense) + 1)
    if n <= dense:
        return head
    decades = math.log10(n / dense)
    tail = np.unique(np.round(np.geomspace(dense, n, max(2, int(math.ceil(decades * per_decade)) + 1))).astype(np.int64))
    return np.unique(np.concatenate([head, tail, [n]]))


def estimate_from(samples: np.ndarray) -> McEstimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    var = float(np.var(samples, ddof=1))
    se = math.sqrt(var / n)
    idx = checkpoints(n)
    running = np.cumsum(samples)[idx - 1] / idx
    return McEstimate(
        value=float(np.mean(samples)),
        std_error=se,
        ci95_half_width=Z95 * se,
        sample_variance=var,
        n_used=n,
        running_means=list(zip(idx.tolist(), running.tolist())),
        samples=samples,
    )


def running_ci(samples: np.ndarray, idx: Optional[np.ndarray] = None):
    """95% half-widths of the running mean at checkpoint indices (index >= 2)."""
    samples = np.asarray(samples, dtype=float)
    if idx is None:
        idx = checkpoints(samples.size)
    idx = idx[idx >= 2]
    s1 = np.cumsum(samples)[idx - 1]
    s2 = np.cumsum(samples * samples)[idx - 1]
    var = np.maximum((s2 - s1 * s1 / idx) / (idx - 1), 0.0)
    return idx, Z95 * np.sqrt(var / idx)


# ---------------------------------------------------------------------------
# path generation


def shocks(cfg: McConfig, paths: np.ndarray, seed: Optional[int] = None) -> np.ndarray:
    """Driving normals, shape (len(paths), steps)."""
    seed = cfg.master_seed if seed is None else seed
    out = np.empty((paths.size, cfg.steps))
    for k in range(cfg.steps):
        out[:, k] = normal_block(seed, paths, k, 1)[:, 0]
    return out


def terminal_spots(cfg: McConfig, z: np.ndarray) -> np.ndarray:
    dt = cfg.option.maturity / cfg.steps
    drift = (cfg.rate - 0.5 * cfg.vol**2) * dt * cfg.steps
    return cfg.spot * np.exp(drift + cfg.vol * math.sqrt(dt) * np.sum(z, axis=1))


def _log_weights(tau: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.sum(-tau * z + 0.5 * tau * tau, axis=1)


def _weighted(cfg: McConfig, eps: np.ndarray, tau: np.ndarray):
    z = eps + tau
    with np.errstate(over="ignore"):  # callers check for non-finite weights
        w = np.exp(_log_weights(tau, z))
    y = cfg.discount * cfg.payoff_of(terminal_spots(cfg, z)) * w
    return y, w


def _run_batches(cfg: McConfig, fn, count: int, workers: int, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    jobs = [np.arange(lo, min(lo + batch_size, count), dtype=np.int64) for lo in range(0, count, batch_size)]
    if workers <= 1:
        parts = [fn(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, jobs))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# estimators


def mc_importance(cfg: McConfig, drift: DriftSpec, workers: int = 1) -> McEstimate:
    tau = drift.vector(cfg.steps)

    def batch(paths):
        y, w = _weighted(cfg, shocks(cfg, paths), tau)
        if not np.all(np.isfinite(w)):
            raise WeightOverflowError(f"likelihood-ratio weight overflow for drift {drift.coeffs}")
        return y

    return estimate_from(_run_batches(cfg, batch, cfg.n_paths, workers))


def mc_basic(cfg: McConfig, workers: int = 1) -> McEstimate:
    return mc_importance(cfg, DriftSpec.zero(), workers)


def importance_weights(cfg: McConfig, drift: DriftSpec, workers: int = 1) -> np.ndarray:
    tau = drift.vector(cfg.steps)
    return _run_batches(cfg, lambda paths: _weighted(cfg, shocks(cfg, paths), tau)[1], cfg.n_paths, workers)


def mc_antithetic(cfg: McConfig, workers: int = 1) -> McEstimate:
    """Pair k reuses path k's normals and their negation; statistics over pair-means."""
    if cfg.n_paths % 2:
        raise DomainError(f"antithetic sampling needs an even n_paths, got {cfg.n_paths}")

    def batch(paths):
        eps = shocks(cfg, paths)
        up = cfg.payoff_of(terminal_spots(cfg, eps))
        down = cfg.payoff_of(terminal_spots(cfg, -eps))
        return cfg.discount * 0.5 * (up + down)

    return estimate_from(_run_batches(cfg, batch, cfg.n_paths // 2, workers))


def _control_pair(cfg: McConfig, paths, seed):
    s_t = terminal_spots(cfg, shocks(cfg, paths, seed))
    return cfg.discount * cfg.payoff_of(s_t), cfg.discount * s_t


def control_coefficient(cfg: McConfig, pilot_paths: int, pilot_seed: int) -> float:
    y, x = _control_pair(cfg, np.arange(pilot_paths, dtype=np.int64), pilot_seed)
    xc = x - x.mean()
    var = float(np.mean(xc * xc))
    if not var > 0:
        raise DegenerateError("control variate has zero variance on the pilot sample")
    return float(np.mean((y - y.mean()) * xc)) / var


def mc_control_variate(cfg: McConfig, pilot_paths: int = 10_000, pilot_seed: Optional[int] = None,
                       workers: int = 1) -> McEstimate:
    """Control = discounted terminal spot, expectation S0; slope from an independent pilot."""
    if pilot_paths < 1000:
        raise DomainError(f"pilot_paths must be >= 1000, got {pilot_paths}")
    pilot_seed = default_pilot_seed(cfg.master_seed) if pilot_seed is None else pilot_seed
    b = control_coefficient(cfg, pilot_paths, pilot_seed)

    def batch(paths):
        y, x = _control_pair(cfg, paths, cfg.master_seed)
        return y - b * (x - cfg.spot)

    return estimate_from(_run_batches(cfg, batch, cfg.n_paths, workers))


def default_pilot_seed(master_seed: int) -> int:
    return (int(master_seed) + 1) & ((1 << 64) - 1)


# ---------------------------------------------------------------------------
# drift optimisation


def second_moment_objective(cfg: McConfig, degree: int, eps: np.ndarray):
    """Pilot estimates as functions of the drift coefficients.

    Returns ``(relative, second_moment)``. ``second_moment`` is the pilot mean of
    the squared weighted discounted payoff. ``relative`` divides it by the
    squared pilot mean; the true mean does not depend on the drift, so both
    share the population minimiser, but the relative form cannot collapse to
    zero when a few extreme weights dominate the pilot sample.
    """
    u = (np.arange(cfg.steps) + 0.5) / cfg.steps
    basis = np.vstack([u**j for j in range(degree + 1)])  # (degree+1, steps)

    def contributions(coeffs):
        tau = np.asarray(coeffs, float) @ basis
        z = eps + tau
        pay = cfg.discount * cfg.payoff_of(terminal_spots(cfg, z))
        with np.errstate(over="ignore", invalid="ignore"):
            return pay * np.exp(_log_weights(tau, z))

    def second_moment(coeffs):
        y = contributions(coeffs)
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(np.mean(y * y))
        return val if math.isfinite(val) else math.inf

    def relative(coeffs):
        y = contributions(coeffs)
        with np.errstate(over="ignore", invalid="ignore"):
            mean = float(np.mean(y))
            val = float(np.mean(y * y)) / (mean * mean) if mean != 0.0 else math.inf
        return val if math.isfinite(val) else math.inf

    return relative, second_moment


def _payoff_identically_zero(cfg: McConfig, eps: np.ndarray) -> bool:
    for g in np.linspace(-3.0, 3.0, 41):
        if np.any(cfg.payoff_of(terminal_spots(cfg, eps + g)) != 0.0):
            return False
    return True


def optimize_drift(cfg: McConfig, degree: int, pilot_paths: int = 20_000,
                   pilot_seed: Optional[int] = None) -> DriftSpec:
    """Minimise the pilot second moment with common random numbers.

    Nelder-Mead runs from the zero vector and from the best constant drift on
    a 41-point grid over [-3, 3]; ties go to the smaller coefficient vector.
    The reported ``objective`` is the pilot second moment at the optimum.
    """
    if pilot_paths < 1000:
        raise DomainError(f"pilot_paths must be >= 1000, got {pilot_paths}")
    DriftSpec.zero(degree)  # validates degree
    pilot_seed = default_pilot_seed(cfg.master_seed) if pilot_seed is None else pilot_seed
    eps = shocks(cfg, np.arange(pilot_paths, dtype=np.int64), pilot_seed)
    if _payoff_identically_zero(cfg, eps):
        # flat (zero) objective: nothing to reduce, tie goes to the zero drift
        return DriftSpec(degree, (0.0,) * (degree + 1), objective=0.0)
    objective, second_moment = second_moment_objective(cfg, degree, eps)

    grid = np.linspace(-3.0, 3.0, 41)
    grid_vals = [objective([g] + [0.0] * degree) for g in grid]
    zero = np.zeros(degree + 1)
    starts = [zero]
    best_grid = int(np.argmin(grid_vals))
    if math.isfinite(grid_vals[best_grid]):
        starts.append(np.r_[grid[best_grid], np.zeros(degree)])

    candidates = []
    for x0 in starts:
        if not math.isfinite(objective(x0)):
            continue
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 4000, "maxfev": 8000})
        for x in (x0, np.asarray(res.x, float)):
            f = objective(x)
            if math.isfinite(f):
                candidates.append((f, float(np.linalg.norm(x)), x))
    if not candidates:
        raise OptimizationError("second-moment objective is non-finite at every start")
    _, _, coeffs = min(candidates, key=lambda c: (c[0], c[1]))
    return DriftSpec(degree, tuple(coeffs), objective=second_moment(coeffs))


# ---------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonRow:
    estimator: str
    estimate: McEstimate
    wall_time: float
    variance_reduction: float
    drift: Optional[DriftSpec] = None


def run_estimator(name: str, cfg: McConfig, pilot_paths: int = 20_000, pilot_seed: Optional[int] = None,
                  workers: int = 1):
    if name == "basic":
        return mc_basic(cfg, workers), None
    if name in ("is0", "is1", "is2"):
        drift = optimize_drift(cfg, int(name[2]), pilot_paths, pilot_seed)
        return mc_importance(cfg, drift, workers), drift
    if name == "antithetic":
        return mc_antithetic(cfg, workers), None
    if name == "cv":
        return mc_control_variate(cfg, pilot_paths, pilot_seed, workers), None
    raise DomainError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")


def compare_estimators(cfg: McConfig, estimators: Sequence[str] = ESTIMATORS, pilot_paths: int = 20_000,
                       pilot_seed: Optional[int] = None, workers: int = 1) -> list:
    """One row per estimator; reduction factor = basic std_error^2 / row std_error^2 at equal path budget."""
    names = list(estimators)
    order = ["basic"] + [e for e in names if e != "basic"]
    rows = {}
    for name in order:
        start = time.perf_counter()
        est, drift = run_estimator(name, cfg, pilot_paths, pilot_seed, workers)
        rows[name] = (est, time.perf_counter() - start, drift)
    base_se2 = rows["basic"][0].std_error ** 2
    out = []
    for name in names:
        est, wall, drift = rows[name]
        se2 = est.std_error**2
        factor = base_se2 / se2 if se2 > 0 else math.inf
        out.append(ComparisonRow(name, est, wall, 1.0 if name == "basic" else factor, drift))
    return out
