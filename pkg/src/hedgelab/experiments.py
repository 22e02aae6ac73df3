"""Experiment runners behind the CLI subcommands.

Each kind has a ``plan`` step that turns validated parameters into module
objects (so domain errors surface before any simulation) and returns a job.
Running the job yields named CSV tables plus per-row wall times; the tables
never contain timings, which keeps them byte-identical across runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from hedgelab import hedging as hg
from hedgelab import montecarlo as mc
from hedgelab.analytics import OptionSpec, PricingInputs, bs_quote, log_space_derivatives
from hedgelab.config import ExperimentConfig
from hedgelab.csvio import CsvTable
from hedgelab.errors import DomainError
from hedgelab.pde_fd import GridSpec, estimate_order, solve_bs_pde

# Fixed output schemas, one entry per file name.
HEADERS = {
    "price.csv": ("spot", "strike", "rate", "vol", "tau", "option_kind", "price", "d1", "d2", "delta", "gamma"),
    "greeks.csv": ("spot", "order", "value"),
    "pde_summary.csv": ("scheme", "n_space", "n_time", "s_max", "price_at_spot", "analytic_price",
                        "abs_error_at_spot", "max_abs_error"),
    "pde_slice.csv": ("scheme", "n_space", "n_time", "spot", "pde_value", "analytic_value", "difference"),
    "fd_samples.csv": ("scheme", "h", "abs_error"),
    "fd_order.csv": ("scheme", "order", "r_squared"),
    "hedge_one_period.csv": ("builder", "n", "dt", "replications", "mean", "variance", "std",
                             "std_error_of_mean", "theory_f1", "theory_f2", "theory_f3", "theory_total"),
    "hedge_path.csv": ("builder", "n", "horizon", "steps", "dt", "replications", "mean", "variance", "std",
                       "std_error_of_mean"),
    "hedge_path_hist.csv": ("builder", "steps", "bin_lo", "bin_hi", "count"),
    "hedge_sweep.csv": ("sweep", "value", "n", "dt", "replications", "mean", "variance", "std",
                        "theory_total", "theory_std"),
    "hedge_sweep_fit.csv": ("sweep", "quantity", "empirical_slope", "theory_slope"),
    "mc_summary.csv": ("estimator", "value", "std_error", "ci95_half_width", "sample_variance", "n_used",
                       "drift_degree", "drift_c0", "drift_c1", "drift_c2", "drift_objective"),
    "mc_running.csv": ("estimator", "samples", "paths", "running_mean", "ci95_half_width"),
    "mc_compare.csv": ("estimator", "value", "std_error", "ci95_half_width", "sample_variance", "n_used",
                       "variance_reduction_factor", "drift_degree", "drift_c0", "drift_c1", "drift_c2",
                       "drift_objective"),
    "drift_opt.csv": ("strike", "option_kind", "degree", "c0", "c1", "c2", "pilot_second_moment",
                      "relative_second_moment"),
    "drift_vectors.csv": ("strike", "option_kind", "degree", "step", "u", "tau"),
}
OUTPUTS = {
    "price": ("price.csv",),
    "greeks": ("greeks.csv",),
    "pde": ("pde_summary.csv", "pde_slice.csv"),
    "fd_order": ("fd_samples.csv", "fd_order.csv"),
    "hedge_one_period": ("hedge_one_period.csv",),
    "hedge_path": ("hedge_path.csv", "hedge_path_hist.csv"),
    "hedge_sweep": ("hedge_sweep.csv", "hedge_sweep_fit.csv"),
    "mc_single": ("mc_summary.csv", "mc_running.csv"),
    "mc_compare": ("mc_compare.csv", "mc_running.csv"),
    "drift_opt": ("drift_opt.csv", "drift_vectors.csv"),
}
HIST_BINS = 60
FD_FUNCTIONS = {
    "exp": (math.exp, math.exp),
    "sin": (math.sin, math.cos),
    "square": (lambda x: x * x, lambda x: 2.0 * x),
}


@dataclass
class RunResult:
    tables: Dict[str, CsvTable]
    timings: List[dict] = field(default_factory=list)


Job = Callable[[int], RunResult]


def _new_tables(kind):
    return {name: CsvTable(HEADERS[name]) for name in OUTPUTS[kind]}


class _Timer:
    def __init__(self, result: RunResult, label: str):
        self.result, self.label = result, label

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.result.timings.append({"row": self.label, "seconds": time.perf_counter() - self.start})


# ---------------------------------------------------------------------------
# analytics / pde


def _plan_price(p, cfg):
    opt = OptionSpec(p.strike, max(p.taus), p.option_kind)  # each row prices at its own tau
    grid = [PricingInputs(s, p.rate, v, t) for s in p.spots for v in p.vols for t in p.taus]

    def job(workers):
        res = RunResult(_new_tables("price"))
        table = res.tables["price.csv"]
        with _Timer(res, "price"):
            for inp in grid:
                q = bs_quote(inp, opt)
                table.append(inp.spot, p.strike, inp.rate, inp.vol, inp.tau, p.option_kind,
                             q.price, q.d1, q.d2, q.delta, q.gamma)
        return res
    return job


def _plan_greeks(p, cfg):
    opt = OptionSpec(p.strike, p.tau, p.option_kind)
    for s in p.spots:
        PricingInputs(s, p.rate, p.vol, p.tau)

    def job(workers):
        res = RunResult(_new_tables("greeks"))
        table = res.tables["greeks.csv"]
        with _Timer(res, "greeks"):
            values = log_space_derivatives(np.array(p.spots), opt.strike, p.rate, p.vol, p.tau,
                                           p.max_order, opt.kind)
            for i, s in enumerate(p.spots):
                for k in range(p.max_order + 1):
                    table.append(s, k, float(values[k, i]))
        return res
    return job


def _plan_pde(p, cfg):
    opt = OptionSpec(p.strike, p.maturity, p.option_kind)
    grids = [GridSpec(g.n_space, g.n_time, g.scheme, p.s_max) for g in p.grids]

    def job(workers):
        res = RunResult(_new_tables("pde"))
        summary, slice_ = res.tables["pde_summary.csv"], res.tables["pde_slice.csv"]
        analytic = bs_quote(PricingInputs(p.spot, p.rate, p.vol, p.maturity), opt).price
        for g in grids:
            label = f"{g.scheme.value}:{g.n_space}x{g.n_time}"
            with _Timer(res, label):
                sol = solve_bs_pde(opt, p.rate, p.vol, p.spot, g, compare_analytic=True)
            summary.append(g.scheme.value, g.n_space, g.n_time, float(sol.s_grid[-1]), sol.price_at_spot,
                           analytic, abs(sol.price_at_spot - analytic), sol.max_abs_error_vs_analytic)
            for s, v, a in zip(sol.s_grid, sol.values[0], sol.analytic_row):
                slice_.append(g.scheme.value, g.n_space, g.n_time, float(s), float(v), float(a), float(v - a))
        return res
    return job


def _plan_fd_order(p, cfg):
    f, df = FD_FUNCTIONS[p.function]

    def job(workers):
        res = RunResult(_new_tables("fd_order"))
        for scheme in p.schemes:
            with _Timer(res, scheme):
                est = estimate_order(f, p.x, scheme, p.h_seq, true_derivative=df(p.x))
            for h, err in est.samples:
                res.tables["fd_samples.csv"].append(scheme, h, err)
            res.tables["fd_order.csv"].append(scheme, est.order, est.r_squared)
        return res
    return job


# ---------------------------------------------------------------------------
# hedging


def portfolio_from(p, n=None) -> hg.PortfolioSpec:
    n = p.n if n is None else int(n)
    phi = np.linspace(p.phi_range[0], p.phi_range[1], n) if p.phi_range is not None else p.phi
    return hg.uniform_portfolio(n, spot=p.spot, strike=p.strike, maturity=p.maturity, rate=p.rate,
                                k0=p.k0, sigma_idio=p.sigma_idio, phi=phi)


def _theory_cells(theory):
    if theory is None:
        return (None, None, None, None)
    return (theory.f1, theory.f2, theory.f3, theory.total)


def _plan_hedge_one_period(p, cfg):
    port = portfolio_from(p)
    builders = [hg.Builder.parse(b) for b in p.builders]
    for b in builders:
        hg.build(b, port, 0.0)  # rank/moment checks up front

    def job(workers):
        res = RunResult(_new_tables("hedge_one_period"))
        for b in builders:
            with _Timer(res, str(b)):
                st = hg.run_one_period_experiment(port, b, p.dt, p.replications, cfg.master_seed, workers)
            res.tables["hedge_one_period.csv"].append(str(b), port.n, p.dt, st.replications, st.mean,
                                                      st.variance, st.std, st.std_error_of_mean,
                                                      *_theory_cells(st.theory))
        return res
    return job


def _plan_hedge_path(p, cfg):
    port = portfolio_from(p)
    builders = [hg.Builder.parse(b) for b in p.builders]
    for b in builders:
        hg.build(b, port, 0.0)

    def job(workers):
        res = RunResult(_new_tables("hedge_path"))
        runs = []
        for b in builders:
            for steps in p.steps:
                with _Timer(res, f"{b}:{steps}"):
                    st = hg.run_path_experiment(port, b, p.horizon, steps, p.replications, cfg.master_seed,
                                                workers)
                runs.append((b, steps, st))
                res.tables["hedge_path.csv"].append(str(b), port.n, p.horizon, steps, p.horizon / steps,
                                                    st.replications, st.mean, st.variance, st.std,
                                                    st.std_error_of_mean)
        lo = min(float(st.samples.min()) for _, _, st in runs)
        hi = max(float(st.samples.max()) for _, _, st in runs)
        if not hi > lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, HIST_BINS + 1)
        for b, steps, st in runs:
            counts, _ = np.histogram(st.samples, bins=edges)
            for i, c in enumerate(counts):
                res.tables["hedge_path_hist.csv"].append(str(b), steps, float(edges[i]), float(edges[i + 1]),
                                                         int(c))
        return res
    return job


def _plan_hedge_sweep(p, cfg):
    builder = hg.Builder.parse(p.builder)
    if p.sweep == "dt":
        points = [(float(v), portfolio_from(p), float(v)) for v in p.values]
    else:
        points = [(float(v), portfolio_from(p, int(v)), p.dt) for v in p.values]
    for _, port, dt in points:
        if dt > p.maturity:
            raise DomainError(f"dt={dt} exceeds maturity")
        hg.build(builder, port, 0.0)

    def job(workers):
        res = RunResult(_new_tables("hedge_sweep"))
        xs, emp, theo = [], [], []
        for value, port, dt in points:
            with _Timer(res, f"{p.sweep}={value:g}"):
                st = hg.run_one_period_experiment(port, builder, dt, p.replications, cfg.master_seed, workers)
            total = st.theory.total if st.theory is not None else None
            res.tables["hedge_sweep.csv"].append(p.sweep, value, port.n, dt, st.replications, st.mean,
                                                 st.variance, st.std, total,
                                                 math.sqrt(total) if total is not None else None)
            xs.append(value)
            emp.append(st.std if p.sweep == "dt" else st.variance)
            theo.append(None if total is None else (math.sqrt(total) if p.sweep == "dt" else total))
        quantity = "std" if p.sweep == "dt" else "variance"
        theory_slope = hg.loglog_slope(xs, theo) if all(t is not None and t > 0 for t in theo) else None
        res.tables["hedge_sweep_fit.csv"].append(p.sweep, quantity, hg.loglog_slope(xs, emp), theory_slope)
        return res
    return job


# ---------------------------------------------------------------------------
# monte carlo


def mc_config_from(p, seed, strike=None, kind=None) -> mc.McConfig:
    opt = OptionSpec(p.strike if strike is None else strike, p.maturity, p.option_kind if kind is None else kind)
    return mc.McConfig(spot=p.spot, option=opt, rate=p.rate, vol=p.vol, n_paths=p.n_paths, steps=p.steps,
                       master_seed=seed)


def _drift_cells(drift):
    if drift is None:
        return (None, None, None, None, None)
    c = list(drift.coeffs) + [None] * (3 - len(drift.coeffs))
    return (drift.degree, c[0], c[1], c[2], drift.objective)


def _running_rows(table, name, est):
    per_sample = 2 if name == "antithetic" else 1
    idx, half = mc.running_ci(est.samples)
    means = np.cumsum(est.samples)[idx - 1] / idx
    for i, m, h in zip(idx.tolist(), means.tolist(), half.tolist()):
        table.append(name, i, i * per_sample, m, h)


def _plan_mc_single(p, cfg):
    mcfg = mc_config_from(p, cfg.master_seed)

    def job(workers):
        res = RunResult(_new_tables("mc_single"))
        with _Timer(res, p.estimator):
            est, drift = mc.run_estimator(p.estimator, mcfg, p.pilot_paths, p.pilot_seed, workers)
        res.tables["mc_summary.csv"].append(p.estimator, est.value, est.std_error, est.ci95_half_width,
                                            est.sample_variance, est.n_used, *_drift_cells(drift))
        _running_rows(res.tables["mc_running.csv"], p.estimator, est)
        return res
    return job


def _plan_mc_compare(p, cfg):
    mcfg = mc_config_from(p, cfg.master_seed)

    def job(workers):
        res = RunResult(_new_tables("mc_compare"))
        rows = mc.compare_estimators(mcfg, p.estimators, p.pilot_paths, p.pilot_seed, workers)
        for row in rows:
            est = row.estimate
            res.timings.append({"row": row.estimator, "seconds": row.wall_time})
            res.tables["mc_compare.csv"].append(row.estimator, est.value, est.std_error, est.ci95_half_width,
                                                est.sample_variance, est.n_used, row.variance_reduction,
                                                *_drift_cells(row.drift))
            _running_rows(res.tables["mc_running.csv"], row.estimator, est)
        return res
    return job


def _plan_drift_opt(p, cfg):
    strikes = p.strikes if p.strikes is not None else [p.strike]
    kinds = p.option_kinds if p.option_kinds is not None else [p.option_kind]
    cases = [(k, kind, mc_config_from(p, cfg.master_seed, k, kind)) for kind in kinds for k in strikes]

    def job(workers):
        res = RunResult(_new_tables("drift_opt"))
        for strike, kind, mcfg in cases:
            eps = mc.shocks(mcfg, np.arange(p.pilot_paths, dtype=np.int64),
                            mc.default_pilot_seed(mcfg.master_seed) if p.pilot_seed is None else p.pilot_seed)
            for degree in p.degrees:
                with _Timer(res, f"{kind}:{strike:g}:deg{degree}"):
                    drift = mc.optimize_drift(mcfg, degree, p.pilot_paths, p.pilot_seed)
                relative, _ = mc.second_moment_objective(mcfg, degree, eps)
                c = list(drift.coeffs) + [None] * (3 - len(drift.coeffs))
                rel = relative(np.asarray(drift.coeffs)) if drift.objective else None
                res.tables["drift_opt.csv"].append(strike, kind, degree, c[0], c[1], c[2], drift.objective, rel)
                u = (np.arange(mcfg.steps) + 0.5) / mcfg.steps
                for k, (uk, tk) in enumerate(zip(u.tolist(), drift.vector(mcfg.steps).tolist())):
                    res.tables["drift_vectors.csv"].append(strike, kind, degree, k, uk, tk)
        return res
    return job


PLANNERS = {
    "price": _plan_price,
    "greeks": _plan_greeks,
    "pde": _plan_pde,
    "fd_order": _plan_fd_order,
    "hedge_one_period": _plan_hedge_one_period,
    "hedge_path": _plan_hedge_path,
    "hedge_sweep": _plan_hedge_sweep,
    "mc_single": _plan_mc_single,
    "mc_compare": _plan_mc_compare,
    "drift_opt": _plan_drift_opt,
}


def plan(cfg: ExperimentConfig) -> Job:
    """Build module objects for ``cfg``; raises module domain errors before any work."""
    return PLANNERS[cfg.kind](cfg.params, cfg)
