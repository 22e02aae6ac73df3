"""Experiment configuration: JSON ingestion and per-kind schemas.

A config file is a single JSON object holding the parameters of one
experiment kind. Optional common keys: ``kind`` (must match the subcommand),
``master_seed`` and ``output_dir``. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from hedgelab.errors import ConfigSchemaError, ConfigSyntaxError, ConfigValidationError

DEFAULT_SEED = 20240601
U64_MAX = (1 << 64) - 1

OptionKind = Literal["call", "put"]
Positive = Field(gt=0)


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PriceParams(_Params):
    spots: List[float] = [100.0]
    strike: float = Field(100.0, gt=0)
    rate: float = 0.05
    vols: List[float] = [0.2]
    taus: List[float] = [1.0]
    option_kind: OptionKind = "call"

    @model_validator(mode="after")
    def _check(self):
        if not self.spots or any(s <= 0 for s in self.spots):
            raise ValueError("spots must be a non-empty list of values > 0")
        if not self.vols or any(v < 0 for v in self.vols):
            raise ValueError("vols must be a non-empty list of values >= 0")
        if not self.taus or any(t < 0 for t in self.taus):
            raise ValueError("taus must be a non-empty list of values >= 0")
        return self


class GreeksParams(_Params):
    spots: List[float] = [100.0]
    strike: float = Field(100.0, gt=0)
    rate: float = 0.05
    vol: float = Field(0.2, gt=0)
    tau: float = Field(1.0, gt=0)
    option_kind: OptionKind = "call"
    max_order: int = Field(6, ge=0, le=6)

    @model_validator(mode="after")
    def _check(self):
        if not self.spots or any(s <= 0 for s in self.spots):
            raise ValueError("spots must be a non-empty list of values > 0")
        return self


class GridParams(_Params):
    scheme: Literal["explicit", "implicit", "crank_nicolson"] = "crank_nicolson"
    n_space: int = Field(400, ge=3)
    n_time: int = Field(400, ge=1)


class PdeParams(_Params):
    spot: float = Field(100.0, gt=0)
    strike: float = Field(100.0, gt=0)
    rate: float = 0.05
    vol: float = Field(0.2, gt=0)
    maturity: float = Field(1.0, gt=0)
    option_kind: OptionKind = "call"
    s_max: Optional[float] = Field(None, gt=0)
    grids: List[GridParams] = [
        GridParams(scheme="crank_nicolson", n_space=400, n_time=400),
        GridParams(scheme="crank_nicolson", n_space=800, n_time=800),
        GridParams(scheme="implicit", n_space=400, n_time=400),
        GridParams(scheme="explicit", n_space=200, n_time=2000),
    ]

    @model_validator(mode="after")
    def _check(self):
        s_max = self.s_max if self.s_max is not None else 4.0 * max(self.strike, self.spot)
        if s_max <= self.strike:
            raise ValueError("s_max must exceed the strike")
        if self.spot > s_max:
            raise ValueError("spot must lie inside [0, s_max]")
        if not self.grids:
            raise ValueError("grids must not be empty")
        return self


class FdOrderParams(_Params):
    function: Literal["exp", "sin", "square"] = "exp"
    x: float = 1.0
    schemes: List[Literal["forward", "backward", "central"]] = ["forward", "backward", "central"]
    h_seq: List[float] = [1e-1, 1e-2, 1e-3, 1e-4]

    @model_validator(mode="after")
    def _check(self):
        if len(self.h_seq) < 4:
            raise ValueError("h_seq needs at least 4 steps")
        if any(h <= 0 for h in self.h_seq) or any(b >= a for a, b in zip(self.h_seq, self.h_seq[1:])):
            raise ValueError("h_seq must be positive and strictly decreasing")
        return self


Loading = Union[float, List[float]]


class PortfolioParams(_Params):
    n: int = Field(1, ge=1)
    spot: float = Field(100.0, gt=0)
    strike: float = Field(100.0, gt=0)
    maturity: float = Field(1.0, gt=0)
    rate: float = 0.05
    k0: float = 0.0
    phi: Loading = 0.2
    phi_range: Optional[List[float]] = None  # [lo, hi], equally spaced over the n securities
    sigma_idio: Loading = 0.0

    @model_validator(mode="after")
    def _check_portfolio(self):
        if self.phi_range is not None and len(self.phi_range) != 2:
            raise ValueError("phi_range must be [lo, hi]")
        for name in ("phi", "sigma_idio"):
            val = getattr(self, name)
            if isinstance(val, list) and len(val) != self.n:
                raise ValueError(f"{name} list must have length n={self.n}")
        sig = self.sigma_idio if isinstance(self.sigma_idio, list) else [self.sigma_idio]
        if any(s < 0 for s in sig):
            raise ValueError("sigma_idio must be >= 0")
        return self


_BUILDER_PATTERN = r"^(delta|matched(:[1-6])?)$"


class HedgeOnePeriodParams(PortfolioParams):
    dt: float = Field(1.0 / 52.0, gt=0)
    replications: int = Field(100_000, ge=100)
    builders: List[str] = Field(["delta"], min_length=1)

    @model_validator(mode="after")
    def _check(self):
        _check_builders(self.builders)
        if self.dt > self.maturity:
            raise ValueError("dt must not exceed maturity")
        return self


class HedgePathParams(PortfolioParams):
    horizon: float = Field(1.0, gt=0)
    steps: List[int] = [4, 8, 16, 32, 64]
    replications: int = Field(20_000, ge=2)
    builders: List[str] = Field(["delta"], min_length=1)

    @model_validator(mode="after")
    def _check(self):
        _check_builders(self.builders)
        if not self.steps or any(s < 1 for s in self.steps):
            raise ValueError("steps must be a non-empty list of counts >= 1")
        if self.horizon > self.maturity:
            raise ValueError("horizon must not exceed maturity")
        return self


class HedgeSweepParams(PortfolioParams):
    sweep: Literal["dt", "n"] = "dt"
    values: List[float] = [1 / 12, 1 / 26, 1 / 52, 1 / 104]
    dt: float = Field(1.0 / 52.0, gt=0)  # fixed dt for an n-sweep
    replications: int = Field(100_000, ge=100)
    builder: str = "delta"

    @model_validator(mode="after")
    def _check(self):
        _check_builders([self.builder])
        if len(self.values) < 2 or any(v <= 0 for v in self.values):
            raise ValueError("values must hold at least 2 positive entries")
        if self.sweep == "n":
            if any(v != int(v) for v in self.values):
                raise ValueError("n-sweep values must be integers")
            if isinstance(self.phi, list) or isinstance(self.sigma_idio, list) or self.phi_range is not None:
                raise ValueError("n-sweep needs scalar phi and sigma_idio")
        return self


def _check_builders(builders):
    import re

    for b in builders:
        if not re.match(_BUILDER_PATTERN, b):
            raise ValueError(f"builder {b!r} must be 'delta' or 'matched:<1..6>'")


class McParams(_Params):
    spot: float = Field(100.0, gt=0)
    strike: float = Field(100.0, gt=0)
    rate: float = 0.05
    vol: float = Field(0.2, gt=0)
    maturity: float = Field(1.0, gt=0)
    option_kind: OptionKind = "call"
    steps: int = Field(10, ge=1)
    n_paths: int = Field(100_000, ge=2)
    pilot_paths: int = Field(20_000, ge=1000)
    pilot_seed: Optional[int] = Field(None, ge=0, le=U64_MAX)


_Estimator = Literal["basic", "is0", "is1", "is2", "antithetic", "cv"]


class McSingleParams(McParams):
    estimator: _Estimator = "basic"

    @model_validator(mode="after")
    def _check(self):
        if self.estimator == "antithetic" and self.n_paths % 2:
            raise ValueError("antithetic estimator needs an even n_paths")
        return self


class McCompareParams(McParams):
    estimators: List[_Estimator] = ["basic", "is0", "is1", "is2", "antithetic", "cv"]

    @model_validator(mode="after")
    def _check(self):
        if "antithetic" in self.estimators and self.n_paths % 2:
            raise ValueError("antithetic estimator needs an even n_paths")
        if not self.estimators:
            raise ValueError("estimators must not be empty")
        return self


class DriftOptParams(McParams):
    degrees: List[Literal[0, 1, 2]] = [0, 1, 2]
    strikes: Optional[List[float]] = None  # overrides strike for a multi-case run
    option_kinds: Optional[List[OptionKind]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.strikes is not None and any(k <= 0 for k in self.strikes):
            raise ValueError("strikes must be > 0")
        return self


SCHEMAS = {
    "price": PriceParams,
    "greeks": GreeksParams,
    "pde": PdeParams,
    "fd_order": FdOrderParams,
    "hedge_one_period": HedgeOnePeriodParams,
    "hedge_path": HedgePathParams,
    "hedge_sweep": HedgeSweepParams,
    "mc_single": McSingleParams,
    "mc_compare": McCompareParams,
    "drift_opt": DriftOptParams,
}
COMMON_KEYS = ("kind", "master_seed", "output_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: _Params
    master_seed: int = DEFAULT_SEED
    output_dir: Optional[str] = None

    def echo(self) -> dict:
        return {"kind": self.kind, "master_seed": self.master_seed, "output_dir": self.output_dir,
                **self.params.model_dump()}


_OPS = {"greater_than_equal": ("ge", ">="), "greater_than": ("gt", ">"),
        "less_than_equal": ("le", "<="), "less_than": ("lt", "<")}


def _describe(err) -> str:
    loc = ".".join(str(p) for p in err["loc"]) or "<config>"
    if err["type"] in _OPS:
        key, op = _OPS[err["type"]]
        return f"{loc} {op} {err['ctx'][key]} required (got {err.get('input')!r})"
    if err["type"] == "extra_forbidden":
        return f"unknown key {loc!r}"
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    return f"{loc}: {msg}"


def parse_config(data: dict, kind: Optional[str] = None, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigSyntaxError(f"{source}: top level must be a JSON object")
    data = dict(data)
    file_kind = data.pop("kind", None)
    kind = kind or file_kind
    if kind is None:
        raise ConfigSchemaError(f"{source}: experiment kind not given")
    if kind not in SCHEMAS:
        raise ConfigSchemaError(f"{source}: unknown experiment kind {kind!r}")
    if file_kind is not None and file_kind != kind:
        raise ConfigSchemaError(f"{source}: config kind {file_kind!r} does not match subcommand {kind!r}")
    seed = data.pop("master_seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
        raise ConfigValidationError(f"{source}: master_seed must be an integer in [0, 2^64)")
    out = data.pop("output_dir", None)
    if out is not None and not isinstance(out, str):
        raise ConfigValidationError(f"{source}: output_dir must be a string")

    schema = SCHEMAS[kind]
    unknown = sorted(set(data) - set(schema.model_fields))
    if unknown:
        raise ConfigSchemaError(f"{source}: unknown key {unknown[0]!r} for experiment kind {kind!r}")
    try:
        params = schema.model_validate(data)
    except ValidationError as exc:
        errs = exc.errors()
        if any(e["type"] == "extra_forbidden" for e in errs):
            raise ConfigSchemaError(f"{source}: " + "; ".join(_describe(e) for e in errs)) from None
        raise ConfigValidationError(f"{source}: " + "; ".join(_describe(e) for e in errs)) from None
    return ExperimentConfig(kind=kind, params=params, master_seed=seed, output_dir=out)


def load_config(path, kind: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigSyntaxError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    return parse_config(data, kind, str(path))


def recipe_names() -> list:
    return sorted(p.name[:-5] for p in resources.files("hedgelab.recipes").iterdir() if p.name.endswith(".json"))


def load_recipe(name: str, kind: Optional[str] = None) -> ExperimentConfig:
    res = resources.files("hedgelab.recipes").joinpath(f"{name}.json")
    if not res.is_file():
        raise ConfigSchemaError(f"unknown recipe {name!r}; available: {', '.join(recipe_names())}")
    with resources.as_file(res) as path:
        return load_config(path, kind)
