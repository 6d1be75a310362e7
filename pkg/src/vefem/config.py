"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .params import ConfigError, ModelParams
from .stepper import SolverConfig

MODES = ("simulate", "convergence-temporal", "convergence-spatial", "stability", "verify-lambda")
VTK_MODES = ("none", "final", "all")


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    k: int = 4
    l: int = 4
    solver: SolverConfig = field(default_factory=SolverConfig)
    mode: str = "simulate"
    sources: bool = True
    output_dir: str = "."
    vtk: str = "none"

    def __post_init__(self):
        if self.k < 0 or self.l < 0:
            raise ConfigError("k and l must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.vtk not in VTK_MODES:
            raise ConfigError(f"vtk must be one of {', '.join(VTK_MODES)}, got {self.vtk!r}")

    @property
    def dt(self) -> float:
        return ModelParams.dt_for_level(self.l, self.params.T)

    def resolved_params(self) -> ModelParams:
        return replace(self.params, dt=self.dt)

    def as_dict(self) -> dict:
        """Every configuration key with its resolved value."""
        p = self.params
        s = self.solver
        return {"eta": p.eta, "mu": p.mu, "beta": p.beta, "lam": p.lam, "delta1": p.delta1,
                "delta2": p.delta2, "T": p.T, "k": self.k, "l": self.l, "dt": self.dt,
                "picard_tol": s.picard_tol, "picard_max_iter": s.picard_max_iter,
                "regularization": 0.0 if s.regularization is None else s.regularization,
                "fallback_on_pd_failure": s.fallback_on_pd_failure,
                "fallback_delta": s.fallback_delta, "mode": self.mode,
                "sources": self.sources, "output_dir": self.output_dir, "vtk": self.vtk}


_PARAM_KEYS = {f.name for f in fields(ModelParams)} - {"dt"}
_SOLVER_KEYS = {"picard_tol", "picard_max_iter", "regularization", "fallback_on_pd_failure",
                "fallback_delta"}
_RUN_KEYS = {"k", "l", "mode", "sources", "output_dir", "vtk"}
KEYS = tuple(sorted(_PARAM_KEYS | _SOLVER_KEYS | _RUN_KEYS))
_INT_KEYS = {"k", "l", "picard_max_iter"}
_BOOL_KEYS = {"sources", "fallback_on_pd_failure"}
_STR_KEYS = {"mode", "output_dir", "vtk"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if key in _STR_KEYS:
            return raw
        return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_pairs(text: str) -> dict:
    """``key = value`` lines with '#' comments into a dict of converted values."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key or not val:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def build_config(values: dict, base: Optional[RunConfig] = None) -> RunConfig:
    base = base or RunConfig()
    unknown = set(values) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    pvals = {k: float(v) for k, v in values.items() if k in _PARAM_KEYS}
    params = replace(base.params, **pvals)
    svals = {k: v for k, v in values.items() if k in _SOLVER_KEYS}
    if "regularization" in svals:
        svals["regularization"] = svals["regularization"] or None
    try:
        solver = replace(base.solver, **svals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rvals = {k: v for k, v in values.items() if k in _RUN_KEYS}
    return replace(base, params=params, solver=solver, **rvals)


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    return build_config(parse_pairs(text), base)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text)
