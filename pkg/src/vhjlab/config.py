"""Run configuration: strict YAML parsing, validation and emission."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .diagnostics import DiagnosticsConfig
from .initial_data import InitialDatum, analytic_datum, build_phi_from_psi, canonical_psi, table_datum
from .nonlinearity import ConfigurationError
from .solver import SolverConfig

__all__ = [
    "KINDS",
    "DatumConfig",
    "LambdaStarConfig",
    "SweepConfig",
    "RunConfig",
    "parse_config",
    "emit_config",
    "load_config",
    "build_datum",
]

KINDS = ("single", "ladder", "rate_study", "lambda_star", "sweep")
DATUM_TYPES = ("canonical", "canonical-psi", "sine", "table")


@dataclass(frozen=True)
class DatumConfig:
    """Initial datum: ``lam * phi``.

    ``canonical`` (alias ``canonical-psi``) is the double integral of the
    canonical ``psi`` with parameter ``x0``; ``sine`` is ``sin(mode * pi * x)``;
    ``table`` takes node values inline from ``values`` or from ``file``
    (whitespace-separated text or ``.npy``).
    """

    type: str = "canonical"
    lam: float = 1.0
    x0: float = 0.25
    mode: int = 1
    file: str | None = None
    values: tuple | None = None

    def __post_init__(self):
        if self.type not in DATUM_TYPES:
            raise ConfigurationError(f"type must be one of {', '.join(DATUM_TYPES)}")
        if not self.lam >= 0:
            raise ConfigurationError("lam must be nonnegative")
        if not 0 < self.x0 < 0.5:
            raise ConfigurationError("x0 must lie in (0, 1/2)")
        if self.mode < 1:
            raise ConfigurationError("mode must be >= 1")
        if self.type == "table" and not self.file and not self.values:
            raise ConfigurationError("file or values is required for a table datum")
        if self.file and self.values:
            raise ConfigurationError("file and values are mutually exclusive")

    @property
    def canonical(self) -> bool:
        return self.type in ("canonical", "canonical-psi")


@dataclass(frozen=True)
class LambdaStarConfig:
    bracket: tuple = (0.0, 0.0)
    tol: float = 1e-3
    retry_scale: float = 1.5

    def __post_init__(self):
        if len(self.bracket) != 2 or not 0 <= self.bracket[0] < self.bracket[1]:
            raise ConfigurationError("bracket must be [lo, hi] with 0 <= lo < hi")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if not self.retry_scale > 1:
            raise ConfigurationError("retry_scale must exceed 1")


@dataclass(frozen=True)
class SweepConfig:
    """Cells as explicit ``[p, lam]`` pairs."""

    cells: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if not self.cells:
            raise ConfigurationError("cells must be a nonempty list of [p, lam] pairs")
        for c in self.cells:
            if len(c) != 2 or not all(isinstance(v, (int, float)) for v in c):
                raise ConfigurationError("cells must be [p, lam] number pairs")
            if not c[0] > 2:
                raise ConfigurationError("cells: p must exceed 2")
        object.__setattr__(self, "cells", tuple((float(p), float(lam)) for p, lam in self.cells))
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    kind: str
    datum: DatumConfig = field(default_factory=DatumConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: str = "runs"
    seed: int = 0
    lambda_star: LambdaStarConfig | None = None
    sweep: SweepConfig | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {', '.join(KINDS)}")
        if self.kind == "lambda_star" and self.lambda_star is None:
            raise ConfigurationError("lambda_star section is required for kind lambda_star")
        if self.kind == "sweep" and self.sweep is None:
            raise ConfigurationError("sweep section is required for kind sweep")


_SECTIONS = {
    "datum": DatumConfig,
    "solver": SolverConfig,
    "diagnostics": DiagnosticsConfig,
    "lambda_star": LambdaStarConfig,
    "sweep": SweepConfig,
}


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _coerce(path, ftype, v):
    """Type-check one scalar or sequence value against a dataclass annotation."""
    t = str(ftype)
    if v is None:
        if "None" in t:
            return None
        raise ConfigurationError(f"{path}: value required")
    if t.startswith("bool"):
        if not isinstance(v, bool):
            raise ConfigurationError(f"{path}: expected a boolean")
        return v
    if t.startswith("int"):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ConfigurationError(f"{path}: expected an integer")
        return int(v)
    if t.startswith("float"):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigurationError(f"{path}: expected a number")
        return float(v)
    if t.startswith("str"):
        if not isinstance(v, str):
            raise ConfigurationError(f"{path}: expected a string")
        return v
    if t.startswith("tuple"):
        if not isinstance(v, (list, tuple)):
            raise ConfigurationError(f"{path}: expected a list")
        return _tuplify(list(v))
    return v


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for key, val in data.items():
        p = f"{path}.{key}" if path else str(key)
        if key not in fields:
            raise ConfigurationError(f"{p}: unknown key")
        if key in _SECTIONS and cls is RunConfig:
            kw[key] = None if val is None else _build(_SECTIONS[key], val, p)
        else:
            kw[key] = _coerce(p, fields[key].type, val)
    try:
        return cls(**kw)
    except (ConfigurationError, ValueError) as exc:
        msg = str(exc)
        head = msg.split(" ", 1)[0]
        where = path or "config"
        if head in fields:
            where = f"{path}.{head}" if path else head
        raise ConfigurationError(f"{where}: {msg}") from None
    except TypeError as exc:
        raise ConfigurationError(f"{path or 'config'}: missing required field ({exc})") from None


def parse_config(text: str) -> RunConfig:
    """Parse YAML text into a validated :class:`RunConfig` (unknown keys rejected)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config: malformed YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config: expected a mapping at the top level")
    if "kind" not in data:
        raise ConfigurationError("kind: missing required field")
    return _build(RunConfig, data, "")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def config_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = config_dict(v)
        out[f.name] = _plain(v)
    return out


def emit_config(cfg: RunConfig) -> str:
    """YAML text such that ``parse_config(emit_config(cfg)) == cfg``."""
    return yaml.safe_dump(config_dict(cfg), sort_keys=False, default_flow_style=None)


def build_datum(dc: DatumConfig, n: int, base_dir=".") -> InitialDatum:
    """Initial datum on an ``n``-node grid from its configuration."""
    if dc.canonical:
        return build_phi_from_psi(canonical_psi(dc.x0), grid=n, lam=dc.lam)
    if dc.type == "sine":
        w = dc.mode * np.pi
        return analytic_datum(lambda x: np.sin(w * x), lambda x: w * np.cos(w * x),
                              lambda x: -w * w * np.sin(w * x), n=n, lam=dc.lam, kind="sine")
    if dc.values:
        vals, where = dc.values, "datum.values"
    else:
        path = dc.file if os.path.isabs(dc.file) else os.path.join(base_dir, dc.file)
        where = "datum.file"
        try:
            vals = np.load(path) if path.endswith(".npy") else np.loadtxt(path)
        except OSError as exc:
            raise ConfigurationError(f"datum.file: cannot read {path} ({exc})") from None
    vals = dc.lam * np.asarray(vals, dtype=float).ravel()
    if vals.size != n:
        raise ConfigurationError(f"{where}: {vals.size} values for a {n}-node grid")
    return table_datum(vals, lam=dc.lam)
