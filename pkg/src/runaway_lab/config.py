"""Simulation configuration: nested dataclasses persisted as INI sections.

Every section of the file mirrors one group dataclass.  Floats are written
with ``repr`` so a parse/serialize/parse cycle is bit-exact.  Only
``potential.kind`` is mandatory in a config file; everything else falls
back to the defaults below.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from .errors import ConfigError


@dataclass
class PotentialConfig:
    kind: str = "bump"  # bump | singular | null
    psi0: float = 1.0
    g: float = 1.0
    alpha: float = 1.5
    r1: float = 0.5
    r0: float = 1.0
    rcap: float = 1e-3


@dataclass
class BodyConfig:
    M: float = 1.0
    E: float = 1.0
    xidot0: float = 10.0
    xi0: float = 0.0


@dataclass
class FluidConfig:
    rho0: float = 0.1
    velocity_model: str = "cold"  # cold | maxwellian
    beta: float = 1.0
    mc_samples: int = 4
    rng_seed: int = 12345


@dataclass
class GridConfig:
    dx: float = 0.1
    deta: float = 0.05
    eta_max: float = 1.1
    lookahead: float = 3.0
    margin: float = 0.25


@dataclass
class IntegrationConfig:
    dt_max: float = 0.01
    c_res: float = 0.02  # body step = c_res * r0 / speed
    c_stiff: float = 0.05  # particle substep = c_stiff / sqrt|psi''|
    t_max: float = 50.0
    sample_interval: float = 0.1
    max_retries: int = 30
    frozen: bool = False  # body ignores friction (prescribed motion)
    hard_tol_p: float = 1e-9  # momentum residual / (M xidot)
    hard_tol_e: float = 1e-3  # energy residual / (M xidot^2)
    v_min_frac: float = 1e-6
    audit_every: int = 50  # keep every n-th retired particle for the re-entry audit


@dataclass
class DiagnosticsConfig:
    epsilon: float = 0.1
    tail_fraction: float = 0.25
    obs_speeds: List[float] = field(default_factory=list)
    obs_window: float = 20.0  # body travel (in r0) per annulus observation window
    oracle_v: List[float] = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0, 80.0])
    oracle_eta: List[float] = field(default_factory=lambda: [0.25, 0.5, 0.75])
    oracle_tol: float = 1e-10


@dataclass
class OutputConfig:
    directory: str = "runs/out"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class SimConfig:
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    body: BodyConfig = field(default_factory=BodyConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        p = self.potential
        if p.kind not in ("bump", "singular", "null"):
            raise ConfigError(f"potential.kind must be bump, singular or null, got {p.kind!r}", "potential.kind")
        for key in ("r0",):
            if not getattr(p, key) > 0:
                raise ConfigError(f"potential.{key} must be positive", f"potential.{key}")
        if not self.body.M > 0:
            raise ConfigError("body.M must be positive", "body.M")
        if self.body.E < 0:
            raise ConfigError("body.E must be >= 0", "body.E")
        if self.fluid.rho0 < 0:
            raise ConfigError("fluid.rho0 must be >= 0", "fluid.rho0")
        if self.fluid.velocity_model not in ("cold", "maxwellian"):
            raise ConfigError("fluid.velocity_model must be cold or maxwellian", "fluid.velocity_model")
        for key in ("dx", "deta", "eta_max", "lookahead", "margin"):
            if not getattr(self.grid, key) > 0:
                raise ConfigError(f"grid.{key} must be positive", f"grid.{key}")
        for key in ("dt_max", "c_res", "c_stiff", "t_max", "sample_interval"):
            if not getattr(self.integration, key) > 0:
                raise ConfigError(f"integration.{key} must be positive", f"integration.{key}")
        if not 0 < self.diagnostics.tail_fraction <= 1:
            raise ConfigError("diagnostics.tail_fraction must lie in (0, 1]", "diagnostics.tail_fraction")
        return self

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)

    def with_overrides(self, overrides):
        """Return a copy with ``{"section.key": value}`` overrides applied."""
        cfg = from_dict(to_dict(self))
        for dotted, raw in overrides.items():
            _assign(cfg, dotted, raw)
        return cfg.validate()


def _fields(obj):
    return {f.name: f for f in dataclasses.fields(obj)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text, ftype, key):
    text = text.strip()
    try:
        if ftype in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if ftype in (int, "int"):
            return int(text)
        if ftype in (float, "float"):
            return float(text)
        if ftype in (str, "str"):
            return text
        if str(ftype).startswith(("List[float]", "typing.List[float]")):
            return [float(x) for x in text.split(",") if x.strip()]
        if str(ftype).startswith(("List[str]", "typing.List[str]")):
            return [x.strip() for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {text!r} as {ftype}", key) from None
    raise ConfigError(f"unsupported field type for {key}", key)


def _assign(cfg, dotted, raw):
    if "." not in dotted:
        raise ConfigError(f"override key {dotted!r} must look like section.key", dotted)
    section, key = dotted.split(".", 1)
    if section not in _fields(cfg):
        raise ConfigError(f"unknown config section {section!r}", dotted)
    group = getattr(cfg, section)
    flds = _fields(group)
    if key not in flds:
        raise ConfigError(f"unknown config key {dotted!r}", dotted)
    value = raw if not isinstance(raw, str) else _parse(raw, flds[key].type, dotted)
    setattr(group, key, value)


def to_dict(cfg: SimConfig):
    return dataclasses.asdict(cfg)


def from_dict(d):
    groups = {}
    for name, f in _fields(SimConfig).items():
        sub = d.get(name, {})
        group_cls = f.default_factory
        group = group_cls()
        for key, val in sub.items():
            if key not in _fields(group):
                raise ConfigError(f"unknown config key {name}.{key}", f"{name}.{key}")
            setattr(group, key, list(val) if isinstance(val, list) else val)
        groups[name] = group
    return SimConfig(**groups)


def dumps(cfg: SimConfig):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _fields(cfg):
        group = getattr(cfg, name)
        parser[name] = {k: _format(getattr(group, k)) for k in _fields(group)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads(text, require_kind=True):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if require_kind and not parser.has_option("potential", "kind"):
        raise ConfigError("missing required key potential.kind", "potential.kind")
    cfg = SimConfig()
    for section in parser.sections():
        for key, raw in parser[section].items():
            _assign(cfg, f"{section}.{key}", raw)
    return cfg.validate()


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def save(cfg: SimConfig, path):
    Path(path).write_text(dumps(cfg))
