"""Run configuration read from INI files.

Sections and keys::

    [system]      system = nems | particle, then the parameter fields of
                  NemsParams / ParticleParams; p_bounds = lo, hi
    [grid]        periods_before_tp, periods_after_tp, steps_per_period, control_stride
    [ocp]         gamma_reg (number or "auto"), max_iters, grad_tol, fd_step, tol_ss,
                  gradient_method
    [simulation]  trials, base_seed, alpha, workers, terminal
    [output]      directory, emit_plots

Unknown sections or keys are rejected; missing ones take the defaults below.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .ocp import OcpConfig
from .systems import DEFAULT_BOUNDS, NemsParams, ParticleParams, nems_model, particle_model

SYSTEMS = {"nems": NemsParams, "particle": ParticleParams}


@dataclass(frozen=True)
class GridSettings:
    periods_before_tp: int = 25
    periods_after_tp: int = 25
    steps_per_period: int = 200
    control_stride: int = 10


@dataclass(frozen=True)
class SimulationSettings:
    trials: int = 1000
    base_seed: int = 0
    alpha: float = 0.0
    workers: int = 1
    terminal: str = "zero"


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    emit_plots: bool = False


@dataclass(frozen=True)
class RunConfig:
    system: str
    params: NemsParams | ParticleParams
    grid: GridSettings = field(default_factory=GridSettings)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def model(self):
        return nems_model(self.params) if self.system == "nems" else particle_model(self.params)

    def canonical(self):
        """JSON-serialisable dict with a fixed key order."""
        return {
            "system": self.system,
            "params": asdict(self.params),
            "grid": asdict(self.grid),
            "ocp": asdict(self.ocp),
            "simulation": asdict(self.simulation),
            "output": asdict(self.output),
        }

    @property
    def digest(self):
        blob = json.dumps(self.canonical(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"not finite: {text!r}")
    return v


def _optional_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else _float(text)


def _bounds(text):
    parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError("p_bounds needs two comma-separated numbers")
    return (_float(parts[0]), _float(parts[1]))


_PARAM_PARSERS = {
    "S_f": _optional_float,
    "mass": _optional_float,
    "p_bounds": _bounds,
}

_SECTION_PARSERS = {
    "grid": (GridSettings, {f.name: _int for f in fields(GridSettings)}),
    "ocp": (OcpConfig, {
        "gamma_reg": _optional_float, "max_iters": _int, "grad_tol": _float, "fd_step": _float,
        "control_stride": _int, "tol_ss": _float, "gradient_method": str,
    }),
    "simulation": (SimulationSettings, {
        "trials": _int, "base_seed": _int, "alpha": _float, "workers": _int, "terminal": str,
    }),
    "output": (OutputSettings, {"directory": str, "emit_plots": _bool}),
}


def _section(cp, name, cls, parsers, extra=None):
    values = dict(extra or {})
    if not cp.has_section(name):
        return cls(**values)
    for key, raw in cp.items(name):
        if key not in parsers:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        try:
            values[key] = parsers[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from exc
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _system(cp):
    if not cp.has_section("system"):
        raise ConfigError("missing [system] section")
    items = dict(cp.items("system"))
    kind = items.pop("system", "").strip().lower()
    if kind not in SYSTEMS:
        raise ConfigError(f"[system] system must be one of {sorted(SYSTEMS)}, got {kind!r}")
    cls = SYSTEMS[kind]
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, raw in items.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [system] for {kind}")
        try:
            kw[key] = _PARAM_PARSERS.get(key, _float)(raw)
        except ValueError as exc:
            raise ConfigError(f"[system] {key}: {exc}") from exc
    kw.setdefault("p_bounds", DEFAULT_BOUNDS)
    try:
        return kind, cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[system]: {exc}") from exc


def parse_config(text):
    """Parse INI text into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys such as Omega0 and S_m are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"system", *_SECTION_PARSERS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    kind, params = _system(cp)
    grid = _section(cp, "grid", *_SECTION_PARSERS["grid"])
    if cp.has_section("ocp") and cp.has_option("ocp", "control_stride"):
        raise ConfigError("set control_stride in [grid], not [ocp]")
    ocp = _section(cp, "ocp", *_SECTION_PARSERS["ocp"], extra={"control_stride": grid.control_stride})
    sim = _section(cp, "simulation", *_SECTION_PARSERS["simulation"])
    out = _section(cp, "output", *_SECTION_PARSERS["output"])
    if min(grid.periods_before_tp, grid.periods_after_tp, grid.steps_per_period,
           grid.control_stride) < 1:
        raise ConfigError("[grid] values must be positive")
    if grid.steps_per_period % grid.control_stride:
        raise ConfigError("[grid] steps_per_period must be a multiple of control_stride")
    if sim.terminal not in ("zero", "matched"):
        raise ConfigError(f"[simulation] terminal must be 'zero' or 'matched', got {sim.terminal!r}")
    if sim.trials < 2 or sim.workers < 1 or sim.base_seed < 0:
        raise ConfigError("[simulation] needs trials >= 2, workers >= 1 and base_seed >= 0")
    return RunConfig(kind, params, grid, ocp, sim, out)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
