"""Scenario configuration: TOML (dotted keys or sections) or a JSON mirror.

Example::

    scenario = "noise-sweep"
    params.g = 5e-3
    params.omega_pump = 0.15
    chd.phi_pi = [0.0, 0.5]
    sweep.parameter = "delta"
    sweep.start = -1.5
    sweep.stop = 1.5
    sweep.count = 31
    sweep.unit = "omega_m"

Every energy is in eV and the temperature in K. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError
from .model import SystemParams, cavity_decay_from_q

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = ("emission-spectrum", "chd-time", "chd-spectrum", "noise-sweep",
             "filtered-sweep", "convergence-report")
FORMATS = ("csv", "json")
PARAM_FIELDS = tuple(f.name for f in dataclasses.fields(SystemParams))
SWEEPABLE = ("omega_m", "delta", "g", "omega_pump", "kappa", "gamma_m", "temperature")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    count: int
    unit: str = "eV"

    def values(self, omega_m: float) -> np.ndarray:
        scale = omega_m if self.unit == "omega_m" else 1.0
        return np.linspace(self.start, self.stop, self.count) * scale


@dataclass(frozen=True)
class GridSpec:
    tau_max: float | None = None
    tau_points: int = 2000
    omega_span: float = 2.0
    omega_points: int = 2001
    spectral_dtau: float = 0.25
    identity_band: float = 10.0

    def tau_grid(self, gamma_m: float) -> np.ndarray:
        t_max = 20.0 / gamma_m if self.tau_max is None else self.tau_max
        return np.linspace(0.0, t_max, self.tau_points)

    def omega_grid(self, omega_m: float) -> np.ndarray:
        return np.linspace(-self.omega_span * omega_m, self.omega_span * omega_m,
                           self.omega_points)


@dataclass(frozen=True)
class TruncationSpec:
    n_cavity: int = 6
    n_vib: int = 12
    displaced: bool = True
    converge: bool = True
    tolerance: float = 1e-3
    max_cavity: int = 48
    max_vib: int = 24


@dataclass(frozen=True)
class SensorSpec:
    epsilon: float = 1e-5
    gamma: float | None = None
    omega1: float | None = None
    omega2: float | None = None
    n_cavity: int = 8
    n_vib: int = 6
    margin: float = 0.1
    displaced: bool = False


@dataclass(frozen=True)
class SolverSpec:
    propagator: str = "krylov"
    rtol: float = 1e-8
    atol: float = 1e-10


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    params: SystemParams = field(default_factory=SystemParams)
    phis: tuple = (0.0, np.pi / 2)
    sweep: SweepSpec | None = None
    grids: GridSpec = field(default_factory=GridSpec)
    truncation: TruncationSpec = field(default_factory=TruncationSpec)
    sensors: SensorSpec = field(default_factory=SensorSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    output_dir: str = "ramanchd_out"
    output_format: str = "csv"

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["phis"] = list(self.phis)
        return out

    def with_params(self, params: SystemParams) -> "ScenarioConfig":
        return dataclasses.replace(self, params=params)


def read_config_file(path) -> dict:
    """Raw mapping from a TOML or JSON file (JSON when the suffix is .json)."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", field="config") from exc
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text.decode("utf-8"))
        else:
            raw = tomllib.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", field="config") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table", field="config")
    return raw


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError("must be a table of key-value pairs", field=name)
    return value


def _reject_unknown(section: dict, allowed, prefix: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})",
                              field=f"{prefix}.{key}")


def _number(section: dict, key: str, prefix: str, default=None, *, integer=False,
            positive=False, allow_none=False):
    if key not in section:
        return default
    value = section[key]
    name = f"{prefix}.{key}"
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"must be a number, got {value!r}", field=name)
    if integer:
        if int(value) != value:
            raise ConfigError(f"must be an integer, got {value!r}", field=name)
        value = int(value)
    else:
        value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"must be finite, got {value!r}", field=name)
    if positive and value <= 0:
        raise ConfigError(f"must be > 0, got {value!r}", field=name)
    return value


def _flag(section: dict, key: str, prefix: str, default: bool) -> bool:
    if key not in section:
        return default
    value = section[key]
    if not isinstance(value, bool):
        raise ConfigError(f"must be true or false, got {value!r}", field=f"{prefix}.{key}")
    return value


def _params(raw: dict) -> SystemParams:
    sec = _section(raw, "params")
    allowed = set(PARAM_FIELDS) | {"quality", "omega_pump_squared"}
    _reject_unknown(sec, allowed, "params")
    kwargs = {}
    for key in PARAM_FIELDS:
        value = _number(sec, key, "params", allow_none=(key == "n_th"))
        if value is not None:
            kwargs[key] = value
    if "omega_pump_squared" in sec:
        if "omega_pump" in sec:
            raise ConfigError("give omega_pump or omega_pump_squared, not both",
                              field="params.omega_pump_squared")
        sq = _number(sec, "omega_pump_squared", "params")
        if sq < 0:
            raise ConfigError("must be >= 0", field="params.omega_pump_squared")
        kwargs["omega_pump"] = float(np.sqrt(sq))
    if "quality" in sec:
        if "kappa" in sec:
            raise ConfigError("give kappa or quality, not both", field="params.quality")
        q = _number(sec, "quality", "params", positive=True)
        kwargs["kappa"] = cavity_decay_from_q(kwargs.get("omega_c", SystemParams.omega_c), q)
    try:
        return SystemParams(**kwargs)
    except ParameterError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], field=f"params.{exc.field}") from exc


def _phis(raw: dict) -> tuple:
    sec = _section(raw, "chd")
    _reject_unknown(sec, {"phi", "phi_pi"}, "chd")
    if "phi" in sec and "phi_pi" in sec:
        raise ConfigError("give phi or phi_pi, not both", field="chd.phi_pi")
    key = "phi_pi" if "phi_pi" in sec else "phi"
    if key not in sec:
        return (0.0, np.pi / 2)
    values = sec[key]
    if not isinstance(values, list):
        values = [values]
    if not values:
        raise ConfigError("must not be empty", field=f"chd.{key}")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise ConfigError(f"entries must be finite numbers, got {v!r}", field=f"chd.{key}")
        out.append(float(v) * np.pi if key == "phi_pi" else float(v))
    return tuple(out)


def _sweep(raw: dict) -> SweepSpec | None:
    if "sweep" not in raw:
        return None
    sec = _section(raw, "sweep")
    _reject_unknown(sec, {"parameter", "start", "stop", "count", "unit"}, "sweep")
    for key in ("parameter", "start", "stop", "count"):
        if key not in sec:
            raise ConfigError("missing", field=f"sweep.{key}")
    parameter = sec["parameter"]
    if parameter not in SWEEPABLE:
        raise ConfigError(f"not a sweepable numeric parameter (choose from {', '.join(SWEEPABLE)})",
                          field="sweep.parameter")
    if parameter == "temperature":
        unit = sec.get("unit", "K")
        if unit != "K":
            raise ConfigError("temperature sweeps are given in K", field="sweep.unit")
    else:
        unit = sec.get("unit", "eV")
        if unit not in ("eV", "omega_m"):
            raise ConfigError("must be 'eV' or 'omega_m'", field="sweep.unit")
        if parameter == "omega_m" and unit == "omega_m":
            raise ConfigError("omega_m cannot be swept in units of itself", field="sweep.unit")
    start = _number(sec, "start", "sweep")
    stop = _number(sec, "stop", "sweep")
    count = _number(sec, "count", "sweep", integer=True, positive=True)
    if stop < start:
        raise ConfigError("stop must not be below start (grids are sorted)", field="sweep.stop")
    return SweepSpec(parameter, start, stop, count, unit)


def _grids(raw: dict) -> GridSpec:
    sec = _section(raw, "grids")
    names = [f.name for f in dataclasses.fields(GridSpec)]
    _reject_unknown(sec, set(names), "grids")
    kwargs = {}
    for key in names:
        integer = key.endswith("_points")
        value = _number(sec, key, "grids", integer=integer, positive=True)
        if value is not None:
            kwargs[key] = value
    spec = GridSpec(**kwargs)
    if spec.tau_points < 2 or spec.omega_points < 2:
        raise ConfigError("grids need at least 2 points", field="grids.tau_points")
    return spec


def _truncation(raw: dict) -> TruncationSpec:
    sec = _section(raw, "truncation")
    _reject_unknown(sec, {f.name for f in dataclasses.fields(TruncationSpec)}, "truncation")
    base = TruncationSpec()
    kwargs = {}
    for key in ("n_cavity", "n_vib", "max_cavity", "max_vib"):
        value = _number(sec, key, "truncation", integer=True)
        if value is not None:
            if value < 2:
                raise ConfigError(f"must be >= 2, got {value}", field=f"truncation.{key}")
            kwargs[key] = value
    tol = _number(sec, "tolerance", "truncation", positive=True)
    if tol is not None:
        kwargs["tolerance"] = tol
    kwargs["displaced"] = _flag(sec, "displaced", "truncation", base.displaced)
    kwargs["converge"] = _flag(sec, "converge", "truncation", base.converge)
    return TruncationSpec(**kwargs)


def _sensors(raw: dict) -> SensorSpec:
    sec = _section(raw, "sensors")
    _reject_unknown(sec, {f.name for f in dataclasses.fields(SensorSpec)}, "sensors")
    kwargs = {}
    for key in ("epsilon", "gamma", "margin"):
        value = _number(sec, key, "sensors", positive=True)
        if value is not None:
            kwargs[key] = value
    for key in ("omega1", "omega2"):
        value = _number(sec, key, "sensors")
        if value is not None:
            kwargs[key] = value
    for key in ("n_cavity", "n_vib"):
        value = _number(sec, key, "sensors", integer=True)
        if value is not None:
            if value < 2:
                raise ConfigError(f"must be >= 2, got {value}", field=f"sensors.{key}")
            kwargs[key] = value
    kwargs["displaced"] = _flag(sec, "displaced", "sensors", False)
    return SensorSpec(**kwargs)


def _solver(raw: dict) -> SolverSpec:
    sec = _section(raw, "solver")
    _reject_unknown(sec, {"propagator", "rtol", "atol"}, "solver")
    prop = sec.get("propagator", "krylov")
    if prop not in ("krylov", "rk45", "expm"):
        raise ConfigError("must be 'krylov', 'rk45' or 'expm'", field="solver.propagator")
    return SolverSpec(prop, _number(sec, "rtol", "solver", 1e-8, positive=True),
                      _number(sec, "atol", "solver", 1e-10, positive=True))


def build_config(raw: dict, scenario: str | None = None) -> ScenarioConfig:
    """Validate a raw mapping; ``scenario`` (from the command line) wins if given."""
    _reject_unknown(raw, {"scenario", "params", "chd", "sweep", "grids", "truncation",
                          "sensors", "solver", "output"}, "config")
    file_scenario = raw.get("scenario")
    if scenario is None:
        scenario = file_scenario
    elif file_scenario is not None and file_scenario != scenario:
        raise ConfigError(f"config says {file_scenario!r} but {scenario!r} was requested",
                          field="scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r} (choose from {', '.join(SCENARIOS)})",
                          field="scenario")
    out = _section(raw, "output")
    _reject_unknown(out, {"dir", "format"}, "output")
    fmt = out.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError("must be 'csv' or 'json'", field="output.format")
    out_dir = out.get("dir", "ramanchd_out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("must be a non-empty string", field="output.dir")
    params = _params(raw)
    sweep = _sweep(raw)
    return ScenarioConfig(scenario=scenario, params=params, phis=_phis(raw), sweep=sweep,
                          grids=_grids(raw), truncation=_truncation(raw),
                          sensors=_sensors(raw), solver=_solver(raw),
                          output_dir=out_dir, output_format=fmt)


def load_config(path, scenario: str | None = None) -> ScenarioConfig:
    return build_config(read_config_file(path), scenario)
