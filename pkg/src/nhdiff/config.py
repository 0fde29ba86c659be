"""Strict TOML run configuration.

Every section maps onto a dataclass; unknown sections or keys, wrong types
and out-of-range values raise :class:`ConfigError` before any computation.
Units are SI (kg, m, kg m^2, s); angles are in radians.
"""
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import List, Optional, Union, get_args, get_origin, get_type_hints

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .systems.robot import RobotParams
from .systems.snakeboard import SnakeboardParams

SYSTEMS = ("robot", "snakeboard", "custom")
PARAM_TYPES = {"robot": RobotParams, "snakeboard": SnakeboardParams}


@dataclass
class GridConfig:
    t0: float = 0.0
    t_final: float = 1.0
    steps: int = 1000


@dataclass
class EnsembleConfig:
    paths: int = 100
    seed: int = 0
    workers: int = 1
    record_stride: int = 1


@dataclass
class SimulateConfig:
    """``mode``: "cbm" (free constrained Brownian motion) or "controlled"."""

    mode: str = "cbm"
    sigma: float = 1.0
    initial: Optional[List[float]] = None
    drift: str = "closed-form"


@dataclass
class DriftConfig:
    grid: int = 16


@dataclass
class MeasureConfig:
    grid: int = 64


@dataclass
class PlanConfig:
    rho: float = 1.0
    steps: int = 10_000
    variant: str = "paper"
    t_final: Optional[float] = None


@dataclass
class ReconstructConfig:
    initial: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0, 0.5])
    samples: int = 3


@dataclass
class CustomConfig:
    factory: str = "nhdiff.systems.manufactured:exact_form"


@dataclass
class RunConfig:
    system: str = "robot"
    params: dict = field(default_factory=dict)
    grid: GridConfig = field(default_factory=GridConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    custom: CustomConfig = field(default_factory=CustomConfig)

    def system_params(self):
        cls = PARAM_TYPES.get(self.system)
        if cls is None:
            return None
        try:
            return cls(**self.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[params]: {exc}") from exc

    def canonical(self) -> dict:
        """Everything that determines results; worker count is excluded."""
        d = dataclasses.asdict(self)
        d["ensemble"].pop("workers")
        sp = self.system_params()
        if sp is not None:
            d["params"] = dataclasses.asdict(sp)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


SECTION_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _line_of(text: str, key: str) -> str:
    if not text:
        return ""
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*\[{re.escape(key)}\]")
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return f" (line {i})"
    return ""


def _check_type(value, tp, where: str):
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        return _check_type(value, args[0], where)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return [_check_type(v, get_args(tp)[0], where) for v in value]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, table: dict, section: str, text: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in table.items():
        if key not in hints:
            raise ConfigError(f"unknown key '{section}.{key}'{_line_of(text, key)}")
        kwargs[key] = _check_type(value, hints[key], f"{section}.{key}{_line_of(text, key)}")
    return cls(**kwargs)


def from_dict(raw: dict, text: str = "") -> RunConfig:
    raw = dict(raw)
    system = raw.pop("system", "robot")
    if system not in SYSTEMS:
        raise ConfigError(f"system must be one of {SYSTEMS}, got {system!r}{_line_of(text, 'system')}")
    params = raw.pop("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[params] must be a table")
    ptype = PARAM_TYPES.get(system)
    if ptype is None and params:
        raise ConfigError("system 'custom' takes no [params]; use [custom].factory")
    if ptype is not None:
        hints = get_type_hints(ptype)
        for key, value in params.items():
            if key not in hints:
                raise ConfigError(f"unknown key 'params.{key}' for system {system!r}{_line_of(text, key)}")
            params[key] = _check_type(value, float, f"params.{key}{_line_of(text, key)}")
    sections = {}
    for name, value in raw.items():
        if name not in SECTION_TYPES or name in ("system", "params"):
            raise ConfigError(f"unknown section or key '{name}'{_line_of(text, name)}")
        sections[name] = _build(SECTION_TYPES[name], value, name, text)
    cfg = RunConfig(system=system, params=params, **sections)
    cfg.system_params()
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    text = data.decode("utf-8", errors="replace")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return from_dict(raw, text)


def apply_overrides(cfg: RunConfig, seed=None, paths=None, dt=None, t_final=None,
                    grid=None, paper_literal=False) -> RunConfig:
    if seed is not None:
        cfg.ensemble.seed = seed
    if paths is not None:
        cfg.ensemble.paths = paths
    if t_final is not None:
        cfg.grid.t_final = t_final
        cfg.plan.t_final = t_final
    if dt is not None:
        if not dt > 0:
            raise ConfigError("--dt must be positive")
        cfg.grid.steps = max(1, int(round((cfg.grid.t_final - cfg.grid.t0) / dt)))
    if grid is not None:
        cfg.drift.grid = grid
        cfg.measure.grid = grid
    if paper_literal:
        cfg.plan.variant = "paper-literal"
    return cfg


def validate(cfg: RunConfig, command: Optional[str] = None) -> None:
    """Range checks; section checks run for ``command`` only (all when None)."""
    g, e = cfg.grid, cfg.ensemble
    if g.steps < 1:
        raise ConfigError("grid.steps must be >= 1")
    if not g.t_final > g.t0:
        raise ConfigError("grid.t_final must exceed grid.t0")
    if e.paths < 1:
        raise ConfigError("ensemble.paths must be >= 1")
    if not 0 <= e.seed < 2**64:
        raise ConfigError("ensemble.seed must be an unsigned 64-bit integer")
    if e.workers < 1 or e.record_stride < 1:
        raise ConfigError("ensemble.workers and ensemble.record_stride must be >= 1")
    if cfg.simulate.mode not in ("cbm", "controlled"):
        raise ConfigError("simulate.mode must be 'cbm' or 'controlled'")
    if cfg.simulate.drift not in ("closed-form", "generic"):
        raise ConfigError("simulate.drift must be 'closed-form' or 'generic'")
    if cfg.simulate.sigma < 0:
        raise ConfigError("simulate.sigma must be non-negative")
    if cfg.plan.variant not in ("paper", "paper-literal", "kinematic"):
        raise ConfigError("plan.variant must be 'paper', 'paper-literal' or 'kinematic'")
    if cfg.plan.steps < 4 or cfg.plan.steps % 2:
        raise ConfigError("plan.steps must be even and >= 4")
    if cfg.drift.grid < 1:
        raise ConfigError("drift.grid must be >= 1")
    if command in (None, "measure-test") and cfg.measure.grid < 4:
        raise ConfigError("measure.grid must be >= 4")
    if len(cfg.reconstruct.initial) != 5:
        raise ConfigError("reconstruct.initial must have 5 entries")
    if cfg.simulate.initial is not None and len(cfg.simulate.initial) != 5:
        raise ConfigError("simulate.initial must have 5 entries")
