"""Experiment configuration (TOML) for the sweep, ensemble and tracking runs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError
from .policies import TS_SCALE

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = ("two_state", "joint", "pmiss", "short_horizon", "ensemble", "tracking_ensemble")
SWEEP_KINDS = KINDS[:4]
GRID_NAMES = ("p12", "p21", "p", "p_miss", "eta")
SPECTRUM_POLICIES = ("saa", "ts", "random", "bellman")
TRACKING_POLICIES = ("rule", "ts", "random")


@dataclass(frozen=True)
class GridAxis:
    name: str
    values: tuple


@dataclass
class ChannelParams:
    p12: float = 0.3
    p21: float = 0.3
    p_miss: float = 0.0
    eta: float = 0.05
    snr0_db: float = 20.0
    inr_db: float = 14.0
    alpha: float = 0.9
    states: tuple = ("11000", "11100")


@dataclass
class EnsembleSettings:
    count: int = 300
    K: int = 5
    d: int = 5
    profile: str = "diagonal_weight"
    width: int = 1
    cover: bool = True
    policy_a: str = "ts"
    policy_b: str = "saa"
    n_boot: int = 200


@dataclass
class TrackingSettings:
    scenes: int = 60
    targets: int = 3
    n_pos: int = 3
    n_vel: int = 1
    bands: tuple = (1, 2)
    n_waveforms: int = 20
    accuracy: tuple = (0.6, 1.0)
    cap: int = 4096
    n_buckets: int = 8
    features: str = "truncate"
    lookup: str = "oracle"
    perturb: float = 0.0
    loss_profile: dict = field(default_factory=dict)


@dataclass
class SweepConfig:
    kind: str
    grid: tuple = ()
    n: int = 10_000
    replications: int = 1
    seed: int = 0
    out: Path = Path("results")
    policies: tuple = ("saa", "ts")
    ts_scale: float = TS_SCALE
    params: ChannelParams = field(default_factory=ChannelParams)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    tracking: TrackingSettings = field(default_factory=TrackingSettings)

    def points(self):
        """Cartesian product of the grid axes as a list of dicts."""
        if not self.grid:
            return [{}]
        mesh = np.meshgrid(*[np.asarray(a.values, dtype=float) for a in self.grid], indexing="ij")
        flat = [m.ravel() for m in mesh]
        return [{a.name: float(f[i]) for a, f in zip(self.grid, flat)} for i in range(flat[0].size)]

    def with_overrides(self, seed=None, out=None):
        cfg = dataclasses.replace(self)
        if seed is not None:
            cfg.seed = int(seed)
        if out is not None:
            cfg.out = Path(out)
        return cfg


_DEFAULT_GRID = {
    "two_state": {"p12": {"start": 0.1, "stop": 0.9, "points": 5}},
    "joint": {"p": {"start": 0.1, "stop": 0.9, "points": 5}},
    "pmiss": {"p_miss": {"values": [0.0, 0.2, 0.4, 0.6]}},
    "short_horizon": {"p": {"values": [0.05, 0.1, 0.15, 0.2, 0.7, 0.9]}},
}
_DEFAULT_N = {"short_horizon": 300}
_DEFAULT_REPS = {"short_horizon": 20, "ensemble": 10}


def _grid_axis(name, raw, where):
    if name not in GRID_NAMES:
        raise ConfigError(where, f"unknown grid parameter (choose from {', '.join(GRID_NAMES)})")
    if isinstance(raw, dict) and "values" in raw:
        values = tuple(float(v) for v in raw["values"])
    elif isinstance(raw, dict):
        for key in ("start", "stop", "points"):
            if key not in raw:
                raise ConfigError(f"{where}.{key}", "required")
        points = raw["points"]
        if not isinstance(points, int):
            raise ConfigError(f"{where}.points", "must be an integer")
        if points < 2:
            raise ConfigError(f"{where}.points", "need at least 2 grid points")
        values = tuple(float(v) for v in np.linspace(raw["start"], raw["stop"], points))
    else:
        raise ConfigError(where, "expected a table with start/stop/points or values")
    if len(values) < 2:
        raise ConfigError(f"{where}.values", "need at least 2 grid points")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(where, f"value {v} outside [0, 1]")
    return GridAxis(name, values)


def _fill(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(where, "expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", "unknown field")
    obj = cls()
    for key, value in raw.items():
        default = getattr(obj, key)
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise TypeError
            elif isinstance(default, float):
                value = float(value)
            elif isinstance(default, tuple):
                value = tuple(value)
            elif isinstance(default, str):
                if not isinstance(value, str):
                    raise TypeError
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{key}", f"expected {type(default).__name__}") from None
        setattr(obj, key, value)
    return obj


def config_from_mapping(raw, where="config"):
    raw = dict(raw)
    kind = raw.pop("kind", None)
    if kind not in KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {', '.join(KINDS)}")
    top = {"grid", "n", "replications", "seed", "out", "policies", "ts_scale",
           "params", "ensemble", "tracking"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}", "unknown field")

    grid_raw = raw.get("grid", _DEFAULT_GRID.get(kind, {}))
    if not isinstance(grid_raw, dict):
        raise ConfigError(f"{where}.grid", "expected a table")
    grid = tuple(_grid_axis(k, v, f"{where}.grid.{k}") for k, v in grid_raw.items())
    if kind in SWEEP_KINDS and not grid:
        raise ConfigError(f"{where}.grid", "a sweep needs at least one grid axis")

    def integer(key, default, low):
        value = raw.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{key}", "must be an integer")
        if value < low:
            raise ConfigError(f"{where}.{key}", f"must be >= {low}")
        return value

    n = integer("n", _DEFAULT_N.get(kind, 10_000), 1)
    reps = integer("replications", _DEFAULT_REPS.get(kind, 1), 1)
    seed = integer("seed", 0, 0)

    allowed = TRACKING_POLICIES if kind == "tracking_ensemble" else SPECTRUM_POLICIES
    default_pols = ("rule", "ts") if kind == "tracking_ensemble" else ("saa", "ts")
    policies = raw.get("policies", default_pols)
    if not isinstance(policies, (list, tuple)) or not policies:
        raise ConfigError(f"{where}.policies", "expected a non-empty list")
    for p in policies:
        if p not in allowed:
            raise ConfigError(f"{where}.policies", f"unknown policy {p!r}")

    ts_scale = raw.get("ts_scale", TS_SCALE)
    if not isinstance(ts_scale, (int, float)) or ts_scale <= 0:
        raise ConfigError(f"{where}.ts_scale", "must be a positive number")

    params = _fill(ChannelParams, raw.get("params", {}), f"{where}.params")
    ens = _fill(EnsembleSettings, raw.get("ensemble", {}), f"{where}.ensemble")
    trk = _fill(TrackingSettings, raw.get("tracking", {}), f"{where}.tracking")
    if kind == "ensemble":
        if ens.count < 1:
            raise ConfigError(f"{where}.ensemble.count", "must be >= 1")
        if reps < 2:
            raise ConfigError(f"{where}.replications", "dominance needs at least 2 replications")
        for key in ("policy_a", "policy_b"):
            if getattr(ens, key) not in SPECTRUM_POLICIES:
                raise ConfigError(f"{where}.ensemble.{key}", "unknown policy")
    if kind == "tracking_ensemble" and trk.targets < 2:
        raise ConfigError(f"{where}.tracking.targets", "need at least 2 targets")

    return SweepConfig(kind, grid, n, reps, seed, Path(raw.get("out", "results")),
                       tuple(policies), float(ts_scale), params, ens, trk)


def load_config(path):
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from exc
    return config_from_mapping(raw, where=path.name)
