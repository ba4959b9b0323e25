"""Run configuration: one JSON document, every key checked.

Example::

    {
      "seed": 7,
      "scenario": {"preset": "fig6", "background": 60},
      "kalman": {"p0": [100, 25], "q": 0.1, "r": 4},
      "appearance": {"h_bins": 16, "s_bins": 4, "v_bins": 4, "w_color": 0.5,
                     "sigma_hue": 8, "sigma_shape": 0.1},
      "gating": {"tau": 0.05, "v_min": 0.5, "sigma2_floor": 4},
      "tracker": {"theta_sim": 0.6, "max_hops": 10}
    }

Unknown keys are errors.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

from .appearance import VEHICLE_CLASSES, HistogramConfig
from .simulator import (FIG6_GRAPH, FIG6_VEHICLES, PRESETS, AppearanceNoise, RoadGraph,
                        ScenarioConfig, ScenarioError, VehicleSpec)
from .tracker import TrackConfig


class ConfigError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None, col: Optional[int] = None):
        self.line, self.col = line, col
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + msg)


@dataclass(frozen=True)
class ScenarioSection:
    preset: Optional[str] = "fig6"
    graph: Optional[dict] = None
    vehicles: Optional[list] = None
    background: int = 60
    horizon: float = 900.0
    q_sim: float = 0.02
    r_sim: float = 1.0
    v_lo: float = 3.0
    v_hi: float = 30.0
    shape_dim: int = 8


@dataclass(frozen=True)
class KalmanSection:
    p0: tuple = (100.0, 25.0)
    q: float = 0.1
    r: float = 4.0


@dataclass(frozen=True)
class AppearanceSection:
    h_bins: int = 16
    s_bins: int = 4
    v_bins: int = 4
    w_color: float = 0.5
    sigma_hue: float = 8.0
    sigma_shape: float = 0.1
    metric: str = "intersection"


@dataclass(frozen=True)
class GatingSection:
    tau: float = 0.05
    v_min: float = 0.5
    sigma2_floor: float = 4.0


@dataclass(frozen=True)
class TrackerSection:
    theta_sim: float = 0.6
    max_hops: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    kalman: KalmanSection = field(default_factory=KalmanSection)
    appearance: AppearanceSection = field(default_factory=AppearanceSection)
    gating: GatingSection = field(default_factory=GatingSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)

    @property
    def hist(self) -> HistogramConfig:
        a = self.appearance
        return HistogramConfig(a.h_bins, a.s_bins, a.v_bins)

    def scenario_config(self) -> ScenarioConfig:
        s, a = self.scenario, self.appearance
        graph = s.graph if s.graph is not None else (FIG6_GRAPH if s.preset == "fig6" else None)
        if graph is None:
            raise ConfigError("scenario.graph is required when no preset is given")
        if s.vehicles is not None:
            vehicles = tuple(_vehicle(v, i) for i, v in enumerate(s.vehicles))
        else:
            vehicles = FIG6_VEHICLES if s.preset == "fig6" else ()
        noise = AppearanceNoise(sigma_hue=a.sigma_hue, sigma_shape=a.sigma_shape)
        return ScenarioConfig(graph=graph, vehicles=vehicles, background=s.background,
                              horizon=s.horizon, q_sim=s.q_sim, r_sim=s.r_sim, v_lo=s.v_lo,
                              v_hi=s.v_hi, shape_dim=s.shape_dim, noise=noise, hist=self.hist)

    def track_config(self) -> TrackConfig:
        k, g, t = self.kalman, self.gating, self.tracker
        return TrackConfig(theta_sim=t.theta_sim, tau=g.tau, v_min=g.v_min,
                           sigma2_floor=g.sigma2_floor, max_hops=t.max_hops,
                           w_color=self.appearance.w_color, metric=self.appearance.metric,
                           p0=tuple(k.p0), q=k.q, r=k.r)


def _vehicle(v: Any, i: int) -> VehicleSpec:
    where = f"scenario.vehicles[{i}]"
    if not isinstance(v, dict):
        raise ConfigError(f"{where} must be an object")
    allowed = {"id", "class", "color", "route", "depart", "v0"}
    extra = set(v) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
    try:
        return VehicleSpec(str(v["id"]), v["class"], tuple(int(c) for c in v["color"]),
                           tuple(str(n) for n in v["route"]), float(v.get("depart", 0.0)),
                           float(v.get("v0", 14.0)))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _section(cls, data: Any, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be an object")
    known = {f.name: f for f in fields(cls)}
    extra = set(data) - set(known)
    if extra:
        raise ConfigError(f"{name}: unknown key(s) {sorted(extra)}")
    values = {}
    for key, val in data.items():
        default = getattr(cls(), key)
        values[key] = _coerce(val, default, f"{name}.{key}")
    return cls(**values)


def _coerce(val: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{where} must be a boolean")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{where} must be an integer, got {val!r}")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ConfigError(f"{where} must be a finite number, got {val!r}")
        return float(val)
    if isinstance(default, tuple):
        if not isinstance(val, list) or len(val) != len(default):
            raise ConfigError(f"{where} must be a list of {len(default)} numbers")
        return tuple(_coerce(v, d, where) for v, d in zip(val, default))
    return val


def _check_ranges(cfg: RunConfig) -> None:
    s, k, a, g, t = cfg.scenario, cfg.kalman, cfg.appearance, cfg.gating, cfg.tracker
    checks = [
        (cfg.seed >= 0, "seed must be >= 0"),
        (s.preset is None or s.preset in PRESETS, f"scenario.preset must be one of {PRESETS} or null"),
        (s.graph is None or isinstance(s.graph, dict), "scenario.graph must be an object"),
        (s.vehicles is None or isinstance(s.vehicles, list), "scenario.vehicles must be a list"),
        (s.background >= 0, "scenario.background must be >= 0"),
        (s.horizon > 0, "scenario.horizon must be > 0"),
        (s.q_sim >= 0 and s.r_sim >= 0, "scenario.q_sim and r_sim must be >= 0"),
        (0 < s.v_lo <= s.v_hi, "need 0 < scenario.v_lo <= scenario.v_hi"),
        (s.shape_dim >= 1, "scenario.shape_dim must be >= 1"),
        (all(p > 0 for p in k.p0), "kalman.p0 entries must be > 0"),
        (k.q >= 0, "kalman.q must be >= 0"),
        (k.r > 0, "kalman.r must be > 0"),
        (min(a.h_bins, a.s_bins, a.v_bins) >= 1, "histogram bin counts must be >= 1"),
        (a.h_bins * a.s_bins * a.v_bins <= 65536, "histogram size must be <= 65536"),
        (0 <= a.w_color <= 1, "appearance.w_color must lie in [0, 1]"),
        (a.sigma_hue >= 0 and a.sigma_shape >= 0, "appearance noise must be >= 0"),
        (a.metric in ("intersection", "cosine"), "appearance.metric must be intersection or cosine"),
        (0 < g.tau <= 1, "gating.tau must lie in (0, 1]"),
        (g.v_min >= 0, "gating.v_min must be >= 0"),
        (g.sigma2_floor >= 0, "gating.sigma2_floor must be >= 0"),
        (0 < t.theta_sim <= 1, "tracker.theta_sim must lie in (0, 1]"),
        (t.max_hops >= 1, "tracker.max_hops must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    if s.graph is not None:
        extra = set(s.graph) - {"cameras", "junctions", "edges"}
        if extra:
            raise ConfigError(f"scenario.graph: unknown key(s) {sorted(extra)}")
        try:
            RoadGraph.from_dict(s.graph)
        except ScenarioError as exc:
            raise ConfigError(f"scenario.graph: {exc}") from exc
    for i, v in enumerate(s.vehicles or ()):
        if isinstance(v, dict) and v.get("class") not in VEHICLE_CLASSES:
            raise ConfigError(f"scenario.vehicles[{i}].class must be one of {VEHICLE_CLASSES}")
        try:
            _vehicle(v, i)
        except ScenarioError as exc:
            raise ConfigError(f"scenario.vehicles[{i}]: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno, exc.colno) from exc
    return config_from_dict(data)


def config_from_dict(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    sections = {"scenario": ScenarioSection, "kalman": KalmanSection,
                "appearance": AppearanceSection, "gating": GatingSection,
                "tracker": TrackerSection}
    extra = set(data) - set(sections) - {"seed"}
    if extra:
        raise ConfigError(f"unknown top-level key(s) {sorted(extra)}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    cfg = RunConfig(seed=seed, **{k: _section(cls, data.get(k), k) for k, cls in sections.items()})
    _check_ranges(cfg)
    return cfg


def load_config(path: Optional[os.PathLike | str]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_overrides(cfg: RunConfig, seed: Optional[int] = None, preset: Optional[str] = None,
                   tau: Optional[float] = None) -> RunConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if preset is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, preset=preset))
    if tau is not None:
        cfg = replace(cfg, gating=replace(cfg.gating, tau=tau))
    _check_ranges(cfg)
    return cfg
