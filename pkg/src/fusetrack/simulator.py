"""Deterministic camera-network traffic simulator.

Vehicles drive straight-line road segments between graph nodes with a
clamped Gaussian random-walk speed. Speed is linear between one-second
knots, so position is piecewise quadratic and camera entry times are
solved in closed form. A detection is emitted each time a vehicle enters a
camera's coverage disc; nothing is observed in between.

Randomness comes from numpy's PCG64 bit generator, one independent stream
per ``(seed, purpose, vehicle index)`` triple, so a scenario is a pure
function of its config and seed.
"""
from __future__ import annotations

import bisect
import colorsys
import math
from dataclasses import dataclass, field, replace
from itertools import islice
from typing import Iterable, Iterator, Optional, Sequence

import networkx as nx
import numpy as np

from .appearance import (VEHICLE_CLASSES, AppearanceFeature, ColorHistogram, HistogramConfig,
                         histogram_from_hsv, wrap_hue)
from .kalman import VelocityObservation


class ScenarioError(ValueError):
    """Invalid scenario or graph configuration."""


# rng stream purposes
_BACKGROUND, _MOTION, _APPEARANCE, _SPEED_OBS, _TRACE = range(5)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, *stream]))


# ---------------------------------------------------------------- graph


@dataclass(frozen=True)
class CameraNode:
    id: str
    position: tuple[float, float]
    radius: float = 50.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ScenarioError(f"camera {self.id}: radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Junction:
    id: str
    position: tuple[float, float]


class RoadGraph:
    """Undirected road network of cameras and junctions.

    Edges are straight segments, so an edge's length is the distance
    between its end points.
    """

    def __init__(self, cameras: Sequence[CameraNode], edges: Iterable[tuple[str, str]],
                 junctions: Sequence[Junction] = ()):
        self.cameras = {c.id: c for c in cameras}
        self.junctions = {j.id: j for j in junctions}
        ids = [c.id for c in cameras] + [j.id for j in junctions]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"node ids must be unique: {ids}")
        self.g = nx.Graph()
        for nid in ids:
            self.g.add_node(nid)
        for a, b in edges:
            if a not in self.g or b not in self.g:
                raise ScenarioError(f"edge {a}-{b} references an unknown node")
            length = math.dist(self.position(a), self.position(b))
            if not length > 0:
                raise ScenarioError(f"edge {a}-{b} has zero length")
            self.g.add_edge(a, b, length=length)
        if ids and not nx.is_connected(self.g):
            raise ScenarioError("road graph is not connected")
        self._dist = dict(nx.all_pairs_dijkstra_path_length(self.g, weight="length"))

    def position(self, node: str) -> tuple[float, float]:
        if node in self.cameras:
            return self.cameras[node].position
        if node in self.junctions:
            return self.junctions[node].position
        raise ScenarioError(f"unknown node {node!r}")

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted(e)) for e in self.g.edges)

    def has_camera(self, cam: str) -> bool:
        return cam in self.cameras

    def is_adjacent(self, a: str, b: str) -> bool:
        return self.g.has_edge(a, b)

    def edge_length(self, a: str, b: str) -> float:
        return self.g.edges[a, b]["length"]

    def distance(self, a: str, b: str) -> float:
        """Shortest-path road distance in metres."""
        return self._dist[a][b]

    def camera_neighbors(self, cam: str) -> dict[str, float]:
        """Cameras reachable from ``cam`` without passing another camera.

        Maps each such camera to its shortest road distance through
        junctions only.
        """
        if cam not in self.cameras:
            raise ScenarioError(f"unknown camera {cam!r}")
        sub = self.g.subgraph(set(self.junctions) | {cam})
        lengths = nx.single_source_dijkstra_path_length(sub, cam, weight="length")
        out: dict[str, float] = {}
        for node, dn in lengths.items():
            for n in self.g.neighbors(node):
                if n in self.cameras and n != cam:
                    out[n] = min(out.get(n, math.inf), dn + self.edge_length(node, n))
        return dict(sorted(out.items()))

    def check_route(self, route: Sequence[str]) -> None:
        if not route:
            raise ScenarioError("route must not be empty")
        for node in route:
            if node not in self.g:
                raise ScenarioError(f"route visits unknown node {node!r}")
        for a, b in zip(route, route[1:]):
            if not self.g.has_edge(a, b):
                raise ScenarioError(f"route step {a}->{b} is not a road")

    def to_dict(self) -> dict:
        return {
            "cameras": [{"id": c.id, "x": c.position[0], "y": c.position[1], "radius": c.radius}
                        for c in self.cameras.values()],
            "junctions": [{"id": j.id, "x": j.position[0], "y": j.position[1]}
                          for j in self.junctions.values()],
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadGraph":
        try:
            cams = [CameraNode(c["id"], (float(c["x"]), float(c["y"])), float(c.get("radius", 50.0)))
                    for c in d.get("cameras", [])]
            juncs = [Junction(j["id"], (float(j["x"]), float(j["y"]))) for j in d.get("junctions", [])]
            edges = [tuple(e) for e in d.get("edges", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed graph spec: {exc}") from exc
        for e in edges:
            if len(e) != 2:
                raise ScenarioError(f"edge must name two nodes, got {list(e)}")
        return cls(cams, edges, juncs)


# ---------------------------------------------------------------- motion


@dataclass(frozen=True)
class VelocityProfile:
    """Clamped Gaussian random walk on speed, one knot every ``dt`` seconds.

    ``steps`` holds ``(time, delta)`` jumps added at the first knot at or
    after ``time`` (local time, seconds since departure).
    """

    v0: float
    q_sim: float = 0.02
    v_lo: float = 3.0
    v_hi: float = 30.0
    dt: float = 1.0
    steps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not 0 < self.v_lo <= self.v_hi:
            raise ScenarioError(f"need 0 < v_lo <= v_hi, got [{self.v_lo}, {self.v_hi}]")
        if self.q_sim < 0 or not self.dt > 0:
            raise ScenarioError("q_sim must be >= 0 and dt > 0")


_WALK_CHUNK = 256


def _walk(profile: VelocityProfile, rng: np.random.Generator) -> Iterator[float]:
    """Endless clamped random walk; noise is drawn in fixed-size chunks."""
    sd = math.sqrt(profile.q_sim)
    jumps: dict[int, float] = {}
    for t, delta in profile.steps:
        k = max(0, math.ceil(t / profile.dt - 1e-9))
        jumps[k] = jumps.get(k, 0.0) + delta
    lo, hi = profile.v_lo, profile.v_hi
    v = min(hi, max(lo, profile.v0 + jumps.get(0, 0.0)))
    yield v
    k = 1
    while True:
        for e in rng.normal(0.0, sd, _WALK_CHUNK).tolist():
            v = min(hi, max(lo, v + e + jumps.get(k, 0.0)))
            k += 1
            yield v


def sample_velocity(profile: VelocityProfile, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Speeds at knots ``0, dt, ..., n_steps*dt``, all within ``[v_lo, v_hi]``."""
    return np.fromiter(islice(_walk(profile, rng), n_steps + 1), dtype=float, count=n_steps + 1)


@dataclass(frozen=True)
class Motion:
    """Hidden truth for one vehicle: speed knots and the route polyline."""

    depart: float
    dt: float
    speeds: np.ndarray
    arc: np.ndarray  # cumulative distance at each knot
    polyline: np.ndarray  # route vertices, shape (k, 2)
    seg_start: np.ndarray  # cumulative distance at each vertex

    @property
    def length(self) -> float:
        return float(self.seg_start[-1])

    @property
    def arrive(self) -> float:
        return self.time_at(self.length)

    def speed_at(self, t: float) -> float:
        u = (t - self.depart) / self.dt
        u = min(max(u, 0.0), len(self.speeds) - 1.0)
        return float(np.interp(u, np.arange(len(self.speeds)), self.speeds))

    def distance_at(self, t: float) -> float:
        tau = t - self.depart
        if tau <= 0:
            return 0.0
        k = min(int(tau // self.dt), len(self.speeds) - 2)
        r = tau - k * self.dt
        v0, v1 = self.speeds[k], self.speeds[k + 1]
        a = (v1 - v0) / self.dt
        return min(float(self.arc[k] + v0 * r + 0.5 * a * r * r), self.length)

    def time_at(self, s: float) -> float:
        """Time at which the vehicle has covered ``s`` metres."""
        if s <= 0:
            return self.depart
        k = bisect.bisect_right(self.arc.tolist(), s) - 1
        k = min(max(k, 0), len(self.speeds) - 2)
        ds = s - self.arc[k]
        v0, v1 = self.speeds[k], self.speeds[k + 1]
        a = (v1 - v0) / self.dt
        disc = v0 * v0 + 2.0 * a * ds
        r = 2.0 * ds / (v0 + math.sqrt(max(disc, 0.0)))
        return float(self.depart + k * self.dt + r)

    def position_at(self, t: float) -> np.ndarray:
        s = self.distance_at(t)
        i = min(bisect.bisect_right(self.seg_start.tolist(), s) - 1, len(self.polyline) - 2)
        i = max(i, 0)
        seg = self.polyline[i + 1] - self.polyline[i]
        seg_len = self.seg_start[i + 1] - self.seg_start[i]
        return self.polyline[i] + seg * ((s - self.seg_start[i]) / seg_len)


def integrate_motion(profile: VelocityProfile, polyline: np.ndarray, depart: float,
                     rng: np.random.Generator) -> Motion:
    """Drive the route at the sampled speeds until its end is reached."""
    polyline = np.asarray(polyline, dtype=float).reshape(-1, 2)
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    seg_start = np.concatenate([[0.0], np.cumsum(seg)])
    length = float(seg_start[-1])
    walk = _walk(profile, rng)
    speeds = [next(walk)]
    arc = [0.0]
    half_dt = 0.5 * profile.dt
    while arc[-1] < length or len(speeds) < 2:
        v = next(walk)
        arc.append(arc[-1] + half_dt * (speeds[-1] + v))
        speeds.append(v)
    return Motion(depart, profile.dt, np.array(speeds), np.array(arc), polyline, seg_start)


def coverage_entries(polyline: np.ndarray, seg_start: np.ndarray,
                     cameras: Sequence[CameraNode]) -> list[tuple[float, str]]:
    """Arc-length positions where the route enters each camera's disc.

    Each contiguous stretch inside one disc yields a single entry at its
    start. Returned sorted by arc length.
    """
    out = []
    for cam in cameras:
        c = np.asarray(cam.position, dtype=float)
        spans = []
        for i in range(len(polyline) - 1):
            p, q = polyline[i], polyline[i + 1]
            seg_len = seg_start[i + 1] - seg_start[i]
            d = (q - p) / seg_len
            w = p - c
            b = float(d @ w)
            cc = float(w @ w) - cam.radius ** 2
            disc = b * b - cc
            if disc < 0:
                continue
            root = math.sqrt(disc)
            u0, u1 = max(-b - root, 0.0), min(-b + root, seg_len)
            if u0 <= u1:
                spans.append((seg_start[i] + u0, seg_start[i] + u1))
        spans.sort()
        merged: list[list[float]] = []
        for a, b in spans:
            if merged and a <= merged[-1][1] + 1e-9:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        out.extend((a, cam.id) for a, _ in merged)
    out.sort()
    return out


# ---------------------------------------------------------------- appearance synthesis


@dataclass(frozen=True)
class AppearanceNoise:
    """How detections perturb a vehicle's true look.

    Each synthetic patch has ``pixels`` samples; ``body_fraction`` of them
    take the paint colour with wrapped-Gaussian hue noise of ``sigma_hue``
    degrees, the rest are dark glass/tyre pixels. The shape descriptor gets
    isotropic Gaussian noise ``sigma_shape``.
    """

    sigma_hue: float = 8.0
    sigma_shape: float = 0.1
    sigma_sv: float = 0.04
    pixels: int = 256
    body_fraction: float = 0.75

    def scaled(self, factor: float) -> "AppearanceNoise":
        return replace(self, sigma_hue=self.sigma_hue * factor, sigma_shape=self.sigma_shape * factor)


def observe_feature(cls: str, color: Sequence[int], shape: np.ndarray, noise: AppearanceNoise,
                    hist_cfg: HistogramConfig, rng: np.random.Generator) -> AppearanceFeature:
    h0, s0, v0 = colorsys.rgb_to_hsv(*(c / 255.0 for c in color))
    n_body = int(round(noise.pixels * noise.body_fraction))
    n_dark = noise.pixels - n_body
    h = wrap_hue(h0 * 360.0 + rng.normal(0.0, noise.sigma_hue, n_body))
    s = np.clip(s0 + rng.normal(0.0, noise.sigma_sv, n_body), 0.0, 1.0)
    v = np.clip(v0 + rng.normal(0.0, noise.sigma_sv, n_body), 0.0, 1.0)
    dh = rng.uniform(0.0, 360.0, n_dark)
    ds = rng.uniform(0.0, 0.2, n_dark)
    dv = rng.uniform(0.0, 0.2, n_dark)
    hist = histogram_from_hsv(np.concatenate([h, dh]), np.concatenate([s, ds]),
                              np.concatenate([v, dv]), hist_cfg)
    obs_shape = np.asarray(shape) + rng.normal(0.0, noise.sigma_shape, len(shape))
    return AppearanceFeature(cls, obs_shape, hist)


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    cls: str
    color: tuple[int, int, int]
    route: tuple[str, ...]
    depart: float = 0.0
    v0: float = 14.0
    steps: tuple[tuple[float, float], ...] = ()
    shape: Optional[tuple[float, ...]] = None  # drawn from the seed when absent

    def __post_init__(self):
        if self.cls not in VEHICLE_CLASSES:
            raise ScenarioError(f"vehicle {self.id}: unknown class {self.cls!r}")
        if len(self.color) != 3 or any(not 0 <= c <= 255 for c in self.color):
            raise ScenarioError(f"vehicle {self.id}: colour must be three 0..255 channels")


@dataclass(frozen=True)
class DetectionEvent:
    camera: str
    t: float
    feature: AppearanceFeature
    plate: Optional[str] = None

    @property
    def cls(self) -> str:
        return self.feature.cls


# common paint colours for background traffic
PALETTE = (
    (235, 235, 235), (25, 25, 25), (150, 150, 155), (190, 30, 35), (30, 60, 170),
    (40, 120, 60), (225, 190, 40), (120, 70, 40), (230, 110, 30), (90, 40, 120),
)
CLASS_WEIGHTS = {"car": 0.55, "truck": 0.2, "bus": 0.1, "motor": 0.15}


@dataclass(frozen=True)
class ScenarioConfig:
    graph: dict
    vehicles: tuple[VehicleSpec, ...] = ()
    background: int = 0
    horizon: float = 900.0
    q_sim: float = 0.02
    r_sim: float = 1.0
    v_lo: float = 3.0
    v_hi: float = 30.0
    background_speed: tuple[float, float] = (9.0, 18.0)
    shape_dim: int = 8
    noise: AppearanceNoise = field(default_factory=AppearanceNoise)
    hist: HistogramConfig = field(default_factory=HistogramConfig)

    def __post_init__(self):
        if self.background < 0:
            raise ScenarioError("background vehicle count must be >= 0")
        if not self.horizon > 0:
            raise ScenarioError("horizon must be > 0")
        if self.shape_dim < 1:
            raise ScenarioError("shape_dim must be >= 1")
        if self.r_sim < 0:
            raise ScenarioError("r_sim must be >= 0")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"vehicle ids must be unique: {ids}")


@dataclass
class Scenario:
    graph: RoadGraph
    vehicles: list[VehicleSpec]
    events: list[DetectionEvent]
    velocity_obs: dict[str, list[VelocityObservation]]
    seed: int
    config: ScenarioConfig
    motions: dict[str, Motion] = field(default_factory=dict, repr=False)

    def passages(self, vehicle_id: str) -> list[int]:
        """Indices of ``vehicle_id``'s detections, in time order."""
        return [i for i, e in enumerate(self.events) if e.plate == vehicle_id]

    def vehicle(self, vehicle_id: str) -> VehicleSpec:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise KeyError(vehicle_id)


def _random_route(graph: RoadGraph, rng: np.random.Generator) -> tuple[str, ...]:
    cams = sorted(graph.cameras)
    route = [cams[int(rng.integers(len(cams)))]]
    want = int(rng.integers(2, 5))  # cameras to pass, counting the start
    seen_cams = 1
    while seen_cams < want:
        nbrs = sorted(n for n in graph.g.neighbors(route[-1]) if n not in route)
        if not nbrs:
            break
        route.append(nbrs[int(rng.integers(len(nbrs)))])
        if route[-1] in graph.cameras:
            seen_cams += 1
    return tuple(route)


def _background_vehicles(cfg: ScenarioConfig, graph: RoadGraph, seed: int) -> list[VehicleSpec]:
    rng = make_rng(seed, _BACKGROUND)
    classes = list(CLASS_WEIGHTS)
    probs = np.array([CLASS_WEIGHTS[c] for c in classes])
    out = []
    for i in range(cfg.background):
        cls = classes[int(rng.choice(len(classes), p=probs))]
        color = PALETTE[int(rng.integers(len(PALETTE)))]
        route = _random_route(graph, rng)
        depart = float(rng.uniform(0.0, cfg.horizon))
        v0 = float(rng.uniform(*cfg.background_speed))
        out.append(VehicleSpec(f"bg{i:03d}", cls, color, route, depart, v0))
    return out


def generate_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    """Simulate every vehicle and collect the time-sorted detection log.

    Raises:
        ScenarioError: malformed or disconnected graph, or a route that
            steps between non-adjacent nodes.
    """
    graph = RoadGraph.from_dict(cfg.graph)
    vehicles = list(cfg.vehicles) + _background_vehicles(cfg, graph, seed)
    cameras = list(graph.cameras.values())
    tagged: list[tuple[float, int, DetectionEvent]] = []
    vobs: dict[str, list[VelocityObservation]] = {}
    motions: dict[str, Motion] = {}
    for idx, veh in enumerate(vehicles):
        graph.check_route(veh.route)
        rng_motion = make_rng(seed, _MOTION, idx)
        rng_look = make_rng(seed, _APPEARANCE, idx)
        rng_speed = make_rng(seed, _SPEED_OBS, idx)
        shape = (np.asarray(veh.shape, dtype=float) if veh.shape is not None
                 else rng_look.normal(0.0, 1.0, cfg.shape_dim))
        if shape.size != cfg.shape_dim:
            raise ScenarioError(f"vehicle {veh.id}: shape has {shape.size} dims, expected {cfg.shape_dim}")
        profile = VelocityProfile(veh.v0, cfg.q_sim, cfg.v_lo, cfg.v_hi, 1.0, veh.steps)
        polyline = np.array([graph.position(n) for n in veh.route], dtype=float)
        if len(polyline) == 1:
            entries = [(0.0, c.id) for c in cameras
                       if math.dist(c.position, polyline[0]) <= c.radius]
            motion = None
        else:
            motion = integrate_motion(profile, polyline, veh.depart, rng_motion)
            motions[veh.id] = motion
            entries = coverage_entries(motion.polyline, motion.seg_start, cameras)
        obs = []
        for s, cam in entries:
            t = motion.time_at(s) if motion else veh.depart
            if t > cfg.horizon:
                break
            feat = observe_feature(veh.cls, veh.color, shape, cfg.noise, cfg.hist, rng_look)
            tagged.append((t, len(tagged), DetectionEvent(cam, t, feat, veh.id)))
            speed = motion.speed_at(t) if motion else veh.v0
            z = speed + (rng_speed.normal(0.0, math.sqrt(cfg.r_sim)) if cfg.r_sim > 0 else 0.0)
            obs.append(VelocityObservation(t, z))
        vobs[veh.id] = obs
    tagged.sort(key=lambda x: (x[0], x[1]))
    events = [e for _, _, e in tagged]
    return Scenario(graph, vehicles, events, vobs, seed, cfg, motions)


# ---------------------------------------------------------------- velocity traces


def simulate_velocity_trace(profile: VelocityProfile, horizon: float, obs_count: int,
                            rng: np.random.Generator, r_sim: float = 1.0,
                            ) -> tuple[np.ndarray, np.ndarray, list[VelocityObservation]]:
    """Hidden speed trace plus ``obs_count`` evenly spaced noisy readings.

    Returns:
        ``(knot_times, true_speeds, observations)``; observation times run
        from 0 to ``horizon`` inclusive.
    """
    if obs_count < 0:
        raise ScenarioError("obs_count must be >= 0")
    n_steps = max(1, math.ceil(horizon / profile.dt))
    speeds = sample_velocity(profile, n_steps, rng)
    times = np.arange(n_steps + 1) * profile.dt
    if obs_count == 0:
        return times, speeds, []
    obs_t = np.linspace(0.0, horizon, obs_count) if obs_count > 1 else np.array([0.0])
    truth = np.interp(obs_t, times, speeds)
    noise = rng.normal(0.0, math.sqrt(r_sim), obs_count) if r_sim > 0 else np.zeros(obs_count)
    obs = [VelocityObservation(float(t), float(z)) for t, z in zip(obs_t, truth + noise)]
    return times, speeds, obs


#: Four speed-variance panels for the sparse-observation experiment.
FIG5_VARIANCES = (0.001, 0.005, 0.02, 0.05)


def fig5_profile(panel: int, step: float = 8.0, step_time: float = 1000.0) -> VelocityProfile:
    """Random-walk speed profile for one panel with a mid-run jump."""
    steps = ((step_time, step),) if step else ()
    return VelocityProfile(v0=15.0, q_sim=FIG5_VARIANCES[panel], v_lo=1.0, v_hi=40.0, steps=steps)


def fig5_trace(panel: int, seed: int, step: float = 8.0, r_sim: float = 1.0):
    """Observations at t = 0, 2000, 4000 over a 4000 s hidden trace."""
    return simulate_velocity_trace(fig5_profile(panel, step), 4000.0, 3,
                                   make_rng(seed, _TRACE, panel), r_sim)


# ---------------------------------------------------------------- fig6 preset


FIG6_GRAPH = {
    "cameras": [
        {"id": "A", "x": 800.0, "y": 1500.0, "radius": 50.0},
        {"id": "B", "x": 800.0, "y": 800.0, "radius": 50.0},
        {"id": "C", "x": 1500.0, "y": 1100.0, "radius": 50.0},
        {"id": "D", "x": 200.0, "y": 500.0, "radius": 50.0},
        {"id": "E", "x": 1800.0, "y": 1700.0, "radius": 50.0},
    ],
    "junctions": [],
    "edges": [["A", "B"], ["B", "D"], ["B", "C"], ["C", "E"], ["A", "C"]],
}

FIG6_VEHICLES = (
    VehicleSpec("a", "truck", (200, 30, 30), ("D", "B", "A"), depart=20.0, v0=13.0),
    VehicleSpec("b", "car", (30, 70, 200), ("E", "C", "B", "D"), depart=40.0, v0=15.0),
    VehicleSpec("c", "bus", (230, 200, 40), ("A", "C", "E"), depart=30.0, v0=11.0),
    VehicleSpec("d", "motor", (40, 160, 70), ("D", "B", "C"), depart=60.0, v0=16.0),
)

PRESETS = ("fig6",)


def fig6_config(background: int = 60, noise_scale: float = 1.0, **overrides) -> ScenarioConfig:
    """Five cameras A-E, tracked vehicles a-d, plus background traffic."""
    cfg = ScenarioConfig(graph=FIG6_GRAPH, vehicles=FIG6_VEHICLES, background=background,
                         noise=AppearanceNoise().scaled(noise_scale))
    return replace(cfg, **overrides) if overrides else cfg
