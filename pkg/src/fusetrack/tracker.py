"""Cross-camera tracking: velocity gate, appearance match, advance.

Starting from a query detection, each hop estimates the target's speed
from the velocity observations available so far, gates the future
detections at every neighbouring camera by predicted arrival time, and
accepts the closest same-class survivor if it is confident enough. Plate
ids are never read here; :func:`evaluate` is the only consumer.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gating
from .appearance import AppearanceFeature
from .kalman import (DEFAULT_P0, DEFAULT_Q, DEFAULT_R, ObservationModel, StateEstimate,
                     TransitionModel, VelocityObservation, initial_state, predict_to, run_filter)
from .simulator import DetectionEvent, RoadGraph, Scenario

log = logging.getLogger(__name__)

class TrackError(ValueError):
    pass


@dataclass(frozen=True)
class TrackConfig:
    theta_sim: float = 0.6
    tau: float = gating.DEFAULT_TAU
    v_min: float = gating.DEFAULT_V_MIN
    sigma2_floor: float = gating.DEFAULT_SIGMA2_FLOOR
    max_hops: int = 10
    w_color: float = 0.5
    metric: str = "intersection"
    p0: tuple[float, float] = DEFAULT_P0
    q: float = DEFAULT_Q
    r: float = DEFAULT_R

    def __post_init__(self):
        if not 0.0 < self.theta_sim <= 1.0:
            raise TrackError(f"theta_sim must lie in (0, 1], got {self.theta_sim}")
        if self.max_hops < 1:
            raise TrackError(f"max_hops must be >= 1, got {self.max_hops}")
        if not 0.0 < self.tau <= 1.0:
            raise TrackError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.w_color <= 1.0:
            raise TrackError(f"w_color must lie in [0, 1], got {self.w_color}")


@dataclass(frozen=True)
class Query:
    feature: AppearanceFeature
    camera: str
    t: float
    event_index: Optional[int] = None

    @property
    def cls(self) -> str:
        return self.feature.cls

    @classmethod
    def from_event(cls, log: Sequence[DetectionEvent], index: int) -> "Query":
        ev = log[index]
        return cls(ev.feature, ev.camera, ev.t, index)


@dataclass(frozen=True)
class Visit:
    camera: str
    t: float
    event_index: Optional[int]
    confidence: float
    survivors: int = 0
    gap: bool = False


@dataclass(frozen=True)
class HopSearch:
    """Book-keeping for one search from ``camera`` at time ``t``.

    ``candidates`` counts the same-class future detections at the searched
    cameras (what a full scan compares); ``comparisons`` counts those that
    survived the gate and were actually scored.
    """

    camera: str
    t: float
    cameras: tuple[str, ...]
    survivors: tuple[int, ...]
    comparisons: int
    candidates: int
    best: Optional[int]
    best_distance: float
    accepted: bool


@dataclass
class Trajectory:
    visits: list[Visit]
    searches: list[HopSearch] = field(default_factory=list)
    gated: bool = True

    @property
    def cameras(self) -> list[str]:
        return [v.camera for v in self.visits]

    @property
    def comparisons(self) -> int:
        return sum(s.comparisons for s in self.searches)

    @property
    def candidates(self) -> int:
        return sum(s.candidates for s in self.searches)


class EventIndex:
    """Detections grouped by camera, each group sorted by time."""

    def __init__(self, log: Sequence[DetectionEvent]):
        self.log = log
        by_cam: dict[str, list[int]] = defaultdict(list)
        prev = -math.inf
        for i, ev in enumerate(log):
            if ev.t < prev:
                raise TrackError(f"event log is not time-sorted at record {i}")
            prev = ev.t
            by_cam[ev.camera].append(i)
        self.by_cam = {c: (np.array([log[i].t for i in idx]), idx) for c, idx in by_cam.items()}

    def after(self, camera: str, t: float) -> list[int]:
        if camera not in self.by_cam:
            return []
        times, idx = self.by_cam[camera]
        return idx[int(np.searchsorted(times, t, side="right")):]


def estimate_state(vobs: Sequence[VelocityObservation], t: float, position: float,
                   cfg: TrackConfig) -> Optional[StateEstimate]:
    """Kalman estimate at time ``t`` from observations no later than ``t``.

    The filter is seeded at the first observation with that reading as its
    speed mean; the returned position is re-anchored to ``position``.
    """
    used = [o for o in vobs if o.t <= t]
    if not used:
        return None
    model = TransitionModel.constant_velocity(1.0, cfg.q)
    init = initial_state(t=used[0].t, position=position, velocity=used[0].z, p0=cfg.p0)
    est = run_filter(init, used, model, ObservationModel(cfg.r))[-1]
    est = predict_to(est, t, model)
    return StateEstimate(x=[position, est.velocity], P=est.P, t=est.t)


def search_hop(query: AppearanceFeature, camera: str, t: float, est: Optional[StateEstimate],
               graph: RoadGraph, index: EventIndex, cfg: TrackConfig, gate: bool = True) -> HopSearch:
    """Find the best match among future detections at neighbouring cameras.

    The best is the smallest appearance distance; ties go to the earlier
    detection, then the lower camera id.
    """
    neighbors = graph.camera_neighbors(camera)
    if gate and est is None:
        log.info("no velocity reading at or before t=%s; gate at %s is all-pass", t, camera)
    elif gate and est.velocity <= cfg.v_min:
        log.info("speed estimate %.3f <= v_min; gate at %s is all-pass", est.velocity, camera)
    best_key = (math.inf, math.inf, "")
    best = None
    survivors: list[int] = []
    comparisons = candidates = 0
    for cam, dist in neighbors.items():
        meta = [gating.CandidateMeta(cam, index.log[i].t, i, index.log[i].feature)
                for i in index.after(cam, t)]
        candidates += sum(1 for m in meta if m.feature.cls == query.cls)
        if gate:
            _, fc = gating.gate_candidates(est, dist, meta, cfg.tau, cfg.v_min, cfg.sigma2_floor)
        else:
            T = gating.CandidateMatrix.from_meta(meta)
            fc = gating.apply_filter(gating.full_pass(T.n), T)
        res = gating.gated_top_k(query, fc, 1, cfg.w_color, cfg.metric)
        survivors.extend(meta[j].ref for j in fc.survivors)
        comparisons += res.comparisons
        if res.ranked:
            m = meta[res.ranked[0]]
            key = (res.distances[0], m.t, cam)
            if key < best_key:
                best_key, best = key, m.ref
    accepted = best is not None and 1.0 - best_key[0] >= cfg.theta_sim
    log.debug("hop from %s at t=%s: %d candidates, %d compared, best=%s d=%.4f accepted=%s",
              camera, t, candidates, comparisons, best, best_key[0], accepted)
    return HopSearch(camera, t, tuple(neighbors), tuple(sorted(survivors)), comparisons,
                     candidates, best, best_key[0], accepted)


def track(q: Query, log: Sequence[DetectionEvent], graph: RoadGraph,
          vobs: Sequence[VelocityObservation], cfg: TrackConfig = TrackConfig(),
          gate: bool = True, index: Optional[EventIndex] = None) -> Trajectory:
    """Follow the query vehicle forward through the camera network.

    Args:
        q: the target's reference detection and where/when it was seen.
        log: time-sorted detections from all cameras.
        graph: road network used for neighbour cameras and distances.
        vobs: the target's velocity readings; only those at or before the
            current hop's time are used.
        cfg: thresholds and filter parameters.
        gate: ``False`` runs the full-scan baseline (no arrival-time gate).

    Returns:
        A trajectory whose first visit is the query origin.

    Raises:
        TrackError: the origin camera is not in the graph.
    """
    if not graph.has_camera(q.camera):
        raise TrackError(f"origin camera {q.camera!r} is not in the road graph")
    index = index if index is not None else EventIndex(log)
    traj = Trajectory([Visit(q.camera, q.t, q.event_index, 1.0)], gated=gate)
    vobs = sorted(vobs, key=lambda o: o.t)
    cam, t, route_pos = q.camera, q.t, 0.0
    for _ in range(cfg.max_hops):
        est = estimate_state(vobs, t, route_pos, cfg)
        hop = search_hop(q.feature, cam, t, est, graph, index, cfg, gate)
        traj.searches.append(hop)
        if not hop.accepted:
            break
        ev = log[hop.best]
        route_pos += graph.distance(cam, ev.camera)
        traj.visits.append(Visit(ev.camera, ev.t, hop.best, 1.0 - hop.best_distance,
                                 survivors=sum(1 for i in hop.survivors if log[i].camera == ev.camera),
                                 gap=not graph.is_adjacent(cam, ev.camera)))
        cam, t = ev.camera, ev.t
    return traj


@dataclass(frozen=True)
class Metrics:
    exact_order: bool
    precision: Optional[float]
    hops: int
    correct_hops: int
    comparisons: int
    comparisons_full: int
    saved_fraction: float


def ground_truth(events: Sequence[DetectionEvent], target: str, since: float) -> list[int]:
    return [i for i, e in enumerate(events) if e.plate == target and e.t >= since]


def evaluate_log(traj: Trajectory, events: Sequence[DetectionEvent], target: str) -> Metrics:
    """Score a trajectory against the plate labels carried by ``events``."""
    origin = traj.visits[0]
    gt = ground_truth(events, target, origin.t)
    exact = traj.cameras == [events[i].camera for i in gt]
    hops = traj.visits[1:]
    correct = sum(1 for v in hops if events[v.event_index].plate == target)
    precision = correct / len(hops) if hops else None
    full = traj.candidates
    saved = 1.0 - traj.comparisons / full if full else 0.0
    return Metrics(exact, precision, len(hops), correct, traj.comparisons, full, saved)


def evaluate(traj: Trajectory, scenario: Scenario, target: str) -> Metrics:
    """Score a trajectory against the scenario's ground truth."""
    if target not in {v.id for v in scenario.vehicles}:
        raise TrackError(f"unknown target vehicle {target!r}")
    return evaluate_log(traj, scenario.events, target)


def query_for(scenario: Scenario, target: str) -> Query:
    """Query from the target's first detection (uses the plate to pick it)."""
    idx = scenario.passages(target)
    if not idx:
        raise TrackError(f"vehicle {target!r} was never detected")
    return Query.from_event(scenario.events, idx[0])


def track_vehicle(scenario: Scenario, target: str, cfg: TrackConfig = TrackConfig(),
                  gate: bool = True, index: Optional[EventIndex] = None) -> Trajectory:
    q = query_for(scenario, target)
    return track(q, scenario.events, scenario.graph, scenario.velocity_obs.get(target, []),
                 cfg, gate, index)

