"""On-disk formats: event logs, scenario files and trajectory exports.

Event logs are JSON Lines, one detection per line::

    {"camera":"D","t":20.0,"class":"truck","shape":[...],"hist":[...],"plate":"a"}

``plate`` is optional. Floats are written with Python's shortest
round-trip ``repr`` so a dump/load cycle is exact and output bytes are
stable for identical inputs.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence

import numpy as np

from .appearance import VEHICLE_CLASSES, AppearanceError, AppearanceFeature, ColorHistogram, HistogramConfig
from .kalman import VelocityObservation
from .simulator import DetectionEvent, RoadGraph, Scenario, ScenarioError, VehicleSpec
from .tracker import Metrics, Trajectory

HIST_SUM_TOL = 1e-9


class FormatError(ValueError):
    """Malformed input file; carries the 1-based line (and column) when known."""

    def __init__(self, msg: str, line: Optional[int] = None, col: Optional[int] = None):
        self.line, self.col = line, col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + msg)


class SinkError(OSError):
    def __init__(self, msg: str, written: int):
        super().__init__(msg)
        self.written = written


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


@contextmanager
def atomic_write(path: os.PathLike | str, mode: str = "w") -> Iterator[IO]:
    """Write to a sibling temp file and move it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, mode, newline="\n" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ---------------------------------------------------------------- event log


def event_to_record(ev: DetectionEvent) -> dict:
    rec = {
        "camera": ev.camera,
        "t": float(ev.t),
        "class": ev.feature.cls,
        "shape": [float(x) for x in ev.feature.shape],
        "hist": [float(x) for x in ev.feature.histogram.weights],
    }
    if ev.plate is not None:
        rec["plate"] = ev.plate
    return rec


def _hist_config_for(n: int, cfg: Optional[HistogramConfig]) -> HistogramConfig:
    if cfg is not None:
        return cfg
    default = HistogramConfig()
    if n == default.size:
        return default
    # unknown split: treat as a flat hue-only quantization
    return HistogramConfig(n, 1, 1)


def record_to_event(rec: dict, line: int, hist_cfg: Optional[HistogramConfig] = None) -> DetectionEvent:
    if not isinstance(rec, dict):
        raise FormatError("record must be a JSON object", line)
    allowed = {"camera", "t", "class", "shape", "hist", "plate"}
    extra = set(rec) - allowed
    if extra:
        raise FormatError(f"unknown field(s) {sorted(extra)}", line)
    for key in ("camera", "t", "class", "shape", "hist"):
        if key not in rec:
            raise FormatError(f"missing field {key!r}", line)
    cam, t, cls = rec["camera"], rec["t"], rec["class"]
    if not isinstance(cam, str) or not cam:
        raise FormatError("camera must be a non-empty string", line)
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
        raise FormatError(f"t must be a finite number, got {t!r}", line)
    if cls not in VEHICLE_CLASSES:
        raise FormatError(f"class must be one of {VEHICLE_CLASSES}, got {cls!r}", line)
    plate = rec.get("plate")
    if plate is not None and not isinstance(plate, str):
        raise FormatError("plate must be a string", line)
    try:
        shape = np.array(rec["shape"], dtype=float)
        hist = np.array(rec["hist"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"shape/hist must be arrays of numbers: {exc}", line) from exc
    if shape.ndim != 1 or hist.ndim != 1 or hist.size == 0:
        raise FormatError("shape and hist must be flat arrays (hist non-empty)", line)
    if not (np.isfinite(hist).all() and np.isfinite(shape).all()) or (hist < 0).any():
        raise FormatError("hist must be finite and non-negative; shape finite", line)
    if abs(hist.sum() - 1.0) > HIST_SUM_TOL:
        raise FormatError(f"hist sums to {hist.sum()!r}, expected 1 within {HIST_SUM_TOL}", line)
    try:
        cfg = _hist_config_for(hist.size, hist_cfg)
        if cfg.size != hist.size:
            raise FormatError(f"hist has {hist.size} bins, configuration expects {cfg.size}", line)
        feat = AppearanceFeature(cls, shape, ColorHistogram(hist, cfg))
    except AppearanceError as exc:
        raise FormatError(str(exc), line) from exc
    return DetectionEvent(cam, float(t), feat, plate)


def write_event_log(events: Iterable[DetectionEvent], sink: IO[str]) -> int:
    """Write one JSON line per event.

    Raises:
        SinkError: the sink failed; ``written`` holds the records already
            written.
    """
    n = 0
    for ev in events:
        try:
            sink.write(dumps(event_to_record(ev)) + "\n")
        except OSError as exc:
            raise SinkError(f"event log write failed after {n} records: {exc}", n) from exc
        n += 1
    return n


def read_event_log(source: IO[str], hist_cfg: Optional[HistogramConfig] = None) -> list[DetectionEvent]:
    """Parse and validate an event log.

    Blank lines are skipped. Every record must use the same shape length and
    histogram size.
    """
    events = []
    shape_len = hist_len = None
    for lineno, raw in enumerate(source, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(exc.msg, lineno, exc.colno) from exc
        ev = record_to_event(rec, lineno, hist_cfg)
        if shape_len is None:
            shape_len, hist_len = ev.feature.shape.size, ev.feature.histogram.weights.size
            hist_cfg = ev.feature.histogram.config
        elif ev.feature.shape.size != shape_len or ev.feature.histogram.weights.size != hist_len:
            raise FormatError("record feature lengths differ from earlier records", lineno)
        events.append(ev)
    return events


def load_event_log(path: os.PathLike | str, hist_cfg: Optional[HistogramConfig] = None) -> list[DetectionEvent]:
    with open(path, encoding="utf-8") as fh:
        return read_event_log(fh, hist_cfg)


# ---------------------------------------------------------------- scenario file


@dataclass
class ScenarioFile:
    """What the tracker needs besides the log: the road graph and speed readings."""

    graph: RoadGraph
    vehicles: list[VehicleSpec]
    velocity_obs: dict[str, list[VelocityObservation]]
    seed: Optional[int] = None

    @classmethod
    def from_scenario(cls, sc: Scenario) -> "ScenarioFile":
        return cls(sc.graph, list(sc.vehicles), sc.velocity_obs, sc.seed)


def scenario_to_dict(sc: Scenario | ScenarioFile) -> dict:
    return {
        "seed": sc.seed,
        "graph": sc.graph.to_dict(),
        "vehicles": [{"id": v.id, "class": v.cls, "color": list(v.color), "route": list(v.route),
                      "depart": float(v.depart), "v0": float(v.v0)} for v in sc.vehicles],
        "velocity_obs": {vid: [[float(o.t), float(o.z)] for o in obs]
                         for vid, obs in sc.velocity_obs.items()},
    }


def write_scenario(sc: Scenario | ScenarioFile, sink: IO[str]) -> None:
    sink.write(json.dumps(scenario_to_dict(sc), indent=1, allow_nan=False) + "\n")


def read_scenario(source: IO[str]) -> ScenarioFile:
    text = source.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, exc.lineno, exc.colno) from exc
    try:
        graph = RoadGraph.from_dict(d["graph"])
        vehicles = [VehicleSpec(v["id"], v["class"], tuple(v["color"]), tuple(v["route"]),
                                float(v.get("depart", 0.0)), float(v.get("v0", 14.0)))
                    for v in d.get("vehicles", [])]
        vobs = {vid: [VelocityObservation(float(t), float(z)) for t, z in obs]
                for vid, obs in d.get("velocity_obs", {}).items()}
    except (KeyError, TypeError, ValueError, ScenarioError) as exc:
        raise FormatError(f"malformed scenario file: {exc}") from exc
    return ScenarioFile(graph, vehicles, vobs, d.get("seed"))


def load_scenario(path: os.PathLike | str) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        return read_scenario(fh)


# ---------------------------------------------------------------- trajectory export


def trajectory_to_geojson(traj: Trajectory, graph: RoadGraph, log: Sequence[DetectionEvent] = (),
                          metrics: Optional[Metrics] = None) -> dict:
    """Feature collection with one point per visit and the path as a line.

    Coordinates are the scenario's planar metres, not longitude/latitude.
    """
    feats = []
    for hop, v in enumerate(traj.visits):
        x, y = graph.position(v.camera)
        props = {"hop": hop, "camera": v.camera, "t": float(v.t), "event": v.event_index,
                 "confidence": float(v.confidence), "survivors": v.survivors, "gap": v.gap}
        if v.event_index is not None and v.event_index < len(log) and log[v.event_index].plate is not None:
            props["plate"] = log[v.event_index].plate
        feats.append({"type": "Feature", "geometry": {"type": "Point", "coordinates": [x, y]},
                      "properties": props})
    if len(traj.visits) > 1:
        coords = [list(graph.position(v.camera)) for v in traj.visits]
        feats.append({"type": "Feature", "geometry": {"type": "LineString", "coordinates": coords},
                      "properties": {"path": traj.cameras}})
    out = {
        "type": "FeatureCollection",
        "features": feats,
        "metrics": {
            "gated": traj.gated,
            "comparisons": traj.comparisons,
            "candidates": traj.candidates,
            "survivors_per_hop": [len(s.survivors) for s in traj.searches],
            "comparisons_per_hop": [s.comparisons for s in traj.searches],
        },
    }
    if metrics is not None:
        out["metrics"]["evaluation"] = {
            "exact_order": metrics.exact_order, "precision": metrics.precision,
            "hops": metrics.hops, "saved_fraction": metrics.saved_fraction,
        }
    return out


def write_trajectory(traj: Trajectory, graph: RoadGraph, sink: IO[str],
                     log: Sequence[DetectionEvent] = (), metrics: Optional[Metrics] = None) -> None:
    sink.write(json.dumps(trajectory_to_geojson(traj, graph, log, metrics), indent=1,
                          allow_nan=False) + "\n")
