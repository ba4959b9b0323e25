"""Command-line interface: ``fusetrack simulate | track | retrieve | bench``.

Exit codes: 0 ok, 2 usage, 3 input parse error, 4 runtime error. Set
``FUSETRACK_LOG`` (``debug``, ``info``, ...) for diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import formats
from .appearance import ranked_distances
from .config import ConfigError, RunConfig, load_config, with_overrides
from .formats import FormatError, ScenarioFile
from .simulator import PRESETS, DetectionEvent, ScenarioError, generate_scenario
from .tracker import (EventIndex, Query, TrackConfig, TrackError, Trajectory, Visit, evaluate,
                      evaluate_log, track, track_vehicle)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("fusetrack")


class UsageError(Exception):
    pass


def scenario_path_for(log_path: os.PathLike | str) -> Path:
    """``runs/events.jsonl`` -> ``runs/events.scenario.json``."""
    p = Path(log_path)
    return p.with_name(p.stem + ".scenario.json")


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    preset = getattr(args, "scenario", None)
    return with_overrides(cfg, seed=getattr(args, "seed", None),
                          preset=preset if preset in PRESETS else None,
                          tau=getattr(args, "gate_threshold", None))


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = generate_scenario(cfg.scenario_config(), cfg.seed)
    out = Path(args.out)
    with formats.atomic_write(out) as fh:
        n = formats.write_event_log(sc.events, fh)
    with formats.atomic_write(scenario_path_for(out)) as fh:
        formats.write_scenario(sc, fh)
    print(f"{n} records written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- track / retrieve


def _load_inputs(args, cfg: RunConfig) -> tuple[list[DetectionEvent], ScenarioFile]:
    events = formats.load_event_log(args.log, cfg.hist)
    spec = getattr(args, "scenario", None)
    if spec in PRESETS:
        sc = ScenarioFile.from_scenario(generate_scenario(cfg.scenario_config(), cfg.seed))
    else:
        path = Path(spec) if spec else scenario_path_for(args.log)
        sc = formats.load_scenario(path)
    return events, sc


def _query_index(args, events: Sequence[DetectionEvent]) -> Optional[int]:
    if args.query_index is not None:
        if not 0 <= args.query_index < len(events):
            raise UsageError(f"--query-index {args.query_index} out of range for {len(events)} records")
        return args.query_index
    for i, ev in enumerate(events):
        if ev.plate == args.query:
            return i
    return None


def cmd_track(args) -> int:
    cfg = _config(args)
    tcfg = cfg.track_config()
    events, sc = _load_inputs(args, cfg)
    qi = _query_index(args, events)
    target = args.query if args.query is not None else (events[qi].plate if qi is not None else None)
    vobs = sc.velocity_obs.get(target, []) if target is not None else []
    if not vobs:
        log.warning("no velocity readings for the query; every gate will be all-pass")

    started = time.perf_counter()
    if qi is None:
        if events:
            raise UsageError(f"no record in {args.log} carries plate {args.query!r}")
        traj = _origin_only(args, sc, target, gate=not args.no_gate)
    else:
        q = Query.from_event(events, qi)
        if args.origin_camera is not None and args.origin_camera != q.camera:
            raise UsageError("--origin-camera disagrees with the query record's camera")
        traj = track(q, events, sc.graph, vobs, tcfg, gate=not args.no_gate)
    wall = time.perf_counter() - started

    metrics = evaluate_log(traj, events, target) if target is not None and qi is not None else None
    with formats.atomic_write(args.out) as fh:
        formats.write_trajectory(traj, sc.graph, fh, events, metrics)
    _print_track_summary(traj, metrics, wall)
    return EXIT_OK


def _origin_only(args, sc: ScenarioFile, target: Optional[str], gate: bool) -> Trajectory:
    cam, t = args.origin_camera, args.origin_time
    spec = next((v for v in sc.vehicles if v.id == target), None)
    if cam is None and spec is not None:
        cam = spec.route[0]
    if t is None:
        t = spec.depart if spec is not None else 0.0
    if cam is None:
        raise UsageError("empty log: give --origin-camera or a --query known to the scenario")
    if not sc.graph.has_camera(cam):
        raise TrackError(f"origin camera {cam!r} is not in the road graph")
    return Trajectory([Visit(cam, float(t), None, 1.0)], gated=gate)


def _print_track_summary(traj: Trajectory, metrics, wall: float) -> None:
    print("path: " + " -> ".join(traj.cameras))
    print(f"gated: {traj.gated}")
    print(f"comparisons: {traj.comparisons}")
    print(f"candidates: {traj.candidates}")
    print("survivors per hop: " + ",".join(str(len(s.survivors)) for s in traj.searches))
    if metrics is not None:
        print(f"exact order: {metrics.exact_order}")
        print(f"saved fraction: {metrics.saved_fraction:.4f}")
    print(f"wall time: {wall:.6f} s")


def cmd_retrieve(args) -> int:
    if args.k < 0:
        raise UsageError("-k must be >= 0")
    cfg = _config(args)
    events = formats.load_event_log(args.log, cfg.hist)
    qi = _query_index(args, events)
    if qi is None:
        raise UsageError(f"no record in {args.log} carries plate {args.query!r}")
    query = events[qi].feature
    others = [i for i in range(len(events)) if i != qi]
    feats = [events[i].feature for i in others]
    ranked = ranked_distances(query, feats, range(len(feats)), cfg.appearance.w_color,
                              cfg.appearance.metric)
    print(f"{'rank':>4} {'record':>7} {'camera':<8} {'t':>12} {'class':<6} {'distance':>10} plate")
    for rank, (d, j) in enumerate(ranked[:args.k], start=1):
        ev = events[others[j]]
        print(f"{rank:>4} {others[j]:>7} {ev.camera:<8} {ev.t:>12.3f} {ev.cls:<6} {d:>10.6f} "
              f"{ev.plate or '-'}")
    return EXIT_OK


# ---------------------------------------------------------------- bench

BENCH_HEADER = ("seed", "exact_order_gated", "exact_order_full", "comparisons_gated",
                "comparisons_full", "saved_fraction")


def bench_row(cfg: RunConfig, seed: int) -> tuple:
    """One report row; ``exact_order_*`` count vehicles whose camera order is exact."""
    sc = generate_scenario(cfg.scenario_config(), seed)
    tcfg: TrackConfig = cfg.track_config()
    index = EventIndex(sc.events)
    exact_g = exact_f = comp_g = comp_f = 0
    for v in cfg.scenario_config().vehicles:
        if not sc.passages(v.id):
            continue
        g = track_vehicle(sc, v.id, tcfg, gate=True, index=index)
        f = track_vehicle(sc, v.id, tcfg, gate=False, index=index)
        exact_g += evaluate(g, sc, v.id).exact_order
        exact_f += evaluate(f, sc, v.id).exact_order
        comp_g += g.comparisons
        comp_f += f.comparisons
    saved = 1.0 - comp_g / comp_f if comp_f else 0.0
    return seed, exact_g, exact_f, comp_g, comp_f, saved


def cmd_bench(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    cfg = _config(args)
    start = cfg.seed
    rows = [bench_row(cfg, start + i) for i in range(args.seeds)]
    if args.out:
        with formats.atomic_write(args.out) as fh:
            _write_bench(rows, fh)
    else:
        _write_bench(rows, sys.stdout)
    total_g = sum(r[3] for r in rows)
    total_f = sum(r[4] for r in rows)
    if total_f:
        print(f"aggregate saved_fraction: {1.0 - total_g / total_f:.4f}", file=sys.stderr)
    return EXIT_OK


def _write_bench(rows, sink) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow(r[:5] + (repr(r[5]),))


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusetrack",
                                description="Velocity-gated cross-camera vehicle tracking.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_help: str):
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--scenario", metavar="PRESET|PATH", help=scenario_help)

    s = sub.add_parser("simulate", help="generate a scenario and its event log")
    common(s, f"preset name ({', '.join(PRESETS)})")
    s.add_argument("--out", default="events.jsonl", metavar="PATH",
                   help="event log path; the scenario goes next to it as <stem>.scenario.json")
    s.set_defaults(func=cmd_simulate)

    def query_args(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--query", metavar="ID", help="query with the first record carrying this plate")
        g.add_argument("--query-index", type=int, metavar="N", help="use log record N as the query")

    t = sub.add_parser("track", help="follow one vehicle through the camera network")
    common(t, "scenario file, or a preset to regenerate (default: <log stem>.scenario.json)")
    t.add_argument("--log", required=True, metavar="PATH", help="event log to search")
    query_args(t)
    t.add_argument("--origin-camera", metavar="CAM", help="origin when the log is empty")
    t.add_argument("--origin-time", type=float, metavar="T", help="origin time when the log is empty")
    t.add_argument("--gate-threshold", type=float, metavar="TAU", help="relative gate cutoff")
    t.add_argument("--no-gate", action="store_true", help="full-scan baseline without gating")
    t.add_argument("--out", default="trajectory.geojson", metavar="PATH",
                   help="GeoJSON trajectory (default trajectory.geojson)")
    t.set_defaults(func=cmd_track)

    r = sub.add_parser("retrieve", help="rank log records by appearance similarity")
    r.add_argument("--config", metavar="PATH", help="JSON run configuration")
    r.add_argument("--log", required=True, metavar="PATH", help="event log to rank")
    query_args(r)
    r.add_argument("-k", type=int, default=20, help="rows to print (default 20)")
    r.set_defaults(func=cmd_retrieve)

    b = sub.add_parser("bench", help="gated vs full-scan comparison counts over seeds")
    common(b, f"preset name ({', '.join(PRESETS)})")
    b.add_argument("--seeds", type=int, default=10, metavar="N", help="number of seeds (default 10)")
    b.add_argument("--gate-threshold", type=float, metavar="TAU", help="relative gate cutoff")
    b.add_argument("--out", metavar="PATH", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def _setup_logging() -> None:
    level = os.environ.get("FUSETRACK_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fusetrack: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, FormatError) as exc:
        print(f"fusetrack: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (TrackError, ScenarioError, ValueError, OSError) as exc:
        print(f"fusetrack: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
