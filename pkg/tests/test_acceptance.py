"""End-to-end acceptance checks; each prints a PASS/FAIL line in the summary."""
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import invariants
import oracles
from synth import candidate_pool
from test_kalman import random_run
from fusetrack.appearance import top_k
from fusetrack.cli import main
from fusetrack.kalman import (ObservationModel, TransitionModel, VelocityObservation, initial_state,
                              predict_to, run_filter, update)
from fusetrack.simulator import FIG5_VARIANCES, FIG6_VEHICLES, fig5_trace, fig6_config, generate_scenario
from fusetrack.tracker import EventIndex, evaluate, track_vehicle

# saved fraction measured on the first full 50-seed run (0.9266), frozen as a floor
PINNED_SAVED_FRACTION = 0.92


@pytest.mark.criterion("Kalman oracle equivalence (1000 runs, 1e-9 relative, < 5 s)")
def test_kalman_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    runs = [random_run(rng) for _ in range(1000)]
    start = time.perf_counter()
    outs = [run_filter(initial_state(t0, x[0], x[1], p0), [VelocityObservation(t, z) for t, z in obs],
                       TransitionModel.constant_velocity(1.0, q), ObservationModel(R))
            for t0, x, p0, obs, q, R in runs]
    elapsed = time.perf_counter() - start
    worst = 0.0
    for (t0, x, p0, obs, q, R), out in zip(runs, outs):
        ref = oracles.run_cv_filter(t0, x, ((p0[0], 0.0), (0.0, p0[1])), obs, q, R)
        assert len(out) == len(ref) + 1
        for est, (ox, oP) in zip(out[1:], ref):
            worst = max(worst, oracles.rel_err(est.x, ox), oracles.rel_err(est.P, oP))
    report.append(f"worst relative error {worst:.2e}, filter time {elapsed:.2f} s")
    assert worst <= 1e-9
    assert elapsed < 5.0


@pytest.mark.criterion("Sparse-reading adaptation after a speed step (4 variances x 25 seeds)")
def test_adapts_to_step_change(report):
    model, om = TransitionModel.constant_velocity(1.0), ObservationModel()
    ok = total = 0
    for panel in range(len(FIG5_VARIANCES)):
        for seed in range(25):
            _, _, obs = fig5_trace(panel, seed)
            assert [o.t for o in obs] == [0.0, 2000.0, 4000.0]
            est = update(initial_state(0.0, 0.0, obs[0].z), obs[0], om)
            prior = predict_to(est, obs[1].t, model)  # first reading after the step at t=1000
            post = update(prior, obs[1], om)
            lo, hi = sorted((prior.velocity, obs[1].z))
            closer = abs(post.velocity - obs[1].z) < abs(prior.velocity - obs[1].z)
            ok += closer and lo < post.velocity < hi
            total += 1
    report.append(f"{ok}/{total} cases")
    assert ok == total


def exact_runs(noise_scale, seeds=50):
    exact = 0
    for seed in range(seeds):
        sc = generate_scenario(fig6_config(noise_scale=noise_scale), seed)
        index = EventIndex(sc.events)
        exact += all(evaluate(track_vehicle(sc, v.id, index=index), sc, v.id).exact_order
                     for v in FIG6_VEHICLES)
    return exact


@pytest.mark.criterion("Camera-network tracking: exact order 50/50 default, >=45/50 doubled noise, < 10 s")
def test_fig6_exact_order(report):
    start = time.perf_counter()
    default = exact_runs(1.0)
    doubled = exact_runs(2.0)
    elapsed = time.perf_counter() - start
    report.append(f"default {default}/50, doubled noise {doubled}/50, {elapsed:.2f} s")
    assert default == 50
    assert doubled >= 45
    assert elapsed < 10.0


@pytest.mark.criterion("Gating efficiency (ratio <= 0.5) and fidelity (>= 95% hop agreement)")
def test_gating_efficiency_and_fidelity(report):
    gated = full = eligible = agree = 0
    for seed in range(50):
        sc = generate_scenario(fig6_config(), seed)
        index = EventIndex(sc.events)
        for v in FIG6_VEHICLES:
            g = track_vehicle(sc, v.id, gate=True, index=index)
            f = track_vehicle(sc, v.id, gate=False, index=index)
            gated += g.comparisons
            full += f.comparisons
            for h, hop in enumerate(g.searches):
                truth = oracles.next_true_passage(sc.events, v.id, hop.t)
                if truth is None or truth not in hop.survivors or h >= len(f.searches):
                    continue
                eligible += 1
                fh = f.searches[h]
                agree += ((hop.best if hop.accepted else None) == (fh.best if fh.accepted else None))
    ratio = gated / full
    fidelity = agree / eligible
    report.append(f"comparisons {gated}/{full} = {ratio:.4f}, saved {1 - ratio:.4f}, "
                  f"agreement {agree}/{eligible}")
    assert ratio <= 0.5
    assert 1 - ratio >= PINNED_SAVED_FRACTION
    assert fidelity >= 0.95


@pytest.mark.criterion("Top-20 retrieval over 200 candidates equals exhaustive sort, class-pure")
def test_retrieval_top20(report):
    checked = 0
    for seed in range(10):
        query, pool = candidate_pool(200, seed)
        got = top_k(query, pool, 20)
        assert got == oracles.brute_top_k(query, pool, 20)
        assert len(got) == 20
        assert all(pool[i].cls == query.cls for i in got)
        checked += 1
    report.append(f"{checked} pools of 200 matched")


@pytest.mark.criterion("Numerical invariant suite (>= 10^4 generated cases)")
def test_invariant_suite(report):
    before = sum(invariants.CASES.values())
    big = settings(max_examples=2100, deadline=None, derandomize=True, database=None,
                   suppress_health_check=[HealthCheck.too_slow])
    for check in invariants.PRIMARY_CHECKS:
        invariants.as_test(check, big)()
    ran = sum(invariants.CASES.values()) - before
    report.append(f"{ran} cases across {len(invariants.PRIMARY_CHECKS)} properties")
    assert ran >= 10_000


def simulate_and_track(workdir):
    log = workdir / "events.jsonl"
    assert main(["simulate", "--seed", "17", "--out", str(log)]) == 0
    outs = []
    for vid in "abcd":
        out = workdir / f"{vid}.geojson"
        assert main(["track", "--log", str(log), "--query", vid, "--out", str(out)]) == 0
        outs.append(out)
    return [log, workdir / "events.scenario.json", *outs]


@pytest.mark.criterion("Determinism: simulate + track twice gives byte-identical files")
def test_determinism(report, tmp_path, capsys):
    (tmp_path / "one").mkdir()
    (tmp_path / "two").mkdir()
    first = simulate_and_track(tmp_path / "one")
    second = simulate_and_track(tmp_path / "two")
    capsys.readouterr()
    same = sum(a.read_bytes() == b.read_bytes() for a, b in zip(first, second))
    report.append(f"{same}/{len(first)} files identical")
    assert same == len(first)
