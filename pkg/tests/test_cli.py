import csv
import io
import json

import pytest

import oracles
from fusetrack.cli import BENCH_HEADER, main, scenario_path_for
from fusetrack.formats import load_event_log
from fusetrack.simulator import fig6_config, generate_scenario


@pytest.fixture
def run(capsys):
    def _run(*argv):
        code = main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err
    return _run


@pytest.fixture
def sim(tmp_path, run):
    log = tmp_path / "events.jsonl"
    code, out, _ = run("simulate", "--seed", 3, "--out", log)
    assert code == 0
    return log


def test_simulate_writes_log_and_scenario(sim, run):
    assert sim.exists() and scenario_path_for(sim).exists()
    sc = generate_scenario(fig6_config(), 3)
    assert len(sim.read_text().splitlines()) == len(sc.events)


def test_simulate_prints_count(tmp_path, run):
    code, out, _ = run("simulate", "--seed", 3, "--out", tmp_path / "x.jsonl")
    expected = len(generate_scenario(fig6_config(), 3).events)
    assert out.strip() == f"{expected} records written to {tmp_path / 'x.jsonl'}"


def test_simulate_is_byte_deterministic(tmp_path, run):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run("simulate", "--seed", 8, "--out", a)
    run("simulate", "--seed", 8, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    assert scenario_path_for(a).read_bytes() == scenario_path_for(b).read_bytes()


def test_four_vehicle_preset_count(tmp_path, run):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "scenario": {"background": 0}}))
    out = tmp_path / "e.jsonl"
    assert run("simulate", "--config", cfg, "--out", out)[0] == 0
    sc = generate_scenario(fig6_config(background=0), 5)
    assert len(load_event_log(out)) == sum(len(sc.passages(v.id)) for v in sc.vehicles) == 13


@pytest.mark.parametrize("text", ['{"seed": 1, "bogus": 2}', '{\n "seed": 1,\n}', '{"gating": {"tau": 3}}'])
def test_malformed_config_exits_3_without_output(tmp_path, run, text):
    cfg = tmp_path / "bad.json"
    cfg.write_text(text)
    code, _, err = run("simulate", "--config", cfg, "--out", tmp_path / "e.jsonl")
    assert code == 3 and "parse error" in err
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.json"]


def test_syntax_error_reports_location(tmp_path, run):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n "seed": 1,\n}')
    assert "line 3, column 1" in run("simulate", "--config", cfg)[2]


def test_track_red_truck(sim, tmp_path, run):
    out = tmp_path / "t.geojson"
    code, stdout, _ = run("track", "--log", sim, "--query", "a", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    cams = [f["properties"]["camera"] for f in doc["features"] if f["geometry"]["type"] == "Point"]
    assert cams == ["D", "B", "A"]
    assert "path: D -> B -> A" in stdout
    assert "wall time:" in stdout and "survivors per hop:" in stdout
    assert doc["metrics"]["evaluation"]["exact_order"] is True


def test_no_gate_same_path_more_comparisons(sim, tmp_path, run):
    for vid in "abcd":
        g, f = tmp_path / "g.geojson", tmp_path / "f.geojson"
        run("track", "--log", sim, "--query", vid, "--out", g)
        run("track", "--log", sim, "--query", vid, "--no-gate", "--out", f)
        dg, df = json.loads(g.read_text()), json.loads(f.read_text())
        assert ([x["properties"]["event"] for x in dg["features"] if "hop" in x["properties"]]
                == [x["properties"]["event"] for x in df["features"] if "hop" in x["properties"]])
        if vid == "a":
            assert df["metrics"]["comparisons"] > dg["metrics"]["comparisons"]
        else:
            assert df["metrics"]["comparisons"] >= dg["metrics"]["comparisons"]


def test_track_empty_log(sim, tmp_path, run):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    scenario_path_for(empty).write_bytes(scenario_path_for(sim).read_bytes())
    out = tmp_path / "o.geojson"
    code, _, _ = run("track", "--log", empty, "--query", "a", "--out", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert [f["properties"]["camera"] for f in doc["features"]] == ["D"]


def test_track_unknown_camera(sim, tmp_path, run):
    lines = sim.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["camera"] = "Z"
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(rec) + "\n")
    scenario_path_for(bad).write_bytes(scenario_path_for(sim).read_bytes())
    code, _, err = run("track", "--log", bad, "--query-index", 0, "--out", tmp_path / "o.geojson")
    assert code == 4 and "'Z'" in err
    code, _, _ = run("track", "--log", tmp_path / "empty.jsonl", "--query", "a")
    assert code == 4  # missing file


def test_track_regenerates_preset(sim, tmp_path, run):
    out = tmp_path / "p.geojson"
    code, stdout, _ = run("track", "--log", sim, "--scenario", "fig6", "--seed", 3, "--query", "a",
                          "--out", out)
    assert code == 0 and "path: D -> B -> A" in stdout


def test_track_bad_log_exits_3(tmp_path, run):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"camera": "A"\n')
    code, _, err = run("track", "--log", bad, "--query", "a")
    assert code == 3 and "line 1" in err


def test_usage_errors_exit_2(sim, run):
    with pytest.raises(SystemExit) as info:
        main(["track", "--query", "a"])
    assert info.value.code == 2
    assert run("track", "--log", sim, "--query-index", 10**6)[0] == 2
    assert run("retrieve", "--log", sim, "--query", "a", "-k", -1)[0] == 2


def test_retrieve_k_zero(sim, run):
    code, out, _ = run("retrieve", "--log", sim, "--query", "a", "-k", 0)
    assert code == 0
    assert len(out.strip().splitlines()) == 1  # header only


def test_retrieve_matches_exhaustive_sort(sim, run):
    code, out, _ = run("retrieve", "--log", sim, "--query", "a")
    rows = out.strip().splitlines()[1:]
    events = load_event_log(sim)
    qi = next(i for i, e in enumerate(events) if e.plate == "a")
    others = [i for i in range(len(events)) if i != qi]
    ref = oracles.brute_top_k(events[qi].feature, [events[i].feature for i in others], 20)
    assert len(rows) == 20
    assert [int(r.split()[1]) for r in rows] == [others[j] for j in ref]
    assert all(r.split()[4] == "truck" for r in rows)


def test_bench_single_seed(run):
    code, out, _ = run("bench", "--seeds", 1)
    rows = list(csv.reader(io.StringIO(out)))
    assert tuple(rows[0]) == BENCH_HEADER and len(rows) == 2
    seed, eg, ef, cg, cf, saved = rows[1]
    assert seed == "0" and eg == ef == "4"
    assert float(saved) == 1.0 - int(cg) / int(cf)


def test_bench_rows_follow_identity(tmp_path, run):
    out = tmp_path / "b.csv"
    assert run("bench", "--seeds", 3, "--seed", 10, "--out", out)[0] == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["seed"] for r in rows] == ["10", "11", "12"]
    for r in rows:
        assert float(r["saved_fraction"]) == 1.0 - int(r["comparisons_gated"]) / int(r["comparisons_full"])
    assert run("bench", "--seeds", 0)[0] == 2


def test_log_level_from_environment(sim, tmp_path, run, monkeypatch):
    import logging
    monkeypatch.setenv("FUSETRACK_LOG", "debug")
    logging.getLogger().handlers.clear()
    code, _, err = run("track", "--log", sim, "--query", "a", "--out", tmp_path / "t.geojson")
    assert code == 0 and "hop from D" in err


def test_output_directories_are_created(tmp_path, run):
    log = tmp_path / "runs" / "x" / "events.jsonl"
    assert run("simulate", "--seed", 1, "--out", log)[0] == 0
    assert log.exists() and scenario_path_for(log).exists()
    assert [p.name for p in log.parent.iterdir() if p.name.startswith(".")] == []
