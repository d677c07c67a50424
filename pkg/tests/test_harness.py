import json

import pytest

from chelonia.harness import Driver, Event, Topology, builtin_names, load_scenario, run_scenario
from chelonia.harness.cli import main as harness_main
from chelonia.harness.result import ScenarioResult, exact_line
from chelonia.harness.scenario import build_topology, parse_events
from chelonia.hed import LAN

BUNDLED = {"ahash-bench", "depth", "election-fuzz", "multiclient", "replication", "soak", "width"}


def test_bundled_scenarios_load():
    assert set(builtin_names()) == BUNDLED
    for name in BUNDLED:
        sc = load_scenario(name)
        assert sc.kind == name
        sc.build_topology()


def test_parse_events_sorted_and_validated():
    events = parse_events("""
        480 restart last   # comment
        300 kill holder:8
    """)
    assert events == [Event(300.0, "kill", ("holder:8",)), Event(480.0, "restart", ("last",))]
    with pytest.raises(ValueError):
        parse_events("10 explode s1")


def test_build_topology_keys():
    t = build_topology({"ahash": "3", "shepherds": "4", "profile": "lan", "heartbeat_period": "10",
                        "check_period": "15", "bartender_threads": "30", "processing_b": "0.002"})
    assert isinstance(t, Topology)
    assert (t.ahash, t.shepherds, t.latency, t.bandwidth) == (3, 4, LAN["latency"], LAN["bandwidth"])
    assert t.librarian_config.heartbeat_period == t.shepherd_config.heartbeat_period == 10
    assert t.shepherd_config.check_period == 15
    assert t.bartender_pool.max_concurrent == 30 and t.processing_time == {"b": 0.002}


def test_missing_scenario():
    with pytest.raises(FileNotFoundError):
        load_scenario("no-such-scenario")


def test_exact_line():
    assert exact_line([1, 2, 3], [8, 10, 12]) == (6, 2, 0)
    assert exact_line([1, 2, 3], [8, 10, 13])[2] == 1
    assert exact_line([1], [1]) is None


def test_result_write(tmp_path):
    r = ScenarioResult("demo", 1, tables={"t": [{"a": 1}, {"a": 2, "b": 3}]})
    r.check("ok", True)
    r.check("bad", False, "why")
    assert not r.passed and r.failures() == ["bad: why"]
    paths = r.write(tmp_path)
    assert (tmp_path / "demo-t.csv").read_text().splitlines() == ["a,b", "1,", "2,3"]
    assert json.loads((tmp_path / "demo-summary.json").read_text())["checks"]["bad"]["detail"] == "why"
    assert len(paths) == 2


def test_driver_resolves_symbolic_targets(deploy):
    d = deploy(ahash=3, shepherds=2)
    drv = Driver(d)
    drv.fire(Event(0, "op", ("put", "/f", "64", "2")))
    d.run_for(2)
    assert drv.resolve("master") == d.master().node_id
    assert drv.resolve("ahash-client") != d.master().node_id
    drv.fire(Event(0, "kill", ("master",)))
    assert drv.resolve("last") == drv.killed[-1]
    drv.fire(Event(0, "restart", ("last",)))
    drv.fire(Event(0, "kill", ("holder:99",)))
    assert drv.events[-1]["detail"].startswith("skipped")
    drv.fire(Event(0, "op", ("get", "/missing")))
    assert drv.events[-1]["detail"] == "failed: not-found"
    assert drv.sample().total >= 1


def test_same_seed_same_csv(tmp_path):
    sc = load_scenario("replication")
    a = run_scenario(sc, 3).write(tmp_path / "a")
    b = run_scenario(sc, 3).write(tmp_path / "b")
    for pa, pb in zip(sorted(a), sorted(b)):
        if pa.suffix == ".csv":
            assert pa.read_bytes() == pb.read_bytes(), pa.name
        else:
            # wall-clock timing is the only non-virtual quantity reported
            ja, jb = json.loads(pa.read_text()), json.loads(pb.read_text())
            for j in (ja, jb):
                j["checks"].pop("wall-clock")
                j["summary"].pop("wall_seconds")
            assert ja == jb


def test_harness_cli(tmp_path, capsys):
    ini = tmp_path / "tiny.ini"
    ini.write_text("[scenario]\nname = tiny\nkind = depth\n\n[params]\nlevels = 5\nprofiles = lan:1 wan:3\n")
    assert harness_main(["run", str(ini), "--out", str(tmp_path / "out"), "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "tiny: PASS" in out
    assert (tmp_path / "out" / "tiny-summary.json").exists()
    assert harness_main(["run", "nope"]) == 2
    assert harness_main(["list"]) == 0
    assert "replication" in capsys.readouterr().out
