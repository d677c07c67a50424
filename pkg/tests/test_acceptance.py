"""End-to-end acceptance runs; each prints one ``criterion N: PASS|FAIL`` line."""

import time

import pytest

from chelonia.errors import NoAliveReplica, TicketRefused
from chelonia.harness import Deployment, Topology
from chelonia.harness.result import ScenarioResult
from chelonia.harness.runners import (
    run_ahash_bench,
    run_depth_test,
    run_election_fuzz,
    run_multi_client,
    run_replication,
    run_soak,
    run_width_test,
)
from chelonia.librarian import LibrarianConfig
from chelonia.metadata import ALIVE, INVALID
from chelonia.shepherd import ShepherdConfig, checksum, transfer

pytestmark = pytest.mark.slow


def report(log: list, n: int, res: ScenarioResult) -> None:
    status = "PASS" if res.passed else "FAIL"
    detail = "; ".join(res.failures()) if not res.passed else ", ".join(
        f"{k}={c.detail}" for k, c in list(res.checks.items())[:3])
    line = f"criterion {n}: {status} {detail}"
    log.append(line)
    print("\n" + line)
    assert res.passed, res.failures()


def test_criterion_1_replication(criteria):
    report(criteria, 1, run_replication())


def test_criterion_2_depth(criteria):
    report(criteria, 2, run_depth_test(100))


def test_criterion_3_width(criteria):
    report(criteria, 3, run_width_test(1000))


def test_criterion_4_multi_client(criteria):
    report(criteria, 4, run_multi_client())


def test_criterion_5_ahash_bench(criteria):
    report(criteria, 5, run_ahash_bench())


def test_criterion_6_election_fuzz(criteria):
    start = time.perf_counter()
    res = run_election_fuzz(1000)
    wall = time.perf_counter() - start
    res.check("under-60s", wall < 60.0, f"{wall:.1f}s")
    report(criteria, 6, res)


def _locations(d, guid):
    return sorted(d.store()[guid].get("locations", {}).values())


def roundtrip_result() -> ScenarioResult:
    res = ScenarioResult("roundtrip", 0)
    period = 10.0
    topo = Topology(shepherds=3,
                    shepherd_config=ShepherdConfig(heartbeat_period=period, check_period=period),
                    librarian_config=LibrarianConfig(heartbeat_period=period, grace=period / 2,
                                                     check_period=period))
    d = Deployment(topo, seed=3).start(settle=1.0)
    c = d.client()
    for size in (0, 1, 1 << 20):
        data = bytes((i * 31 + 7) % 256 for i in range(size))
        info = c.put(f"/f{size}", data, needed=1)
        res.check(f"size-{size}", info["state"] == ALIVE and c.get(f"/f{size}") == data, info["state"])

    ticket = c.call("put_file", ln="/once", size=2, checksum=checksum(b"ok"), needed_replicas=1)
    transfer.upload(d.network, ticket["url"], b"ok")
    try:
        transfer.upload(d.network, ticket["url"], b"ok")
        res.check("put-token-single-use", False, "second upload accepted")
    except TicketRefused:
        res.check("put-token-single-use", True)
    url = c.call("get_file", ln="/once")["url"]
    first = transfer.download(d.network, url)
    try:
        transfer.download(d.network, url)
        res.check("get-token-single-use", False, "second download accepted")
    except TicketRefused:
        res.check("get-token-single-use", first == b"ok")

    data = bytes(range(256)) * 64
    info = c.put("/flip", data, needed=2)
    d.run_for(2 * period)
    holder = next(h for h, s in d.shepherds.items()
                  if any(r.guid == info["guid"] and r.state == ALIVE for r in s.replicas.values()))
    ref = next(r.reference_id for r in d.shepherds[holder].replicas.values() if r.guid == info["guid"])
    d.shepherds[holder].backend.corrupt(ref)
    seen_invalid, bad_served = False, 0
    for _ in range(10 * int(period)):
        d.run_for(1)
        seen_invalid |= INVALID in _locations(d, info["guid"])
        try:
            bad_served += c.get("/flip") != data
        except NoAliveReplica:
            pass
    res.check("bit-flip-invalid", seen_invalid)
    res.check("bit-flip-replaced", _locations(d, info["guid"]) == [ALIVE, ALIVE], str(_locations(d, info["guid"])))
    res.check("bad-bytes-never-served", bad_served == 0, f"{bad_served} corrupt downloads")
    return res


def test_criterion_7_roundtrip_and_turl(criteria):
    report(criteria, 7, roundtrip_result())


def test_criterion_8_soak(criteria):
    report(criteria, 8, run_soak())
