import itertools

import pytest

from chelonia.ahash import APPLIED, CANDIDATE, CLIENT, CONDITION_FAILED, MASTER, NODE_LIST, AHashConfig, AHashNode, FileStorage, change
from chelonia.ahash.client import AHashClient
from chelonia.errors import AHashUnavailable, GapDetected, NoMajority, NoMaster, NotFromMaster, NotMaster
from chelonia.harness import Deployment, Topology
from chelonia.hed import Service
from chelonia.metadata import ROOT_GUID

TEST_DN = "CN=test"


def cluster(n=3, seed=0, **kwargs) -> Deployment:
    t = Topology(ahash=n, shepherds=0, extra_ahash_clients=(TEST_DN,), **kwargs)
    return Deployment(t, seed=seed).start(settle=2.0)


def call(d, host, op, **args):
    return d.network.request(TEST_DN, d.endpoints[host], op, args)


def write(d, host, cid, oid, key, value="v", conds=()):
    return call(d, host, "change", requests=[change(cid, oid, "set", "s", key, value, conds).to_wire()])


def test_single_master_after_start():
    d = cluster()
    roles = sorted(n.role for n in d.ahash.values())
    assert roles == [CLIENT, CLIENT, MASTER]


def test_get_root_and_unknown():
    d = cluster()
    got = call(d, "a2", "get", ids=[ROOT_GUID, "missing"])
    assert got["missing"] == {}
    assert got[ROOT_GUID]["entry"]["type"] == "collection"


def test_change_on_master_then_replay_fails_condition():
    d = cluster()
    m = d.master().node_id
    guard = [("no-key", "s", "size")]
    assert write(d, m, "c1", "g1", "size", "114000000", guard)["results"] == {"c1": APPLIED}
    assert write(d, m, "c1", "g1", "size", "114000000", guard)["results"] == {"c1": CONDITION_FAILED}


def test_change_on_client_names_master():
    d = cluster()
    m = d.master()
    other = next(h for h in d.ahash_ids if h != m.node_id)
    with pytest.raises(NotMaster) as exc:
        write(d, other, "c", "g", "k")
    assert exc.value.details["master"] == m.endpoint.url


def test_ack_means_every_live_replica_has_it():
    d = cluster()
    m = d.master().node_id
    seq = write(d, m, "c", "g", "k")["seq"]
    assert all(n.seq == seq for n in d.ahash.values())
    assert len({n.store.canonical() for n in d.ahash.values()}) == 1


def test_replicate_from_non_master_refused():
    d = cluster()
    m = d.master()
    other = next(h for h in d.ahash_ids if h != m.node_id)
    # trusted caller, but not the master's DN
    with pytest.raises(NotFromMaster):
        call(d, other, "replicate", entries=[], epoch=m.epoch, master_id=m.node_id)


def test_replicate_gap_detected():
    d = cluster()
    m = d.master()
    other = next(h for h in d.ahash_ids if h != m.node_id)
    node = d.ahash[other]
    entry = {"seq": node.seq + 3, "epoch": m.epoch, "batch": []}
    with pytest.raises(GapDetected) as exc:
        d.network.request(m.endpoint.dn, d.endpoints[other], "replicate",
                          {"entries": [entry], "epoch": m.epoch, "master_id": m.node_id})
    assert exc.value.details["seq"] == node.seq


def test_restarted_replica_catches_up():
    d = cluster()
    m = d.master().node_id
    lagging = next(h for h in d.ahash_ids if h != m)
    d.kill(lagging)
    for i in range(3):
        write(d, m, f"c{i}", "g", f"k{i}")
    assert d.ahash[lagging].seq < d.ahash[m].seq
    d.restart(lagging)
    d.run_for(3)
    assert d.ahash[lagging].seq == d.ahash[m].seq
    assert d.ahash[lagging].store.canonical() == d.ahash[m].store.canonical()


def test_highest_seq_wins_after_master_loss():
    d = cluster()
    master = d.master().node_id
    laggard = next(h for h in reversed(d.ahash_ids) if h != master)
    d.kill(laggard)
    write(d, master, "c", "g", "k")
    survivor = next(h for h in d.ahash_ids if h not in (master, laggard))
    d.kill(master)
    d.restart(laggard)
    d.run_for(15)
    assert d.master().node_id == survivor


def test_winner_rule_exhaustive_over_seq_assignments():
    for seqs in itertools.product(range(3), repeat=3):
        d = Deployment(Topology(ahash=3, shepherds=0, periodic=False), seed=1)
        for h, seq in zip(d.ahash_ids, seqs):
            node = d.ahash[h]
            node.seq = node.log_floor = seq
        winner = d.ahash["a1"].start_election()
        expect = max(zip(seqs, d.ahash_ids))[1]
        assert winner == expect, seqs
        assert [h for h, n in d.ahash.items() if n.role == MASTER] == [expect]


def test_no_majority_blocks_writes_but_reads_work():
    d = cluster()
    m = d.master().node_id
    write(d, m, "c", "g", "k")
    down = [h for h in d.ahash_ids if h != "a3"]
    for h in down:
        d.kill(h)
    d.run_for(20)
    node = d.ahash["a3"]
    assert node.role == CANDIDATE
    with pytest.raises(NoMajority):
        node.start_election()
    with pytest.raises(NoMaster):
        write(d, "a3", "c2", "g", "k2")
    assert call(d, "a3", "get", ids=["g"])["g"] == {"s": {"k": "v"}}


def test_node_list_sizes():
    assert len(call(cluster(3), "a1", "get_node_list")) == 3
    assert len(call(cluster(1), "a1", "get_node_list")) == 1


def test_membership_change_reaches_every_replica():
    d = cluster()
    m = d.master().node_id
    reqs = [change("n", NODE_LIST, "set", "nodes", "a4", "sim://a4/AHash").to_wire(),
            change("d", NODE_LIST, "set", "dns", "a4", "CN=a4").to_wire()]
    call(d, m, "change", requests=reqs)
    for h in d.ahash_ids:
        assert [x["node_id"] for x in call(d, h, "get_node_list")] == ["a1", "a2", "a3", "a4"]


def test_file_storage_restart_recovers_seq(tmp_path):
    d = Deployment(Topology(ahash=1, shepherds=0, data_dir=str(tmp_path), extra_ahash_clients=(TEST_DN,)),
                   seed=0).start(settle=1)
    for i in range(5):
        write(d, "a1", f"c{i}", "g", f"k{i}")
    before = (d.ahash["a1"].seq, d.ahash["a1"].store.canonical())
    fresh = AHashNode("a1", storage=FileStorage(tmp_path / "a1"))
    assert (fresh.seq, fresh.store.canonical()) == before


def test_snapshot_compaction_keeps_state():
    cfg = AHashConfig(snapshot_every=3)
    d = cluster(ahash_config=cfg)
    m = d.master().node_id
    for i in range(10):
        write(d, m, f"c{i}", "g", f"k{i}")
    node = d.ahash[m]
    assert len(node.log) < 10
    d.kill(m)
    d.restart(m)
    assert len(d.ahash[m].store.peek("g")["s"]) == 10


class _Caller(Service):
    pass


def test_client_refreshes_node_list_when_reader_dies():
    d = cluster()
    host = d.network.add_host("t")
    caller = _Caller()
    host.register_service("Test", caller, TEST_DN)
    client = AHashClient(caller, [d.endpoints["a1"]])
    assert client.refresh()
    assert len(client.nodes) == 3
    reader = client.reader
    d.kill(reader.host)
    d.run_for(15)
    assert client.get([ROOT_GUID])[ROOT_GUID]
    assert client.reader != reader
    client.change([change("c", "g", "set", "s", "k", "v").to_wire()])
    for h in d.ahash_ids:
        if d.is_up(h):
            d.kill(h)
    with pytest.raises(AHashUnavailable):
        client.get(["g"])
