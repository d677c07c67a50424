import pytest
from hypothesis import given
from hypothesis import strategies as st

from chelonia import codec
from chelonia.errors import (
    AccessDenied,
    IsACollection,
    NameTaken,
    NoAliveReplica,
    NoEligibleShepherd,
    NotEmpty,
    NotFound,
    NotUnderReplicated,
    ParentMissing,
)
from chelonia.harness import Deployment, Topology
from chelonia.librarian import LibrarianConfig
from chelonia.metadata import ACTIONS, ALIVE, ANY, CREATING, READ, PolicyRule, allowed, split_location
from chelonia.shepherd import ShepherdConfig, checksum

PERIOD = 10.0


def setup(shepherds=5, periodic=True, seed=0, **kwargs):
    t = Topology(shepherds=shepherds, periodic=periodic,
                 shepherd_config=ShepherdConfig(heartbeat_period=PERIOD, check_period=PERIOD),
                 librarian_config=LibrarianConfig(heartbeat_period=PERIOD, grace=PERIOD / 2, check_period=PERIOD),
                 **kwargs)
    return Deployment(t, seed=seed).start(settle=1.0)


def test_namespace_commands():
    d = setup(periodic=False)
    c = d.client()
    guid = c.mkdir("/user")["guid"]
    assert c.list("/") == {"user": [guid, "collection"]}
    with pytest.raises(NameTaken):
        c.mkdir("/user")
    with pytest.raises(ParentMissing):
        c.mkdir("/nope/x")
    with pytest.raises(NotFound):
        c.stat("/missing")


def test_put_get_round_trip_and_no_parent():
    d = setup(periodic=False)
    c = d.client()
    c.mkdir("/user")
    c.mkdir("/user/me")
    c.put("/user/me/orange.jpg", b"juicy", needed=1)
    assert c.get("/user/me/orange.jpg") == b"juicy"
    st = c.stat("/user/me/orange.jpg")
    assert st["metadata"]["states"]["checksum"] == checksum(b"juicy")
    with pytest.raises(ParentMissing):
        c.put("/user/you/x", b"x")
    with pytest.raises(IsACollection):
        c.get("/user")


def test_needed_two_lands_on_distinct_shepherds():
    d = setup()
    c = d.client()
    info = c.put("/orange.jpg", b"o" * 100, needed=2)
    d.run_for(3 * PERIOD)
    locs = d.store()[info["guid"]]["locations"]
    assert sorted(locs.values()) == [ALIVE, ALIVE]
    assert len({split_location(k)[0] for k in locs}) == 2


def test_initial_placement_is_balanced():
    d = setup()
    c = d.client()
    for i in range(10):
        c.put(f"/f{i}", bytes(1000), needed=4)
    d.run_for(4 * PERIOD)
    loads = sorted(sum(1 for r in s.replicas.values() if r.state == ALIVE) for s in d.shepherds.values())
    assert sum(loads) == 40 and loads[-1] - loads[0] <= 2


def test_delete_move_and_unmake():
    d = setup(periodic=False)
    c = d.client()
    c.mkdir("/a")
    c.mkdir("/b")
    guid = c.put("/a/f", b"x")["guid"]
    with pytest.raises(NotEmpty):
        c.rmdir("/a")
    assert c.move("/a/f", "/b/f")["guid"] == guid
    assert c.stat("/b/f")["guid"] == guid
    with pytest.raises(NotFound):
        c.stat("/a/f")
    c.rmdir("/a")
    c.rm("/b/f")
    with pytest.raises(NotFound):
        c.stat("/b/f")
    assert not any(s.replicas for s in d.shepherds.values())


def test_move_collection_into_itself_refused():
    d = setup(periodic=False)
    c = d.client()
    c.mkdir("/a")
    c.mkdir("/a/b")
    with pytest.raises(Exception):
        c.move("/a", "/a/b/a")
    assert "b" in c.list("/a")


def test_mount_points():
    d = setup(periodic=False)
    c = d.client()
    c.mkdir("/my")
    c.mount("/my/dCache", "ext://dcache.example")
    assert c.get("/my/dCache/fruits/apple.jpg") == "ext://dcache.example/fruits/apple.jpg"
    with pytest.raises(NameTaken):
        c.mount("/my/dCache", "ext://other")
    c.rm("/my/dCache")
    with pytest.raises(NotFound):
        c.get("/my/dCache/fruits/apple.jpg")


def test_all_replicas_offline_means_no_alive_replica():
    d = setup(shepherds=2)
    c = d.client()
    c.put("/f", b"data", needed=2)
    d.run_for(2 * PERIOD)
    for h in d.shepherd_ids:
        d.kill(h)
    d.run_for(3 * PERIOD)
    with pytest.raises(NoAliveReplica):
        c.get("/f")


def test_policy_denies_other_users():
    d = setup(periodic=False)
    alice, bob = d.client("CN=alice"), d.client("CN=bob")
    alice.mkdir("/private")
    alice.put("/private/f", b"secret")
    with pytest.raises(AccessDenied):
        bob.get("/private/f")
    with pytest.raises(AccessDenied):
        bob.mkdir("/private/x")
    with pytest.raises(AccessDenied):
        bob.rm("/private/f")
    with pytest.raises(AccessDenied):
        bob.list("/private")
    shared = [PolicyRule("CN=alice", "allow").encode(), PolicyRule("CN=bob", "allow", {READ}).encode()]
    alice.mkdir("/shared", policy=shared)
    assert bob.list("/shared") == {}
    with pytest.raises(AccessDenied):
        bob.mkdir("/shared/x")


rules = st.lists(st.builds(PolicyRule, st.sampled_from(["CN=a", "CN=b", ANY]), st.sampled_from(["allow", "deny"]),
                           st.frozensets(st.sampled_from(sorted(ACTIONS)))), max_size=5)


@given(rules, st.sampled_from(["CN=a", "CN=b", "CN=c"]), st.sampled_from(sorted(ACTIONS)))
def test_policy_first_match_wins(policy, dn, action):
    matching = [r for r in policy if r.matches(dn, action)]
    assert allowed(policy, dn, action) == (bool(matching) and matching[0].decision == "allow")
    assert PolicyRule.decode(policy[0].encode()) == policy[0] if policy else True


def add_replica(d, guid, host="b1"):
    return d.network.request("CN=s1", d.endpoints[host], "add_replica", {"guid": guid})


def test_add_replica_targets_non_holder():
    d = setup(periodic=False)
    c = d.client()
    info = c.put("/f", b"data", needed=4)
    holders = {split_location(k)[0] for k in d.store()[info["guid"]]["locations"]}
    ticket = add_replica(d, info["guid"])
    assert ticket["shepherd"] not in holders


def test_add_replica_without_eligible_shepherd():
    d = setup(shepherds=1, periodic=False)
    info = d.client().put("/f", b"data", needed=4)
    with pytest.raises(NoEligibleShepherd):
        add_replica(d, info["guid"])


def test_add_replica_refuses_when_enough():
    d = setup(periodic=False)
    info = d.client().put("/f", b"data", needed=1)
    with pytest.raises(NotUnderReplicated):
        add_replica(d, info["guid"])


def test_concurrent_add_replica_only_one_materializes():
    d = setup(periodic=False, bartenders=2)
    info = d.client().put("/f", b"data", needed=2)
    b1 = d.bartenders["b1"]
    real = b1._lib
    raced = []

    def racing_lib(operation, **args):
        result = real(operation, **args)
        if operation == "get_metadata" and not raced:
            raced.append(add_replica(d, info["guid"], host="b2"))  # lands between b1's read and write
        return result

    b1._lib = racing_lib
    with pytest.raises(NotUnderReplicated):
        add_replica(d, info["guid"], host="b1")
    assert raced
    states = sorted(d.store()[info["guid"]]["locations"].values())
    assert states == [ALIVE, CREATING]


def test_bartender_never_carries_file_bytes():
    d = setup()
    marker = b"\xfe\xed" + bytes(range(200))
    seen = []

    def tap(env, reply):
        if env.target.service == "Bartender":
            seen.append(env.payload + reply)

    d.network.taps.append(tap)
    c = d.client()
    c.put("/f", marker, needed=3)
    d.run_for(3 * PERIOD)
    assert c.get("/f") == marker
    assert seen and not any(marker in blob for blob in seen)


def test_bartenders_are_interchangeable():
    d = setup(periodic=False, bartenders=2)
    c1, c2 = d.client(bartender="b1"), d.client(bartender="b2")
    c1.mkdir("/x")
    c2.put("/x/f", b"abc")
    assert c1.stat("/x/f") == c2.stat("/x/f")
    assert c1.list("/x") == c2.list("/x")


def test_list_payload_grows_linearly():
    d = setup(periodic=False)
    c = d.client()
    c.mkdir("/c")
    sizes = []
    for k in range(6):
        sizes.append(len(codec.encode(c.list("/c"))))
        c.mkdir(f"/c/e{k:03d}")
    steps = {b - a for a, b in zip(sizes, sizes[1:])}
    assert len(steps) == 1 and steps.pop() > 0
