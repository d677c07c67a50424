import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chelonia.ahash import APPLIED, CONDITION_FAILED, FAILED, ChangeRequest, FileStorage, MemoryStorage, ObjectStore, change
from chelonia.ahash.store import DELETE, HAS_KEY, NO_KEY, UNSET, VALUE_DIFFERS, VALUE_EQUALS, Condition


def test_missing_object_is_empty():
    assert ObjectStore().get("nope") == {}


def test_no_key_guard_is_idempotent():
    store = ObjectStore()
    req = change("c1", "g1", "set", "states", "size", "114000000", [(NO_KEY, "states", "size")])
    results, applied = store.evaluate([req])
    assert results == {"c1": APPLIED}
    store.apply(applied)
    results, applied = store.evaluate([req])
    assert results == {"c1": CONDITION_FAILED} and applied == []


@pytest.mark.parametrize("kind,value,expect", [
    (HAS_KEY, "", True), (NO_KEY, "", False),
    (VALUE_EQUALS, "ALIVE", True), (VALUE_EQUALS, "OFFLINE", False),
    (VALUE_DIFFERS, "OFFLINE", True), (VALUE_DIFFERS, "ALIVE", False),
])
def test_condition_kinds(kind, value, expect):
    assert Condition(kind, "locations", "r1", value).holds({"locations": {"r1": "ALIVE"}}) is expect


def test_atomic_batch_all_or_nothing():
    store = ObjectStore({"g": {"s": {"k": "v"}}})
    reqs = [change("a", "g", "set", "s", "x", "1"), change("b", "g", "set", "s", "k", "2", [(NO_KEY, "s", "k")])]
    results, applied = store.evaluate(reqs, atomic=True)
    assert results == {"a": FAILED, "b": CONDITION_FAILED} and applied == []
    results, applied = store.evaluate(reqs, atomic=False)
    assert results == {"a": APPLIED, "b": CONDITION_FAILED}


def test_later_requests_see_earlier_effects():
    store = ObjectStore()
    reqs = [change("a", "g", "set", "s", "k", "1"), change("b", "g", "set", "s", "j", "2", [(HAS_KEY, "s", "k")])]
    results, _ = store.evaluate(reqs)
    assert results == {"a": APPLIED, "b": APPLIED}


def test_unset_and_delete_drop_empty_objects():
    store = ObjectStore({"g": {"s": {"k": "v"}}, "h": {"s": {"a": "b"}}})
    store.apply([change("u", "g", UNSET, "s", "k"), change("d", "h", DELETE)])
    assert store.objects == {}


def test_set_needs_value():
    with pytest.raises(ValueError):
        ChangeRequest("c", "g", "set", "s", "k")


def test_wire_round_trip():
    req = change("c", "g", "set", "s", "k", "v", [(VALUE_EQUALS, "s", "k", "w")])
    assert ChangeRequest.from_wire(req.to_wire()) == req


ops = st.lists(st.tuples(
    st.sampled_from(["g1", "g2"]), st.sampled_from(["set", UNSET, DELETE]),
    st.sampled_from(["s", "t"]), st.sampled_from(["a", "b"]), st.sampled_from(["1", "2"]),
    st.sampled_from([None, NO_KEY, HAS_KEY, VALUE_EQUALS])), max_size=12)


@given(ops)
def test_evaluate_then_apply_matches_sequential(batch):
    reqs = []
    for i, (oid, kind, section, key, value, cond) in enumerate(batch):
        conds = [(cond, section, key, value)] if cond else []
        reqs.append(change(str(i), oid, kind, section, key, value if kind == "set" else None, conds))
    store = ObjectStore()
    _, applied = store.evaluate(reqs)
    store.apply(applied)
    # oracle: apply one by one, checking each condition against the live state
    oracle = {}
    for r in reqs:
        obj = oracle.setdefault(r.id, {})
        if all(c.holds(obj) for c in r.conditions):
            if r.change_type == DELETE:
                obj.clear()
            elif r.change_type == "set":
                obj.setdefault(r.section, {})[r.key] = r.value
            elif r.key in obj.get(r.section, {}):
                del obj[r.section][r.key]
                if not obj[r.section]:
                    del obj[r.section]
    assert store.objects == {k: v for k, v in oracle.items() if v}


@pytest.mark.parametrize("factory", [MemoryStorage, "file"])
def test_storage_snapshot_and_log(factory, tmp_path):
    storage = FileStorage(tmp_path) if factory == "file" else factory()
    for seq in (1, 2, 3):
        storage.append({"seq": seq, "epoch": 1, "batch": []})
    storage.write_snapshot({"seq": 2, "last_epoch": 1, "objects": {"g": {"s": {"k": "v"}}}})
    snap, entries = storage.load()
    assert snap["seq"] == 2 and [e["seq"] for e in entries] == [3]


def test_file_storage_ignores_torn_tail(tmp_path):
    storage = FileStorage(tmp_path)
    storage.append({"seq": 1, "epoch": 1, "batch": []})
    with storage.log_path.open("a") as fh:
        fh.write(json.dumps({"seq": 2})[:5])
    _, entries = storage.load()
    assert [e["seq"] for e in entries] == [1]
