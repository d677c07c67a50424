"""Independent integrity check over raw A-Hash contents.

Rebuilds the namespace tree by walking ``entries`` sections from the root
and tallies replicas straight from ``locations``, without going through
any service code path.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

from ..metadata import ALIVE, FILE, REPLICA_STATES, ROOT_GUID, split_location


@dataclass
class StateSample:
    time: float
    states: dict[str, int]
    per_shepherd: dict[str, int]  # ALIVE replicas per shepherd url
    messages: int = 0
    bytes_sent: int = 0

    @property
    def total(self) -> int:
        return sum(self.states.values())

    def row(self, shepherds: list[str]) -> dict:
        row = {"time": round(self.time, 6)}
        row.update({s: self.states.get(s, 0) for s in REPLICA_STATES})
        row.update({url.split("/")[2]: self.per_shepherd.get(url, 0) for url in shepherds})
        row["messages"] = self.messages
        row["bytes"] = self.bytes_sent
        return row


def tally(objects: dict) -> tuple[Counter, Counter]:
    states, alive_per = Counter(), Counter()
    for obj in objects.values():
        if obj.get("entry", {}).get("type") != FILE:
            continue
        for key, state in obj.get("locations", {}).items():
            states[state] += 1
            if state == ALIVE:
                alive_per[split_location(key)[0]] += 1
    return states, alive_per


def take_sample(time: float, objects: dict, stats=None) -> StateSample:
    states, per = tally(objects)
    return StateSample(time, dict(states), dict(per),
                       stats.message_count if stats else 0, stats.bytes_sent if stats else 0)


@dataclass
class FsckReport:
    entries: int = 0
    files: int = 0
    collections: int = 0
    orphans: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    replica_states: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors and not self.orphans

    def to_dict(self) -> dict:
        return {"ok": self.ok, "entries": self.entries, "files": self.files, "collections": self.collections,
                "orphans": self.orphans, "errors": self.errors, "replica_states": self.replica_states}


def fsck(objects: dict, shepherd_tables: dict[str, list] | None = None, settled: bool = True,
         in_flight: set[str] = frozenset()) -> FsckReport:
    """Check tree integrity and replica bookkeeping.

    ``shepherd_tables`` maps shepherd url -> its local replica records
    (objects with reference_id/guid/state/checksum); when given, every
    ALIVE location must be backed by an ALIVE local replica and every local
    replica must belong to a live entry.  With ``settled`` each file must
    hold exactly its needed number of ALIVE replicas and nothing else.
    ``in_flight`` GUIDs may be unreachable (operations still running).
    """
    report = FsckReport()
    entries = {oid: obj for oid, obj in objects.items() if obj.get("entry", {}).get("type")}
    report.entries = len(entries)
    if ROOT_GUID not in entries:
        report.errors.append("root entry missing")
        return report
    seen = {ROOT_GUID}
    queue = deque([ROOT_GUID])
    while queue:
        guid = queue.popleft()
        for name, child in sorted(entries[guid].get("entries", {}).items()):
            if "/" in name or not name:
                report.errors.append(f"bad name {name!r} in {guid}")
            if child not in entries:
                report.errors.append(f"{guid}/{name} points to missing entry {child}")
                continue
            if child in seen:
                report.errors.append(f"{child} is linked more than once")
                continue
            seen.add(child)
            queue.append(child)
    report.orphans = sorted(set(entries) - seen - set(in_flight))

    states = Counter()
    for guid, obj in sorted(entries.items()):
        etype = obj["entry"]["type"]
        if etype == FILE:
            report.files += 1
        elif etype == "collection":
            report.collections += 1
        if etype != FILE:
            if obj.get("locations"):
                report.errors.append(f"{guid} is a {etype} with replica locations")
            continue
        locations = obj.get("locations", {})
        alive_hosts = [split_location(k)[0] for k, s in locations.items() if s == ALIVE]
        for s in locations.values():
            states[s] += 1
        if len(alive_hosts) != len(set(alive_hosts)):
            report.errors.append(f"{guid} has two ALIVE replicas on one shepherd")
        if settled and guid not in in_flight:
            needed = int(obj.get("states", {}).get("neededReplicas", "1"))
            if len(alive_hosts) != needed:
                report.errors.append(f"{guid} has {len(alive_hosts)} ALIVE replicas, needs {needed}")
            others = [s for s in locations.values() if s != ALIVE]
            if others:
                report.errors.append(f"{guid} has unsettled replicas {sorted(others)}")
    report.replica_states = dict(sorted(states.items()))

    if shepherd_tables is not None:
        for url, records in sorted(shepherd_tables.items()):
            local = {r.reference_id: r for r in records}
            for rec in records:
                entry = entries.get(rec.guid)
                if entry is None:
                    if rec.guid not in in_flight:
                        report.errors.append(f"orphan replica {rec.reference_id} on {url} ({rec.guid} gone)")
                    continue
                if rec.state == ALIVE and rec.checksum != entry.get("states", {}).get("checksum"):
                    report.errors.append(f"replica {rec.reference_id} on {url} has a foreign checksum")
            for guid, obj in entries.items():
                for key, state in obj.get("locations", {}).items():
                    owner, ref = split_location(key)
                    if owner != url or state != ALIVE:
                        continue
                    rec = local.get(ref)
                    if rec is None or rec.state != ALIVE:
                        report.errors.append(f"{guid}: ALIVE location {ref} on {url} is not held there")
    return report
