"""Librarian: namespace resolution, metadata changes and shepherd monitoring.

The Librarian keeps no state of its own beyond where the A-Hash replicas
are; every answer comes from the A-Hash, so any number of Librarians can
serve the same namespace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .ahash.client import AHashClient
from .ahash.store import APPLIED, DELETE, HAS_KEY, NO_KEY, SET, UNSET, VALUE_DIFFERS, VALUE_EQUALS, change
from .errors import NameTaken, NotACollection, ParentMissing, ServiceError
from .hed.host import ServiceEndpoint, current_caller, rpc
from .hed.service import Service
from .metadata import (
    ANY,
    COLLECTION,
    DELETED,
    MOUNTPOINT,
    OFFLINE,
    ROOT_GUID,
    SHEPHERD_INDEX,
    PolicyRule,
    check_name,
    collection_metadata,
    location_key,
    split_ln,
)

log = logging.getLogger(__name__)


@dataclass
class LibrarianConfig:
    heartbeat_period: float = 60.0
    grace: float = 60.0
    check_period: float = 60.0


def shepherd_record_id(url: str) -> str:
    return f"shepherd:{url}"


@dataclass
class TraverseResult:
    """A resolved prefix of a Logical Name, root first."""

    chain: list[tuple[str, str, dict]]
    remainder: str

    @property
    def resolved_path(self) -> list[tuple[str, str, dict]]:
        return self.chain[1:]

    @property
    def terminal(self) -> tuple[str, str, dict]:
        return self.chain[-1]

    @property
    def complete(self) -> bool:
        return self.remainder == ""

    @classmethod
    def from_wire(cls, data: dict) -> "TraverseResult":
        return cls([tuple(item) for item in data["chain"]], data["remainder"])


def _summary(obj: dict) -> dict:
    # path elements travel without their child lists; only the terminal may need them
    return {section: values for section, values in obj.items() if section != "entries"}


class Librarian(Service):
    def __init__(self, ahash: list[ServiceEndpoint], config: LibrarianConfig | None = None):
        self.seeds = list(ahash)
        self.config = config or LibrarianConfig()
        self.ahash: AHashClient | None = None
        self.root_ready = False

    def attach(self, host, endpoint) -> None:
        super().attach(host, endpoint)
        self.ahash = AHashClient(self, self.seeds)

    def on_start(self) -> None:
        self.ahash = AHashClient(self, self.seeds)
        self.root_ready = False

    # -- bootstrap ----------------------------------------------------------
    def ensure_root(self) -> None:
        if self.root_ready:
            return
        root = self.ahash.get([ROOT_GUID])[ROOT_GUID]
        if not root:
            meta = collection_metadata(self.now(), [PolicyRule(ANY, "allow")])
            reqs = _object_requests("root", ROOT_GUID, meta.to_object(), sentinel=True)
            self.ahash.change(reqs, atomic=True)
        self.root_ready = True

    def tick(self) -> None:
        """Periodic housekeeping: root bootstrap, node-list refresh, heartbeat audit."""
        self.ensure_root()
        self.ahash.refresh()
        self.check_shepherds()

    # -- entries ------------------------------------------------------------
    @rpc
    def new_entry(self, metadata: dict, parent: str | None = None, name: str | None = None) -> dict:
        """Create an entry under a fresh GUID, optionally linking it into ``parent``.

        Creation and linking commit as one atomic batch: the entry object must
        not exist yet and the name must be free in a parent collection.
        """
        guid = self.new_guid()
        reqs = _object_requests("e", guid, metadata, sentinel=True)
        if parent is not None:
            check_name(name or "")
            reqs.append(change("link", parent, SET, "entries", name, guid, [
                (VALUE_EQUALS, "entry", "type", COLLECTION),
                (NO_KEY, "entries", name),
            ]).to_wire())
        results = self.ahash.change(reqs, atomic=True)
        if all(r == APPLIED for r in results.values()):
            return {"guid": guid}
        if parent is None:
            raise ServiceError(f"GUID collision on {guid}")
        existing = self.ahash.get([parent])[parent]
        entry_type = existing.get("entry", {}).get("type")
        if entry_type is None:
            raise ParentMissing(f"parent {parent} does not exist")
        if entry_type != COLLECTION:
            raise NotACollection(f"parent {parent} is a {entry_type}")
        raise NameTaken(f"{name!r} already exists", guid=existing.get("entries", {}).get(name, ""))

    @rpc
    def get_metadata(self, guids: list[str]) -> dict:
        objects = self.ahash.get(guids)
        return {g: (obj if obj.get("entry") else None) for g, obj in objects.items()}

    @rpc
    def modify_metadata(self, changes: list[dict], atomic: bool = False) -> dict:
        return self.ahash.change(changes, atomic=atomic)

    @rpc
    def traverse_ln(self, ln: str, full_terminal: bool = True) -> dict:
        """Resolve ``ln`` one name per A-Hash read, starting at the root."""
        names = split_ln(ln)
        guid = ROOT_GUID
        obj = self.ahash.get([guid])[guid]
        if not obj.get("entry"):
            raise ParentMissing("the namespace root does not exist yet")
        chain = [["", guid, obj]]
        i = 0
        while i < len(names):
            if obj["entry"]["type"] == MOUNTPOINT:
                break
            child = obj.get("entries", {}).get(names[i])
            if child is None:
                break
            obj = self.ahash.get([child])[child]
            if not obj.get("entry"):
                break
            chain.append([names[i], child, obj])
            i += 1
        for j, item in enumerate(chain):
            if j < len(chain) - 1 or not full_terminal:
                item[2] = _summary(item[2])
        return {"chain": chain, "remainder": "/".join(names[i:])}

    # -- shepherd monitoring -----------------------------------------------
    @rpc
    def report(self, shepherd: str, changes: list, full: bool = False) -> dict:
        """Heartbeat: record liveness and apply replica state changes.

        ``changes`` holds ``[referenceID, guid, state, size]`` items.  A full
        report lists every replica the shepherd holds; references it no
        longer mentions are dropped.  The reply tells the shepherd when the
        next heartbeat is due, whether it must resend everything (it had
        been marked offline) and which of its replicas belong to no entry.
        """
        rid = shepherd_record_id(shepherd)
        guids = sorted({c[1] for c in changes})
        objects = self.ahash.get([rid] + guids)
        record = objects[rid]
        info = record.get("info", {})
        now = self.now()
        deadline = now + self.config.heartbeat_period

        reqs = [
            change("hb-last", rid, SET, "info", "lastHeartbeat", f"{now:.6f}").to_wire(),
            change("hb-next", rid, SET, "info", "nextDeadline", f"{deadline:.6f}").to_wire(),
            change("hb-url", rid, SET, "info", "url", shepherd).to_wire(),
            change("hb-dn", rid, SET, "info", "dn", current_caller()).to_wire(),
        ]
        resync = info.get("offline") == "1"
        if not record:
            reqs.append(change("hb-index", SHEPHERD_INDEX, SET, "list", shepherd, current_caller()).to_wire())
        orphans = []
        reported = set()
        for n, (ref, guid, state, size) in enumerate(changes):
            reported.add(ref)
            key = location_key(shepherd, ref)
            if state == DELETED:
                reqs.append(change(f"rm-{n}", guid, UNSET, "locations", key).to_wire())
                reqs.append(change(f"rr-{n}", rid, UNSET, "replicas", ref).to_wire())
                continue
            if not objects[guid].get("entry"):
                orphans.append(ref)
                continue
            reqs.append(change(f"loc-{n}", guid, SET, "locations", key, state,
                               [(HAS_KEY, "entry", "type")]).to_wire())
            reqs.append(change(f"rep-{n}", rid, SET, "replicas", ref, f"{guid} {size}").to_wire())
        if full:
            for ref, value in record.get("replicas", {}).items():
                if ref in reported:
                    continue
                guid = value.split()[0]
                reqs.append(change(f"st-{ref}", guid, UNSET, "locations", location_key(shepherd, ref)).to_wire())
                reqs.append(change(f"sr-{ref}", rid, UNSET, "replicas", ref).to_wire())
            reqs.append(change("hb-online", rid, SET, "info", "offline", "0").to_wire())
            resync = False
        self.ahash.change(reqs)
        return {"next_report": self.config.heartbeat_period, "resync": resync, "orphans": orphans}

    @rpc
    def list_shepherds(self) -> list[dict]:
        index = self.ahash.get([SHEPHERD_INDEX])[SHEPHERD_INDEX].get("list", {})
        if not index:
            return []
        records = self.ahash.get([shepherd_record_id(url) for url in sorted(index)])
        now = self.now()
        out = []
        for url in sorted(index):
            rec = records[shepherd_record_id(url)]
            info = rec.get("info", {})
            deadline = float(info.get("nextDeadline", "0"))
            used = sum(int(v.split()[1]) for v in rec.get("replicas", {}).values())
            out.append({
                "url": url,
                "dn": info.get("dn") or index[url],
                "used": used,
                "replicas": len(rec.get("replicas", {})),
                "offline": info.get("offline") == "1",
                "alive": info.get("offline") != "1" and now <= deadline + self.config.grace,
            })
        return out

    @rpc
    def check_shepherds(self) -> list[str]:
        """Mark every replica of a late shepherd OFFLINE; returns the shepherds offlined."""
        index = self.ahash.get([SHEPHERD_INDEX])[SHEPHERD_INDEX].get("list", {})
        if not index:
            return []
        records = self.ahash.get([shepherd_record_id(url) for url in sorted(index)])
        now = self.now()
        offlined = []
        for url in sorted(index):
            rid = shepherd_record_id(url)
            rec = records[rid]
            info = rec.get("info", {})
            if info.get("offline") == "1":
                continue
            if now <= float(info.get("nextDeadline", "inf")) + self.config.grace:
                continue
            if self._offline(url, rec):
                offlined.append(url)
        return offlined

    def _offline(self, url: str, record: dict) -> bool:
        rid = shepherd_record_id(url)
        replicas = record.get("replicas", {})
        guids = sorted({v.split()[0] for v in replicas.values()})
        files = self.ahash.get(guids) if guids else {}
        # the flag flips only once, so with several Librarians the whole batch applies exactly once
        reqs = [change("off", rid, SET, "info", "offline", "1", [(VALUE_DIFFERS, "info", "offline", "1")]).to_wire()]
        for ref, value in sorted(replicas.items()):
            guid = value.split()[0]
            key = location_key(url, ref)
            current = files.get(guid, {}).get("locations", {}).get(key)
            if current is None or current == OFFLINE:
                continue
            reqs.append(change(f"o-{ref}", guid, SET, "locations", key, OFFLINE,
                               [(VALUE_EQUALS, "locations", key, current)]).to_wire())
        results = self.ahash.change(reqs, atomic=True)
        applied = all(r == APPLIED for r in results.values())
        if applied:
            log.info("shepherd %s is late; %d replicas marked offline", url, len(reqs) - 1)
        return applied


def _object_requests(prefix: str, oid: str, obj: dict, sentinel: bool = False) -> list[dict]:
    """One ``set`` per key; the first carries the must-not-exist guard."""
    reqs = []
    guard = [(NO_KEY, "entry", "type")] if sentinel else []
    for section in sorted(obj, key=lambda s: s != "entry"):
        for key, value in sorted(obj[section].items()):
            conds = guard if not reqs else []
            reqs.append(change(f"{prefix}-{len(reqs)}", oid, SET, section, key, value, conds).to_wire())
    return reqs


def delete_requests(prefix: str, oid: str) -> list[dict]:
    return [change(f"{prefix}-del", oid, DELETE).to_wire()]


def split_parent(ln: str) -> tuple[str, str]:
    names = split_ln(ln)
    if not names:
        raise NameTaken("the root always exists")
    return "/" + "/".join(names[:-1]), check_name(names[-1])
