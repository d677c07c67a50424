"""Sectioned key-value object store, conditional changes and the durable log."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

SET, UNSET, DELETE = "set", "unset", "delete-object"
HAS_KEY, NO_KEY, VALUE_EQUALS, VALUE_DIFFERS = "has-key", "no-key", "value-equals", "value-differs"
APPLIED, CONDITION_FAILED, FAILED = "applied", "condition-failed", "failed"

CHANGE_TYPES = {SET, UNSET, DELETE}
CONDITION_KINDS = {HAS_KEY, NO_KEY, VALUE_EQUALS, VALUE_DIFFERS}

Obj = dict[str, dict[str, str]]


@dataclass
class Condition:
    kind: str
    section: str
    key: str
    value: str = ""

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")

    def holds(self, obj: Obj) -> bool:
        current = obj.get(self.section, {}).get(self.key)
        if self.kind == HAS_KEY:
            return current is not None
        if self.kind == NO_KEY:
            return current is None
        if self.kind == VALUE_EQUALS:
            return current == self.value
        return current != self.value


@dataclass
class ChangeRequest:
    change_id: str
    id: str
    change_type: str = SET
    section: str = ""
    key: str = ""
    value: str | None = None
    conditions: list[Condition] = field(default_factory=list)

    def __post_init__(self):
        if self.change_type not in CHANGE_TYPES:
            raise ValueError(f"unknown change type {self.change_type!r}")
        if self.change_type == SET and self.value is None:
            raise ValueError("set requires a value")
        self.conditions = [c if isinstance(c, Condition) else Condition(**c) for c in self.conditions]

    def to_wire(self) -> dict:
        d = {"change_id": self.change_id, "id": self.id, "change_type": self.change_type,
             "section": self.section, "key": self.key,
             "conditions": [{"kind": c.kind, "section": c.section, "key": c.key, "value": c.value}
                            for c in self.conditions]}
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_wire(cls, d: dict) -> "ChangeRequest":
        return cls(**d)


def change(change_id, id, change_type=SET, section="", key="", value=None, conditions=()) -> ChangeRequest:
    """Shorthand constructor; conditions may be ``(kind, section, key[, value])`` tuples."""
    conds = [c if isinstance(c, Condition) else Condition(*c) for c in conditions]
    return ChangeRequest(change_id, id, change_type, section, key, value, conds)


class ObjectStore:
    """The replicated state: object id -> section -> key -> value."""

    def __init__(self, objects: dict[str, Obj] | None = None):
        self.objects: dict[str, Obj] = objects or {}

    def get(self, oid: str) -> Obj:
        # sections map keys to strings, so a two-level copy is a full copy
        return {section: dict(items) for section, items in self.objects.get(oid, {}).items()}

    def peek(self, oid: str) -> Obj:
        return self.objects.get(oid, {})

    def evaluate(self, requests: list[ChangeRequest], atomic: bool = False) -> tuple[dict[str, str], list[ChangeRequest]]:
        """Decide which requests apply, without mutating anything.

        Requests are judged in order; each sees the effects of the earlier
        applicable requests of the same batch.  With ``atomic`` a single
        failed condition rejects the whole batch.
        """
        shadow: dict[str, Obj] = {}
        results: dict[str, str] = {}
        applied: list[ChangeRequest] = []
        for req in requests:
            if req.id not in shadow:
                shadow[req.id] = self.get(req.id)
            obj = shadow[req.id]
            if all(c.holds(obj) for c in req.conditions):
                _apply(obj, req)
                results[req.change_id] = APPLIED
                applied.append(req)
            else:
                results[req.change_id] = CONDITION_FAILED
        if atomic and any(r != APPLIED for r in results.values()):
            results = {cid: (r if r != APPLIED else FAILED) for cid, r in results.items()}
            applied = []
        return results, applied

    def apply(self, requests: list[ChangeRequest]) -> None:
        for req in requests:
            obj = self.objects.setdefault(req.id, {})
            _apply(obj, req)
            if not obj:
                del self.objects[req.id]

    def canonical(self) -> str:
        return json.dumps(self.objects, sort_keys=True, separators=(",", ":"))


def _apply(obj: Obj, req: ChangeRequest) -> None:
    if req.change_type == DELETE:
        obj.clear()
    elif req.change_type == SET:
        obj.setdefault(req.section, {})[req.key] = req.value
    else:
        section = obj.get(req.section)
        if section is not None:
            section.pop(req.key, None)
            if not section:
                del obj[req.section]


# -- durability ----------------------------------------------------------

class MemoryStorage:
    """Keeps the log and snapshot in memory; survives a simulated restart."""

    def __init__(self):
        self.snapshot: dict | None = None
        self.entries: list[dict] = []

    def load(self) -> tuple[dict | None, list[dict]]:
        return copy.deepcopy(self.snapshot), copy.deepcopy(self.entries)

    def append(self, entry: dict) -> None:
        # committed entries are never mutated; load() hands out copies
        self.entries.append(entry)

    def write_snapshot(self, snapshot: dict) -> None:
        self.snapshot = copy.deepcopy(snapshot)
        self.entries = [e for e in self.entries if e["seq"] > snapshot["seq"]]

    def reset(self, snapshot: dict) -> None:
        self.snapshot = copy.deepcopy(snapshot)
        self.entries = []


class FileStorage:
    """Append-only JSON-lines log plus an atomically replaced snapshot file."""

    def __init__(self, data_dir):
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.dir / "ahash.log"
        self.snap_path = self.dir / "ahash.snapshot.json"

    def load(self) -> tuple[dict | None, list[dict]]:
        snapshot = None
        if self.snap_path.exists():
            snapshot = json.loads(self.snap_path.read_text())
        entries = []
        if self.log_path.exists():
            with self.log_path.open() as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entries.append(json.loads(line))
                    except json.JSONDecodeError:
                        break  # torn final write
        floor = snapshot["seq"] if snapshot else 0
        return snapshot, [e for e in entries if e["seq"] > floor]

    def append(self, entry: dict) -> None:
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def write_snapshot(self, snapshot: dict) -> None:
        tmp = self.snap_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snapshot, sort_keys=True))
        os.replace(tmp, self.snap_path)
        _, entries = self.load()
        tmp_log = self.log_path.with_suffix(".tmp")
        with tmp_log.open("w") as fh:
            for e in entries:
                if e["seq"] > snapshot["seq"]:
                    fh.write(json.dumps(e, sort_keys=True) + "\n")
        os.replace(tmp_log, self.log_path)

    def reset(self, snapshot: dict) -> None:
        """Replace everything with ``snapshot``; the old log tail is discarded."""
        tmp = self.snap_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snapshot, sort_keys=True))
        os.replace(tmp, self.snap_path)
        self.log_path.write_text("")
