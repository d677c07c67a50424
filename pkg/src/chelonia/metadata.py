"""Namespace entries, replica states and access policies.

An entry lives in the A-Hash as one object keyed by its GUID::

    entry     type -> file | collection | mountpoint
    states    size, checksum, checksumType, neededReplicas, created
    entries   childName -> child GUID              (collections)
    locations "<shepherd url> <referenceID>" -> state  (files)
    policy    "0000", "0001", ... -> "identity|allow|read,addEntry"
    mount     url -> external URL prefix            (mountpoints)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidName

ROOT_GUID = "00000000-0000-4000-8000-000000000000"
SHEPHERD_INDEX = "shepherds"

FILE, COLLECTION, MOUNTPOINT = "file", "collection", "mountpoint"
ENTRY_TYPES = (FILE, COLLECTION, MOUNTPOINT)

CREATING, ALIVE, OFFLINE, THIRDWHEEL, INVALID = "CREATING", "ALIVE", "OFFLINE", "THIRDWHEEL", "INVALID"
DELETED = "DELETED"  # reported by a shepherd when a replica is gone for good
REPLICA_STATES = (CREATING, ALIVE, OFFLINE, THIRDWHEEL, INVALID)

READ, ADD_ENTRY, REMOVE_ENTRY, MODIFY_POLICY = "read", "addEntry", "removeEntry", "modifyPolicy"
ACTIONS = frozenset({READ, ADD_ENTRY, REMOVE_ENTRY, MODIFY_POLICY})
ANY = "ANY"


@dataclass(frozen=True)
class PolicyRule:
    identity: str
    decision: str
    actions: frozenset = ACTIONS

    def __post_init__(self):
        if self.decision not in ("allow", "deny"):
            raise ValueError(f"decision must be allow or deny, not {self.decision!r}")
        object.__setattr__(self, "actions", frozenset(self.actions))
        if not self.actions <= ACTIONS:
            raise ValueError(f"unknown actions {sorted(self.actions - ACTIONS)}")
        if "|" in self.identity:
            raise ValueError("identity may not contain '|'")

    def encode(self) -> str:
        return f"{self.identity}|{self.decision}|{','.join(sorted(self.actions))}"

    @classmethod
    def decode(cls, text: str) -> "PolicyRule":
        identity, decision, actions = text.split("|")
        return cls(identity, decision, frozenset(a for a in actions.split(",") if a))

    def matches(self, dn: str, action: str) -> bool:
        return (self.identity == ANY or self.identity == dn) and action in self.actions


def allowed(rules: list[PolicyRule], dn: str, action: str) -> bool:
    """Ordered ACL: the first matching rule decides, no match denies."""
    for rule in rules:
        if rule.matches(dn, action):
            return rule.decision == "allow"
    return False


def encode_policy(rules) -> dict[str, str]:
    return {f"{i:04d}": rule.encode() for i, rule in enumerate(rules)}


def decode_policy(section: dict[str, str] | None) -> list[PolicyRule]:
    return [PolicyRule.decode(section[k]) for k in sorted(section or {})]


def location_key(shepherd_url: str, reference_id: str) -> str:
    return f"{shepherd_url} {reference_id}"


def split_location(key: str) -> tuple[str, str]:
    url, _, ref = key.rpartition(" ")
    return url, ref


def split_ln(ln: str) -> list[str]:
    """Split an absolute Logical Name into its names."""
    if not ln.startswith("/"):
        raise InvalidName(f"logical name must be absolute: {ln!r}")
    return [part for part in ln.split("/") if part]


def check_name(name: str) -> str:
    if not name or "/" in name or name in (".", ".."):
        raise InvalidName(f"bad entry name {name!r}")
    return name


@dataclass
class EntryMetadata:
    guid: str
    entry_type: str
    states: dict[str, str] = field(default_factory=dict)
    entries: dict[str, str] = field(default_factory=dict)
    locations: dict[str, str] = field(default_factory=dict)
    policy: list[PolicyRule] = field(default_factory=list)
    mount_url: str = ""

    @classmethod
    def from_object(cls, guid: str, obj: dict) -> "EntryMetadata | None":
        entry = obj.get("entry") or {}
        if "type" not in entry:
            return None
        return cls(
            guid=guid,
            entry_type=entry["type"],
            states=dict(obj.get("states", {})),
            entries=dict(obj.get("entries", {})),
            locations=dict(obj.get("locations", {})),
            policy=decode_policy(obj.get("policy")),
            mount_url=obj.get("mount", {}).get("url", ""),
        )

    def to_object(self) -> dict:
        obj = {"entry": {"type": self.entry_type}}
        if self.states:
            obj["states"] = dict(self.states)
        if self.entries or self.entry_type == COLLECTION:
            obj["entries"] = dict(self.entries)  # present even when empty: stat size is base + k*width
        if self.locations:
            obj["locations"] = dict(self.locations)
        if self.policy:
            obj["policy"] = encode_policy(self.policy)
        if self.mount_url:
            obj["mount"] = {"url": self.mount_url}
        return obj

    @property
    def needed_replicas(self) -> int:
        return int(self.states.get("neededReplicas", "1"))

    @property
    def size(self) -> int:
        return int(self.states.get("size", "0"))

    def replica_states(self) -> dict[str, str]:
        return dict(self.locations)

    def count(self, *states: str) -> int:
        return sum(1 for s in self.locations.values() if s in states)

    def holders(self) -> set[str]:
        return {split_location(k)[0] for k in self.locations}


def file_metadata(size: int, checksum: str, checksum_type: str, needed: int, created: float,
                  policy=()) -> EntryMetadata:
    if needed < 1:
        raise ValueError("neededReplicas must be >= 1")
    return EntryMetadata("", FILE, states={
        "size": str(size), "checksum": checksum, "checksumType": checksum_type,
        "neededReplicas": str(needed), "created": f"{created:.6f}",
    }, policy=list(policy))


def collection_metadata(created: float, policy=()) -> EntryMetadata:
    return EntryMetadata("", COLLECTION, states={"created": f"{created:.6f}"}, policy=list(policy))


def mountpoint_metadata(url: str, created: float, policy=()) -> EntryMetadata:
    return EntryMetadata("", MOUNTPOINT, states={"created": f"{created:.6f}"}, policy=list(policy),
                         mount_url=url)
