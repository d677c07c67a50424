"""Bartender: the client-facing API.

Namespace commands are checked against each entry's ordered access policy
and turned into Librarian calls.  Uploads and downloads are brokered: the
client gets a one-time transfer URL on a Shepherd and moves the bytes
itself.  Shepherds call :meth:`Bartender.add_replica` to get a destination
for a missing replica.
"""

from __future__ import annotations

import logging

from .ahash.store import APPLIED, DELETE, NO_KEY, SET, UNSET, VALUE_EQUALS, change
from .errors import (
    AccessDenied,
    BackendFailure,
    InsufficientSpace,
    IsACollection,
    LibrarianUnavailable,
    NameTaken,
    NoAliveReplica,
    NoEligibleShepherd,
    NoShepherdAvailable,
    NotACollection,
    NotEmpty,
    NotFound,
    NotUnderReplicated,
    ParentMissing,
    ServiceError,
    TransportFailure,
    UnknownTarget,
)
from .hed.host import ServiceEndpoint, current_caller, rpc
from .hed.service import Service
from .librarian import TraverseResult, split_parent
from .metadata import (
    ADD_ENTRY,
    ALIVE,
    COLLECTION,
    CREATING,
    FILE,
    MOUNTPOINT,
    READ,
    REMOVE_ENTRY,
    EntryMetadata,
    PolicyRule,
    allowed,
    collection_metadata,
    file_metadata,
    location_key,
    mountpoint_metadata,
    split_location,
)
from .shepherd.backend import DEFAULT_CHECKSUM

log = logging.getLogger(__name__)

_UNREACHABLE = (TransportFailure, UnknownTarget)


def _entry(item) -> EntryMetadata:
    _, guid, obj = item
    return EntryMetadata.from_object(guid, obj)


class Bartender(Service):
    def __init__(self, librarians: list[ServiceEndpoint], shepherd_dns: dict[str, str] | None = None):
        self.librarians = list(librarians)
        self.shepherd_dns = dict(shepherd_dns or {})  # shepherd url -> DN, for outbound calls

    # -- helpers ----------------------------------------------------------------
    def _lib(self, operation: str, **args):
        return self.call_any(self.librarians, operation, unavailable=LibrarianUnavailable, **args)

    def _traverse(self, ln: str, full_terminal: bool = True) -> TraverseResult:
        return TraverseResult.from_wire(self._lib("traverse_ln", ln=ln, full_terminal=full_terminal))

    def _resolve(self, ln: str, full_terminal: bool = True) -> tuple[TraverseResult, EntryMetadata]:
        t = self._traverse(ln, full_terminal)
        if not t.complete:
            raise NotFound(f"{ln} does not exist")
        return t, _entry(t.terminal)

    def _parent(self, ln: str) -> tuple[str, EntryMetadata]:
        parent_ln, name = split_parent(ln)
        t = self._traverse(parent_ln, full_terminal=False)
        if not t.complete:
            raise ParentMissing(f"{parent_ln} does not exist")
        parent = _entry(t.terminal)
        if parent.entry_type != COLLECTION:
            raise NotACollection(f"{parent_ln} is a {parent.entry_type}")
        return name, parent

    @staticmethod
    def _require(entry: EntryMetadata, action: str, what: str) -> None:
        if not allowed(entry.policy, current_caller(), action):
            raise AccessDenied(f"{current_caller()!r} may not {action} on {what}")

    def _policy(self, policy: list[str] | None) -> list[PolicyRule]:
        if policy:
            return [PolicyRule.decode(p) for p in policy]
        return [PolicyRule(current_caller(), "allow")]

    def _create(self, ln: str, meta: EntryMetadata) -> dict:
        name, parent = self._parent(ln)
        self._require(parent, ADD_ENTRY, ln)
        return self._lib("new_entry", metadata=meta.to_object(), parent=parent.guid, name=name)

    def _shepherd(self, url: str) -> ServiceEndpoint:
        return ServiceEndpoint(url, self.shepherd_dns.get(url, "CN=shepherd"))

    def _placement(self, exclude=()) -> list[dict]:
        """Live shepherds ordered least-used first, ties by endpoint order."""
        shepherds = [s for s in self._lib("list_shepherds") if s["alive"] and s["url"] not in exclude]
        for s in shepherds:
            self.shepherd_dns.setdefault(s["url"], s["dn"])
        return sorted(shepherds, key=lambda s: (s["used"], s["url"]))

    # -- namespace ---------------------------------------------------------------
    @rpc(public=True)
    def make_collection(self, ln: str, policy: list[str] | None = None) -> dict:
        meta = collection_metadata(self.now(), self._policy(policy))
        return self._create(ln, meta)

    @rpc(public=True)
    def mount(self, ln: str, url: str, policy: list[str] | None = None) -> dict:
        meta = mountpoint_metadata(url.rstrip("/"), self.now(), self._policy(policy))
        return self._create(ln, meta)

    @rpc(public=True)
    def stat(self, ln: str) -> dict:
        _, entry = self._resolve(ln)
        self._require(entry, READ, ln)
        return {"guid": entry.guid, "metadata": entry.to_object()}

    @rpc(public=True)
    def list(self, ln: str) -> dict:
        _, entry = self._resolve(ln)
        if entry.entry_type != COLLECTION:
            raise NotACollection(f"{ln} is a {entry.entry_type}")
        self._require(entry, READ, ln)
        children = sorted(entry.entries.items())
        if not children:
            return {}
        objects = self._lib("get_metadata", guids=[g for _, g in children])
        return {name: [guid, (objects.get(guid) or {}).get("entry", {}).get("type", "missing")]
                for name, guid in children}

    @rpc(public=True)
    def unmake_collection(self, ln: str) -> dict:
        name, parent = self._parent(ln)
        self._require(parent, REMOVE_ENTRY, ln)
        _, entry = self._resolve(ln)
        guid = entry.guid
        if entry.entry_type != COLLECTION:
            raise NotACollection(f"{ln} is a {entry.entry_type}")
        if entry.entries:
            raise NotEmpty(f"{ln} has {len(entry.entries)} entries")
        # close the collection first so no entry can be linked into it meanwhile
        closing = [change("close", guid, SET, "entry", "type", "closing",
                          [(VALUE_EQUALS, "entry", "type", COLLECTION)]).to_wire()]
        if self._lib("modify_metadata", changes=closing, atomic=True).get("close") != APPLIED:
            raise NotFound(f"{ln} changed concurrently")
        current = self._lib("get_metadata", guids=[guid])[guid] or {}
        if current.get("entries"):
            reopen = [change("open", guid, SET, "entry", "type", COLLECTION).to_wire()]
            self._lib("modify_metadata", changes=reopen)
            raise NotEmpty(f"{ln} is not empty")
        self._lib("modify_metadata", atomic=True, changes=[
            change("unlink", parent.guid, UNSET, "entries", name, None,
                   [(VALUE_EQUALS, "entries", name, guid)]).to_wire(),
            change("drop", guid, DELETE).to_wire(),
        ])
        return {"guid": guid}

    @rpc(public=True)
    def del_file(self, ln: str) -> dict:
        name, parent = self._parent(ln)
        self._require(parent, REMOVE_ENTRY, ln)
        _, entry = self._resolve(ln)
        if entry.entry_type == COLLECTION:
            raise IsACollection(f"{ln} is a collection")
        reqs = [
            change("unlink", parent.guid, UNSET, "entries", name, None,
                   [(VALUE_EQUALS, "entries", name, entry.guid)]).to_wire(),
            change("drop", entry.guid, DELETE).to_wire(),
        ]
        results = self._lib("modify_metadata", changes=reqs, atomic=True)
        if any(r != APPLIED for r in results.values()):
            raise NotFound(f"{ln} changed concurrently")
        # shepherds would notice on their next check; telling them now also voids live tickets
        for key in entry.locations:
            url, ref = split_location(key)
            try:
                self.call(self._shepherd(url), "release", reference_id=ref)
            except ServiceError as exc:
                log.debug("release of %s on %s deferred: %s", ref, url, exc)
        return {"guid": entry.guid}

    @rpc(public=True)
    def move(self, src: str, dst: str) -> dict:
        src_name, src_parent = self._parent(src)
        self._require(src_parent, REMOVE_ENTRY, src)
        t, entry = self._resolve(src, full_terminal=False)
        dst_name, dst_parent = self._parent(dst)
        self._require(dst_parent, ADD_ENTRY, dst)
        if entry.entry_type == COLLECTION:
            dst_chain = self._traverse(split_parent(dst)[0], full_terminal=False).chain
            if any(guid == entry.guid for _, guid, _ in dst_chain):
                raise NotACollection(f"cannot move {src} inside itself")
        reqs = [
            change("unlink", src_parent.guid, UNSET, "entries", src_name, None,
                   [(VALUE_EQUALS, "entries", src_name, entry.guid)]).to_wire(),
            change("link", dst_parent.guid, SET, "entries", dst_name, entry.guid,
                   [(VALUE_EQUALS, "entry", "type", COLLECTION), (NO_KEY, "entries", dst_name)]).to_wire(),
        ]
        results = self._lib("modify_metadata", changes=reqs, atomic=True)
        if results.get("link") != APPLIED:
            raise NameTaken(f"{dst} exists")
        if results.get("unlink") != APPLIED:
            raise NotFound(f"{src} changed concurrently")
        return {"guid": entry.guid}

    # -- files ---------------------------------------------------------------------
    @rpc(public=True)
    def put_file(self, ln: str, size: int, checksum: str, checksum_type: str = DEFAULT_CHECKSUM,
                 needed_replicas: int = 1, policy: list[str] | None = None) -> dict:
        if size < 0:
            raise BackendFailure("negative size")
        name, parent = self._parent(ln)
        self._require(parent, ADD_ENTRY, ln)
        candidates = self._placement()
        if not candidates:
            raise NoShepherdAvailable("no live shepherd")
        meta = file_metadata(size, checksum, checksum_type, needed_replicas, self.now(), self._policy(policy))
        guid = self._lib("new_entry", metadata=meta.to_object(), parent=parent.guid, name=name)["guid"]
        for s in candidates:
            try:
                ticket = self.call(self._shepherd(s["url"]), "put", guid=guid, size=size,
                                   checksum=checksum, checksum_type=checksum_type)
            except (InsufficientSpace, BackendFailure, *_UNREACHABLE) as exc:
                log.info("put of %s on %s failed: %s", ln, s["url"], exc)
                continue
            return {"guid": guid, "url": ticket["url"]}
        # nothing could take it: undo the entry so the name is free again
        self._lib("modify_metadata", atomic=True, changes=[
            change("unlink", parent.guid, UNSET, "entries", name, None,
                   [(VALUE_EQUALS, "entries", name, guid)]).to_wire(),
            change("drop", guid, DELETE).to_wire(),
        ])
        raise NoShepherdAvailable("no shepherd accepted the upload")

    @rpc(public=True)
    def get_file(self, ln: str) -> dict:
        t = self._traverse(ln)
        entry = _entry(t.terminal)
        if entry.entry_type == MOUNTPOINT:
            self._require(entry, READ, ln)
            url = entry.mount_url + ("/" + t.remainder if t.remainder else "")
            return {"url": url, "external": True}
        if not t.complete:
            raise NotFound(f"{ln} does not exist")
        if entry.entry_type != FILE:
            raise IsACollection(f"{ln} is a {entry.entry_type}")
        self._require(entry, READ, ln)
        alive = sorted(k for k, state in entry.locations.items() if state == ALIVE)
        self.network.rng.shuffle(alive)  # uniform choice, falling back to the others
        for key in alive:
            url, ref = split_location(key)
            try:
                ticket = self.call(self._shepherd(url), "get", guid=entry.guid, reference_id=ref)
            except (NoAliveReplica, *_UNREACHABLE) as exc:
                log.info("replica %s unavailable: %s", key, exc)
                continue
            return {"url": ticket["url"], "external": False, "checksum": entry.states.get("checksum", ""),
                    "checksum_type": entry.states.get("checksumType", DEFAULT_CHECKSUM)}
        raise NoAliveReplica(f"no ALIVE replica of {ln}")

    # -- repair --------------------------------------------------------------------
    @rpc
    def add_replica(self, guid: str) -> dict:
        """Pick a new home for one more replica of ``guid`` and return its upload URL.

        The new location is registered as CREATING together with a bump of the
        entry's replica generation, conditional on the generation we read; of
        two concurrent requests only one can win.
        """
        obj = self._lib("get_metadata", guids=[guid]).get(guid)
        if obj is None:
            raise NotFound(f"no entry {guid}")
        entry = EntryMetadata.from_object(guid, obj)
        if entry.count(ALIVE, CREATING) >= entry.needed_replicas:
            raise NotUnderReplicated(f"{guid} has enough replicas")
        holders = {split_location(k)[0] for k, state in entry.locations.items() if state in (ALIVE, CREATING)}
        candidates = self._placement(exclude=holders)
        if not candidates:
            raise NoEligibleShepherd(f"every live shepherd already holds {guid}")
        gen = entry.states.get("replicaGen")
        guard = [(VALUE_EQUALS, "states", "replicaGen", gen)] if gen is not None else [(NO_KEY, "states", "replicaGen")]
        next_gen = str(int(gen or 0) + 1)
        for s in candidates:
            ref = self.new_token(8)
            key = location_key(s["url"], ref)
            reqs = [
                change("gen", guid, SET, "states", "replicaGen", next_gen, guard).to_wire(),
                change("loc", guid, SET, "locations", key, CREATING).to_wire(),
            ]
            results = self._lib("modify_metadata", changes=reqs, atomic=True)
            if results.get("gen") != APPLIED:
                raise NotUnderReplicated(f"{guid} is being repaired concurrently")
            try:
                ticket = self.call(self._shepherd(s["url"]), "put", guid=guid, size=entry.size,
                                   checksum=entry.states.get("checksum", ""),
                                   checksum_type=entry.states.get("checksumType", DEFAULT_CHECKSUM),
                                   reference_id=ref)
            except (InsufficientSpace, BackendFailure, *_UNREACHABLE) as exc:
                log.info("replica of %s on %s refused: %s", guid, s["url"], exc)
                self._lib("modify_metadata", changes=[change("unloc", guid, UNSET, "locations", key).to_wire()])
                guard = [(VALUE_EQUALS, "states", "replicaGen", next_gen)]
                next_gen = str(int(next_gen) + 1)
                continue
            return {"url": ticket["url"], "shepherd": s["url"], "reference_id": ref}
        raise NoEligibleShepherd(f"no shepherd accepted a replica of {guid}")
