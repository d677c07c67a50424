"""Shepherd: stores replicas, hands out one-time transfer URLs, keeps files healthy.

Replica lifecycle (local view)::

    CREATING -> ALIVE | INVALID
    ALIVE    -> INVALID | THIRDWHEEL
    THIRDWHEEL, INVALID -> deleted after one check period

OFFLINE exists only in the A-Hash: the Librarian sets it when this
shepherd misses its heartbeat.  Every local transition is queued and sent
with the next heartbeat.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..errors import (
    BackendFailure,
    BartenderUnavailable,
    InsufficientSpace,
    LibrarianUnavailable,
    NoAliveReplica,
    NoEligibleShepherd,
    NotUnderReplicated,
    ServiceError,
    TicketRefused,
)
from ..hed.host import ServiceEndpoint, rpc
from ..hed.service import Service
from ..metadata import ALIVE, CREATING, DELETED, INVALID, THIRDWHEEL, EntryMetadata, location_key
from . import transfer
from .backend import DEFAULT_CHECKSUM, BackendHandle, MemoryBackend, checksum

log = logging.getLogger(__name__)

UPLOAD, DOWNLOAD = "upload", "download"


@dataclass
class ShepherdConfig:
    capacity: int = 10 ** 12
    heartbeat_period: float = 60.0
    check_period: float = 60.0
    ticket_ttl: float = 300.0


@dataclass
class ReplicaRecord:
    reference_id: str
    guid: str
    state: str
    checksum: str
    checksum_type: str
    size: int
    since: float = 0.0


@dataclass
class TransferTicket:
    token: str
    direction: str
    reference_id: str
    issued_at: float
    ttl: float

    def expired(self, now: float) -> bool:
        return now > self.issued_at + self.ttl


@dataclass
class CheckReport:
    """What one self-check did, for logs and the harness."""

    scrubbed: int = 0
    invalid: list[str] = field(default_factory=list)
    repairs: list[str] = field(default_factory=list)
    thirdwheel: list[str] = field(default_factory=list)
    deleted: list[str] = field(default_factory=list)


class Shepherd(Service):
    def __init__(self, librarians: list[ServiceEndpoint], bartenders: list[ServiceEndpoint],
                 backend=None, config: ShepherdConfig | None = None, catalog_path=None,
                 turl_base: str | None = None):
        self.librarians = list(librarians)
        self.bartenders = list(bartenders)
        self.backend = backend if backend is not None else MemoryBackend()
        self.config = config or ShepherdConfig()
        self.catalog_path = Path(catalog_path) if catalog_path else None
        self.turl_base = turl_base
        self.replicas: dict[str, ReplicaRecord] = {}
        self.tickets: dict[str, TransferTicket] = {}
        self.pending: dict[str, tuple[str, str, int]] = {}
        self.need_full = True
        self.transfers_in_flight = 0
        self.orphan_suspects: set[str] = set()
        self._lock = threading.RLock()
        self._load_catalog()

    @property
    def url(self) -> str:
        return self.endpoint.url

    # -- persistence ----------------------------------------------------------
    def _load_catalog(self) -> None:
        if self.catalog_path and self.catalog_path.exists():
            data = json.loads(self.catalog_path.read_text())
            self.replicas = {r["reference_id"]: ReplicaRecord(**r) for r in data}

    def _save(self) -> None:
        if self.catalog_path is None:
            return
        tmp = self.catalog_path.with_suffix(".tmp")
        tmp.write_text(json.dumps([asdict(r) for r in self.replicas.values()], sort_keys=True))
        os.replace(tmp, self.catalog_path)

    # -- state changes ----------------------------------------------------------
    def _set_state(self, rec: ReplicaRecord, state: str) -> None:
        rec.state = state
        rec.since = self.now()
        self.pending[rec.reference_id] = (rec.guid, state, rec.size)
        self._save()

    def _drop(self, ref: str) -> None:
        rec = self.replicas.pop(ref, None)
        self.backend.delete(ref)
        for token in [t for t, tk in self.tickets.items() if tk.reference_id == ref]:
            del self.tickets[token]
        if rec is not None:
            self.pending[ref] = (rec.guid, DELETED, rec.size)
            self._save()

    def _orphaned(self, ref: str) -> bool:
        """Delete a replica whose entry is gone, but only on the second sighting.

        A single read may come from a replica that has not caught up yet.
        """
        if ref in self.orphan_suspects:
            self.orphan_suspects.discard(ref)
            self._drop(ref)
            return True
        self.orphan_suspects.add(ref)
        return False

    def used(self) -> int:
        return sum(r.size for r in self.replicas.values())

    def handle(self) -> BackendHandle:
        return BackendHandle(self.backend.name, self.config.capacity, self.used())

    def _issue(self, direction: str, ref: str) -> str:
        token = self.new_token(16)  # 128 random bits
        self.tickets[token] = TransferTicket(token, direction, ref, self.now(), self.config.ticket_ttl)
        return f"{self.turl_base or self.url}/{token}"

    def _redeem(self, token: str, direction: str) -> TransferTicket:
        with self._lock:
            ticket = self.tickets.pop(token, None)  # single use, consumed even when refused below
        if ticket is None:
            raise TicketRefused("unknown or already used ticket")
        if ticket.direction != direction:
            raise TicketRefused(f"ticket is for {ticket.direction}")
        if ticket.expired(self.now()):
            raise TicketRefused("ticket expired")
        return ticket

    # -- lifecycle ------------------------------------------------------------
    def on_kill(self) -> None:
        with self._lock:
            self.tickets.clear()

    def on_start(self) -> None:
        """Revalidate every replica, then send a full report."""
        with self._lock:
            self.tickets.clear()
            self.pending.clear()
            self._load_catalog()
            for ref, rec in list(self.replicas.items()):
                if rec.state == CREATING:
                    self._drop(ref)  # its upload ticket died with the process
                elif rec.state in (ALIVE, THIRDWHEEL) and not self._verify(rec):
                    self._set_state(rec, INVALID)
                    self.backend.delete(ref)
            self.pending.clear()
            self.need_full = True
        try:
            self.heartbeat()
        except ServiceError as exc:
            log.info("%s: initial report failed: %s", self.url, exc)

    def _verify(self, rec: ReplicaRecord) -> bool:
        try:
            return checksum(self.backend.read(rec.reference_id), rec.checksum_type) == rec.checksum
        except BackendFailure:
            return False

    # -- operations for the Bartender ------------------------------------------
    @rpc
    def put(self, guid: str, size: int, checksum: str, checksum_type: str = DEFAULT_CHECKSUM,
            reference_id: str | None = None) -> dict:
        with self._lock:
            if self.used() + size > self.config.capacity:
                raise InsufficientSpace(f"{size} bytes requested, {self.config.capacity - self.used()} free")
            ref = reference_id or self.new_token(8)
            if ref in self.replicas:
                raise BackendFailure(f"reference {ref} exists")
            rec = ReplicaRecord(ref, guid, CREATING, checksum, checksum_type, size, self.now())
            self.replicas[ref] = rec
            self._save()
            url = self._issue(UPLOAD, ref)
            self.pending[ref] = (guid, CREATING, size)
        self._report_now(ref)
        return {"reference_id": ref, "url": url}

    @rpc
    def get(self, guid: str, reference_id: str | None = None) -> dict:
        with self._lock:
            for rec in self.replicas.values():
                if rec.guid == guid and rec.state == ALIVE and reference_id in (None, rec.reference_id):
                    return {"reference_id": rec.reference_id, "url": self._issue(DOWNLOAD, rec.reference_id)}
        raise NoAliveReplica(f"no ALIVE replica of {guid} here")

    @rpc
    def release(self, reference_id: str) -> dict:
        """Forget a replica whose entry was deleted; outstanding tickets die with it."""
        with self._lock:
            self._drop(reference_id)
        return {"released": reference_id}

    @rpc
    def status(self) -> dict:
        with self._lock:
            return {
                "url": self.url,
                "capacity": self.config.capacity,
                "used": self.used(),
                "replicas": [asdict(r) for r in sorted(self.replicas.values(), key=lambda r: r.reference_id)],
            }

    # -- byte transfers (authorized by the ticket alone) ------------------------
    @rpc(public=True)
    def upload(self, token: str, data: bytes) -> dict:
        ticket = self._redeem(token, UPLOAD)
        with self._lock:
            rec = self.replicas.get(ticket.reference_id)
            if rec is None or rec.state != CREATING:
                raise TicketRefused("replica is no longer awaiting upload")
            self.backend.write(rec.reference_id, data)
            state = self.on_upload_complete(rec.reference_id)
        self._report_now(rec.reference_id)
        return {"state": state}

    def _report_now(self, ref: str) -> None:
        """Send one buffered transition ahead of the heartbeat; it stays buffered on failure."""
        with self._lock:
            item = self.pending.get(ref)
        if item is None:
            return
        try:
            self._report([[ref, *item]])
        except ServiceError as exc:
            log.info("%s: early report of %s failed: %s", self.url, ref, exc)
            return
        with self._lock:
            if self.pending.get(ref) == item:
                del self.pending[ref]

    def on_upload_complete(self, ref: str) -> str:
        with self._lock:
            rec = self.replicas[ref]
            if self._verify(rec):
                self._set_state(rec, ALIVE)
            else:
                self._set_state(rec, INVALID)
                self.backend.delete(ref)
            return rec.state

    @rpc(public=True)
    def download(self, token: str) -> bytes:
        ticket = self._redeem(token, DOWNLOAD)
        with self._lock:
            rec = self.replicas.get(ticket.reference_id)
            if rec is None or rec.state != ALIVE:
                raise NoAliveReplica("replica is gone")
            data = self.backend.read(rec.reference_id)
            if checksum(data, rec.checksum_type) != rec.checksum:
                # never serve bad bytes; the replica is replaced elsewhere
                self._set_state(rec, INVALID)
                self.backend.delete(rec.reference_id)
                raise NoAliveReplica("replica failed its checksum")
            return data

    # -- heartbeat ------------------------------------------------------------
    def _report(self, changes: list, full: bool = False) -> dict:
        return self.call_any(self.librarians, "report", unavailable=LibrarianUnavailable,
                             shepherd=self.url, changes=changes, full=full)

    def heartbeat(self) -> None:
        with self._lock:
            full = self.need_full
            if full:
                changes = [[r.reference_id, r.guid, r.state, r.size]
                           for r in sorted(self.replicas.values(), key=lambda r: r.reference_id)]
            else:
                changes = [[ref, guid, state, size] for ref, (guid, state, size) in self.pending.items()]
            sent = dict(self.pending)
        reply = self._report(changes, full)
        with self._lock:
            for ref, item in sent.items():
                if self.pending.get(ref) == item:
                    del self.pending[ref]
            if full:
                self.need_full = False
            for ref in reply.get("orphans", []):
                self._orphaned(ref)
        if reply.get("resync"):
            with self._lock:
                self.need_full = True
            self.heartbeat()

    # -- self check -------------------------------------------------------------
    def self_check(self) -> CheckReport:
        report = CheckReport()
        now = self.now()
        with self._lock:
            for ref, rec in list(self.replicas.items()):
                if rec.state in (THIRDWHEEL, INVALID) and now - rec.since >= self.config.check_period:
                    self._drop(ref)
                    report.deleted.append(ref)
                elif rec.state == CREATING and now - rec.since > self.config.ticket_ttl and not any(
                        t.reference_id == ref for t in self.tickets.values()):
                    self._drop(ref)
                    report.deleted.append(ref)
                elif rec.state == ALIVE:
                    report.scrubbed += 1
                    if not self._verify(rec):
                        self._set_state(rec, INVALID)
                        self.backend.delete(ref)
                        report.invalid.append(ref)
            alive = {ref: rec for ref, rec in self.replicas.items() if rec.state == ALIVE}
        guids = sorted({rec.guid for rec in alive.values()} |
                       {rec.guid for rec in self.replicas.values() if rec.state == INVALID})
        if not guids:
            return report
        try:
            objects = self.call_any(self.librarians, "get_metadata", unavailable=LibrarianUnavailable,
                                    guids=guids)
        except ServiceError as exc:
            log.info("%s: self-check skipped: %s", self.url, exc)
            return report
        for guid in guids:
            obj = objects.get(guid)
            mine = [rec for rec in self.replicas.values() if rec.guid == guid]
            if obj is None:
                with self._lock:
                    for rec in mine:
                        if self._orphaned(rec.reference_id):
                            report.deleted.append(rec.reference_id)
                continue
            for rec in mine:
                self.orphan_suspects.discard(rec.reference_id)
            entry = EntryMetadata.from_object(guid, obj)
            healthy = [rec for rec in mine if rec.state == ALIVE]
            for rec in healthy:
                if entry.locations.get(location_key(self.url, rec.reference_id)) != ALIVE:
                    with self._lock:
                        self.pending[rec.reference_id] = (guid, ALIVE, rec.size)
            # an INVALID replica we just found is still listed as ALIVE until the next heartbeat
            invalid_here = [location_key(self.url, r.reference_id) for r in mine if r.state == INVALID]
            live = entry.count(ALIVE) - sum(1 for k in invalid_here if entry.locations.get(k) == ALIVE)
            in_flight = entry.count(CREATING)
            if not healthy:
                continue
            if live + in_flight < entry.needed_replicas:
                self._repair(guid, healthy[0], entry.needed_replicas - live - in_flight, report)
            elif live > entry.needed_replicas:
                self._retire(entry, healthy[0], report)
        return report

    def _repair(self, guid: str, source: ReplicaRecord, missing: int, report: CheckReport) -> None:
        for _ in range(missing):
            try:
                ticket = self.call_any(self.bartenders, "add_replica", unavailable=BartenderUnavailable,
                                       guid=guid)
            except (NotUnderReplicated, NoEligibleShepherd) as exc:
                log.debug("%s: no repair for %s: %s", self.url, guid, exc)
                return
            except ServiceError as exc:
                log.info("%s: repair of %s deferred: %s", self.url, guid, exc)
                return
            data = self.backend.read(source.reference_id)
            delay = self.network.message_delay(source.size) if self.clock.simulated else 0.0
            self.transfers_in_flight += 1
            self.clock.schedule(delay, self._push, ticket["url"], data)
            report.repairs.append(guid)

    def _push(self, url: str, data: bytes) -> None:
        self.transfers_in_flight -= 1
        if not self.host.is_up(self.endpoint.service):
            return
        try:
            transfer.upload(self.network, url, data, self.endpoint.dn, origin=self.host.name)
        except ServiceError as exc:
            log.info("%s: replica push to %s failed: %s", self.url, url, exc)

    def _retire(self, entry: EntryMetadata, rec: ReplicaRecord, report: CheckReport) -> None:
        """Mark our replica surplus; the conditions make the first noticer the only one."""
        mine = location_key(self.url, rec.reference_id)
        conditions = [{"kind": "value-equals", "section": "locations", "key": key, "value": ALIVE}
                      for key, state in sorted(entry.locations.items()) if state == ALIVE]
        req = {"change_id": "tw", "id": entry.guid, "change_type": "set", "section": "locations",
               "key": mine, "value": THIRDWHEEL, "conditions": conditions}
        try:
            results = self.call_any(self.librarians, "modify_metadata", unavailable=LibrarianUnavailable,
                                    changes=[req], atomic=True)
        except ServiceError as exc:
            log.info("%s: surplus marking deferred: %s", self.url, exc)
            return
        if results.get("tw") == "applied":
            with self._lock:
                self._set_state(rec, THIRDWHEEL)
                self.pending.pop(rec.reference_id, None)  # already recorded centrally
            report.thirdwheel.append(rec.reference_id)
