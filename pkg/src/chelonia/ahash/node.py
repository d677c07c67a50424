"""A-Hash replica: single master, any-replica reads, majority election.

Every committed batch gets the next sequence number.  The master applies a
batch locally, pushes it to every live, caught-up replica and acknowledges
only after all of them confirmed.  When the master goes quiet for
``master_timeout`` a replica calls an election: the reachable nodes must form
a majority of the node list, and the node with the highest
``(last_epoch, seq, node_id)`` wins.  Inside one epoch that is exactly "highest
update number, ties to the higher node id"; the epoch only matters when a
deposed master comes back with writes nobody else confirmed.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

from ..errors import (
    GapDetected,
    NoMajority,
    NoMaster,
    NotFromMaster,
    NotMaster,
    ServiceError,
)
from ..hed.host import ServiceEndpoint, current_caller, rpc
from ..hed.service import Service
from .store import ChangeRequest, MemoryStorage, ObjectStore, change

log = logging.getLogger(__name__)

MASTER, CLIENT, CANDIDATE = "MASTER", "CLIENT", "CANDIDATE"
NODE_LIST = "ahash:nodes"


@dataclass
class AHashConfig:
    master_timeout: float = 10.0
    ping_period: float = 1.0
    backoff_min: float = 0.5
    backoff_max: float = 2.0
    snapshot_every: int = 1000


class AHashNode(Service):
    def __init__(self, node_id: str, peers: dict[str, ServiceEndpoint] | None = None,
                 storage=None, config: AHashConfig | None = None):
        self.node_id = node_id
        self.seed_peers = dict(peers or {})
        self.storage = storage if storage is not None else MemoryStorage()
        self.config = config or AHashConfig()
        self._state = threading.RLock()
        self._writer = threading.Lock()
        self._electing = threading.Lock()
        self.role = CLIENT
        self.master_id: str | None = None
        self.last_master_contact = 0.0
        self.last_majority = 0.0
        self.next_retry = 0.0
        self.election_started: float | None = None
        self.elections: list[dict] = []
        self.peer_seq: dict[str, int] = {}
        self.live: set[str] = set()
        self._load()

    # -- persistence --------------------------------------------------------
    def _load(self) -> None:
        snapshot, entries = self.storage.load()
        if snapshot:
            self.store = ObjectStore(snapshot["objects"])
            self.seq = snapshot["seq"]
            self.last_epoch = snapshot["last_epoch"]
        else:
            self.store = ObjectStore()
            self.seq = 0
            self.last_epoch = 0
        self.log_floor = self.seq
        self.floor_epoch = self.last_epoch
        self.log: list[dict] = []
        for entry in entries:
            if entry["seq"] == self.seq + 1:
                self._apply_entry(entry, persist=False)
        self.epoch = self.last_epoch

    def _apply_entry(self, entry: dict, persist: bool = True) -> None:
        self.store.apply([ChangeRequest.from_wire(r) for r in entry["batch"]])
        self.seq = entry["seq"]
        self.last_epoch = entry["epoch"]
        self.log.append(entry)
        if persist:
            self.storage.append(entry)
            if len(self.log) >= 2 * self.config.snapshot_every:
                self._snapshot()

    def _snapshot(self) -> None:
        snap = {"seq": self.seq, "last_epoch": self.last_epoch, "objects": self.store.objects}
        self.storage.write_snapshot(snap)
        keep = self.log[-self.config.snapshot_every:]
        dropped = self.log[: len(self.log) - len(keep)]
        if dropped:
            self.log_floor = dropped[-1]["seq"]
            self.floor_epoch = dropped[-1]["epoch"]
        self.log = keep

    def _install_snapshot(self, snap: dict) -> None:
        self.store = ObjectStore(snap["objects"])
        self.seq = snap["seq"]
        self.last_epoch = snap["last_epoch"]
        self.log = []
        self.log_floor = self.seq
        self.floor_epoch = self.last_epoch
        self.storage.reset(snap)

    def _epoch_at(self, seq: int) -> int | None:
        if seq == self.log_floor:
            return self.floor_epoch
        if self.log_floor < seq <= self.seq:
            return self.log[seq - self.log_floor - 1]["epoch"]
        return None

    # -- membership -----------------------------------------------------------
    def members(self) -> dict[str, ServiceEndpoint]:
        nodes = self.store.peek(NODE_LIST)
        if nodes.get("nodes"):
            dns = nodes.get("dns", {})
            return {nid: ServiceEndpoint(url, dns.get(nid, "")) for nid, url in nodes["nodes"].items()}
        members = dict(self.seed_peers)
        if self.endpoint is not None:
            members[self.node_id] = self.endpoint
        return members

    def peers(self) -> dict[str, ServiceEndpoint]:
        return {nid: ep for nid, ep in sorted(self.members().items()) if nid != self.node_id}

    @property
    def majority(self) -> int:
        return len(self.members()) // 2 + 1

    def _dn_of(self, node_id: str | None) -> str | None:
        ep = self.members().get(node_id) if node_id else None
        return ep.dn if ep else None

    # -- lifecycle ------------------------------------------------------------
    def on_kill(self) -> None:
        self.role = CLIENT
        self.master_id = None

    def on_start(self) -> None:
        """(Re)join: adopt a reachable master, else call an election."""
        self._load()
        now = self.now()
        self.role, self.master_id = CLIENT, None
        self.last_master_contact = now
        self.live.clear()
        self.peer_seq.clear()
        statuses = self._gather_status()
        masters = [s for s in statuses.values() if s["role"] == MASTER and s["node_id"] != self.node_id]
        if masters:
            m = max(masters, key=lambda s: s["epoch"])
            self.epoch = max(self.epoch, m["epoch"])
            self.master_id = m["node_id"]
            try:
                self.call(self.members()[m["node_id"]], "rejoin", node_id=self.node_id,
                          seq=self.seq, last_epoch=self.last_epoch)
            except ServiceError as exc:
                log.info("%s: rejoin failed: %s", self.node_id, exc)
            return
        try:
            self.start_election()
        except ServiceError:
            pass

    def tick(self) -> None:
        now = self.now()
        if self.role == MASTER:
            self._ping_peers()
        elif self.role == CLIENT:
            if self.master_id is None or now - self.last_master_contact > self.config.master_timeout:
                self.start_election()
        elif now >= self.next_retry:
            self.start_election()

    def _step_down(self) -> None:
        with self._state:
            if self.role == MASTER:
                log.info("%s steps down at epoch %d", self.node_id, self.epoch)
            self.role = CLIENT
            self.master_id = None
            self.last_master_contact = self.now()
            self.live.clear()

    # -- reads ----------------------------------------------------------------
    @rpc
    def get(self, ids: list[str]) -> dict:
        with self._state:
            return {oid: self.store.get(oid) for oid in ids}

    @rpc
    def get_node_list(self) -> list[dict]:
        return [{"node_id": nid, "url": ep.url, "dn": ep.dn}
                for nid, ep in sorted(self.members().items())]

    @rpc
    def status(self) -> dict:
        return {"node_id": self.node_id, "role": self.role, "seq": self.seq,
                "last_epoch": self.last_epoch, "epoch": self.epoch, "master_id": self.master_id}

    @rpc
    def master(self) -> dict:
        ep = self.members().get(self.master_id) if self.master_id else None
        return {"node_id": self.master_id, "url": ep.url if ep else None, "role": self.role}

    # -- writes -----------------------------------------------------------------
    def _require_master(self) -> None:
        if self.role == MASTER:
            return
        ep = self.members().get(self.master_id) if self.master_id else None
        if self.role == CLIENT and ep is not None:
            raise NotMaster(f"{self.node_id} is not the master", master=ep.url, master_dn=ep.dn)
        raise NoMaster("no master: election in progress")

    @rpc
    def change(self, requests: list[dict], atomic: bool = False) -> dict:
        reqs = [ChangeRequest.from_wire(r) for r in requests]
        with self._writer:
            self._require_master()
            targets = [nid for nid in self.peers() if nid in self.live]
            if len(targets) + 1 < self.majority:
                raise NoMaster("master cannot reach a majority")
            with self._state:
                results, applied = self.store.evaluate(reqs, atomic)
                if not applied:
                    return {"results": results, "seq": self.seq}
                entry = {"seq": self.seq + 1, "epoch": self.epoch, "batch": [r.to_wire() for r in applied]}
                self._apply_entry(entry)
            confirmed = 1
            peers = self.peers()
            for nid in targets:
                if self._push(nid, peers[nid], [entry]):
                    confirmed += 1
            if confirmed < self.majority:
                self._step_down()
                raise NoMaster("write not confirmed by a majority")
            return {"results": results, "seq": entry["seq"]}

    def _push(self, nid: str, ep: ServiceEndpoint, entries: list[dict]) -> bool:
        try:
            ack = self.call(ep, "replicate", entries=entries, epoch=self.epoch, master_id=self.node_id)
        except GapDetected as exc:
            return self._sync_peer(nid, exc.details.get("seq", 0), exc.details.get("last_epoch", 0))
        except NotFromMaster:
            self._step_down()
            return False
        except ServiceError:
            self.live.discard(nid)
            return False
        self.peer_seq[nid] = ack["seq"]
        return True

    def _sync_peer(self, nid: str, peer_seq: int, peer_last_epoch: int) -> bool:
        """Bring one replica to our seq; divergent or too-old replicas get a snapshot."""
        ep = self.peers().get(nid)
        if ep is None:
            return False
        args = {"epoch": self.epoch, "master_id": self.node_id}
        behind_floor = peer_seq < self.log_floor
        diverged = peer_seq > self.seq or (not behind_floor and self._epoch_at(peer_seq) != peer_last_epoch)
        if behind_floor or diverged:
            args["entries"] = []
            args["snapshot"] = {"seq": self.seq, "last_epoch": self.last_epoch, "objects": self.store.objects}
        else:
            args["entries"] = self.log[peer_seq - self.log_floor:]
        try:
            ack = self.call(ep, "replicate", **args)
        except NotFromMaster:
            self._step_down()
            return False
        except ServiceError:
            self.live.discard(nid)
            return False
        self.peer_seq[nid] = ack["seq"]
        if ack["seq"] == self.seq:
            self.live.add(nid)
            return True
        return False

    @rpc
    def replicate(self, entries: list[dict], epoch: int, master_id: str, snapshot: dict | None = None) -> dict:
        self._accept_master(master_id, epoch)
        with self._state:
            if snapshot is not None:
                self._install_snapshot(snapshot)
            for entry in entries:
                if entry["seq"] <= self.seq:
                    continue
                if entry["seq"] != self.seq + 1:
                    raise GapDetected(f"have {self.seq}, got {entry['seq']}",
                                      seq=self.seq, last_epoch=self.last_epoch)
                self._apply_entry(entry)
            return {"seq": self.seq}

    def _accept_master(self, master_id: str, epoch: int) -> None:
        if current_caller() != self._dn_of(master_id) or epoch < self.epoch:
            raise NotFromMaster(f"{current_caller()!r} is not the master at epoch {self.epoch}")
        with self._state:
            if master_id != self.node_id and (self.role != CLIENT or self.master_id != master_id):
                self.role = CLIENT
            self.epoch = epoch
            self.master_id = master_id
            self.last_master_contact = self.now()

    @rpc
    def ping(self, master_id: str, epoch: int) -> dict:
        self._accept_master(master_id, epoch)
        return {"seq": self.seq, "last_epoch": self.last_epoch}

    @rpc
    def rejoin(self, node_id: str, seq: int, last_epoch: int) -> dict:
        self._require_master()
        if current_caller() != self._dn_of(node_id):
            raise NotFromMaster("rejoin from unknown node")
        with self._writer:
            ok = self._sync_peer(node_id, seq, last_epoch)
        return {"caught_up": ok, "seq": self.seq}

    def _ping_peers(self) -> None:
        now = self.now()
        acks = 1
        for nid, ep in self.peers().items():
            if self.role != MASTER:
                return
            try:
                r = self.call(ep, "ping", master_id=self.node_id, epoch=self.epoch)
            except NotFromMaster:
                self._step_down()
                return
            except ServiceError:
                self.live.discard(nid)
                continue
            acks += 1
            if r["seq"] == self.seq and r["last_epoch"] == self.last_epoch:
                self.live.add(nid)
                self.peer_seq[nid] = r["seq"]
            else:
                self.live.discard(nid)
                with self._writer:
                    self._sync_peer(nid, r["seq"], r["last_epoch"])
        if acks >= self.majority:
            self.last_majority = now
        elif now - self.last_majority > self.config.master_timeout / 2:
            # a master cut off from the majority yields before anyone can replace it
            self._step_down()

    # -- election ---------------------------------------------------------------
    def _gather_status(self) -> dict[str, dict]:
        statuses = {self.node_id: self.status()}
        for nid, ep in self.peers().items():
            try:
                statuses[nid] = self.call(ep, "status")
            except ServiceError:
                continue
        return statuses

    def start_election(self) -> str:
        if not self._electing.acquire(blocking=False):
            raise NoMaster("election already running")
        try:
            return self._elect()
        finally:
            self._electing.release()

    def _elect(self) -> str:
        now = self.now()
        if self.election_started is None:
            self.election_started = now
        self.role = CANDIDATE
        statuses = self._gather_status()
        if len(statuses) < self.majority:
            self._backoff()
            raise NoMajority(f"{len(statuses)} of {len(self.members())} nodes reachable")
        masters = [s for nid, s in statuses.items() if nid != self.node_id and s["role"] == MASTER]
        if masters:
            m = max(masters, key=lambda s: s["epoch"])
            if m["epoch"] >= self.epoch:
                with self._state:
                    self.role, self.master_id, self.epoch = CLIENT, m["node_id"], m["epoch"]
                    self.last_master_contact = self.now()
                self._election_done(m["node_id"])
                return m["node_id"]
        winner = max(statuses.values(), key=lambda s: (s["last_epoch"], s["seq"], s["node_id"]))["node_id"]
        new_epoch = max(s["epoch"] for s in statuses.values()) + 1
        accepted = 1 if self._accept_election(winner, new_epoch) else 0
        peers = self.members()
        others = [nid for nid in statuses if nid not in (self.node_id, winner)]
        for nid in others:
            try:
                if self.call(peers[nid], "elect", winner=winner, epoch=new_epoch)["accepted"]:
                    accepted += 1
            except ServiceError:
                continue
        if winner != self.node_id:
            if accepted + 1 < self.majority:
                self._backoff()
                raise NoMajority("not enough votes")
            try:
                if not self.call(peers[winner], "elect", winner=winner, epoch=new_epoch)["accepted"]:
                    raise NoMajority("winner refused")
            except ServiceError:
                self._backoff()
                raise
        elif accepted < self.majority:
            self._backoff()
            raise NoMajority("not enough votes")
        else:
            self._become_master()
        self._election_done(winner)
        return winner

    def _backoff(self) -> None:
        self.role = CANDIDATE
        self.next_retry = self.now() + self.network.rng.uniform(self.config.backoff_min, self.config.backoff_max)

    def _election_done(self, winner: str) -> None:
        start = self.election_started if self.election_started is not None else self.now()
        self.elections.append({"start": start, "end": self.now(), "winner": winner})
        self.election_started = None

    def _accept_election(self, winner: str, epoch: int) -> bool:
        with self._state:
            if epoch < self.epoch or (epoch == self.epoch and self.master_id not in (None, winner)):
                return False
            if self._master_fresh(winner):
                return False
            self.epoch = epoch
            self.master_id = winner
            self.last_master_contact = self.now()
            if winner != self.node_id:
                self.role = CLIENT
            return True

    def _master_fresh(self, winner: str) -> bool:
        """True while another master may still hold its lease.

        A master steps down after ``master_timeout / 2`` without a majority;
        refusing votes for a full ``master_timeout`` after the last contact
        means a new master is only chosen once the old one has yielded.
        """
        if self.role == MASTER:
            return winner != self.node_id
        return (self.master_id not in (None, winner)
                and self.now() - self.last_master_contact < self.config.master_timeout)

    @rpc
    def elect(self, winner: str, epoch: int) -> dict:
        if current_caller() not in {ep.dn for ep in self.members().values()}:
            raise NotFromMaster("election request from a non-member")
        accepted = self._accept_election(winner, epoch)
        if accepted and winner == self.node_id and self.role != MASTER:
            self._become_master()
        return {"accepted": accepted}

    def _become_master(self) -> None:
        with self._state:
            self.role = MASTER
            self.master_id = self.node_id
            self.last_majority = self.now()
            self.live.clear()
        log.info("%s is master at epoch %d (seq %d)", self.node_id, self.epoch, self.seq)
        self._ping_peers()
        if self.role == MASTER and not self.store.peek(NODE_LIST).get("nodes"):
            self._write_node_list()

    def _write_node_list(self) -> None:
        reqs = []
        for nid, ep in sorted(self.members().items()):
            reqs.append(change(f"n-{nid}", NODE_LIST, "set", "nodes", nid, ep.url).to_wire())
            reqs.append(change(f"d-{nid}", NODE_LIST, "set", "dns", nid, ep.dn).to_wire())
        try:
            self.change(reqs)
        except ServiceError as exc:
            log.info("%s: node list bootstrap deferred: %s", self.node_id, exc)
