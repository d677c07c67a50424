"""Build a complete in-process deployment on one network.

Host names double as service identities: A-Hash replicas are ``a1..``,
Librarians ``l1..``, Bartenders ``b1..`` and Shepherds ``s1..``; each host
runs one service and has DN ``CN=<host>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..ahash import MASTER, AHashConfig, AHashNode, FileStorage, MemoryStorage
from ..bartender import Bartender
from ..errors import ServiceError
from ..hed import Network, ServiceEndpoint, Simulator, WorkerPoolConfig
from ..librarian import Librarian, LibrarianConfig
from ..shepherd import FileBackend, MemoryBackend, Shepherd, ShepherdConfig, checksum
from ..shepherd import transfer

log = logging.getLogger(__name__)

SERVICE_NAMES = {"a": "AHash", "l": "Librarian", "b": "Bartender", "s": "Shepherd"}


@dataclass
class Topology:
    ahash: int = 1
    librarians: int = 1
    bartenders: int = 1
    shepherds: int = 0
    shepherd_capacity: int = 10 ** 12
    latency: float = 0.0
    bandwidth: float | None = None
    ahash_config: AHashConfig = field(default_factory=AHashConfig)
    librarian_config: LibrarianConfig = field(default_factory=LibrarianConfig)
    shepherd_config: ShepherdConfig = field(default_factory=ShepherdConfig)
    bartender_pool: WorkerPoolConfig = field(default_factory=WorkerPoolConfig)
    processing_time: dict[str, float] = field(default_factory=dict)  # keyed by host prefix
    extra_ahash_clients: tuple[str, ...] = ()  # DNs allowed to talk to the A-Hash directly
    periodic: bool = True
    data_dir: str | None = None  # persist A-Hash logs and replica bytes under <data_dir>/<host>
    turl_base: str | None = None  # public transfer URL prefix; "{host}" is replaced per shepherd


def dn_of(host: str) -> str:
    return f"CN={host}"


class Deployment:
    def __init__(self, topology: Topology, seed: int = 0, clock=None):
        self.topology = topology
        self.network = Network(clock if clock is not None else Simulator(), latency=topology.latency,
                               bandwidth=topology.bandwidth, seed=seed)
        self.clock = self.network.clock
        t = topology
        self.ahash_ids = [f"a{i + 1}" for i in range(t.ahash)]
        self.librarian_ids = [f"l{i + 1}" for i in range(t.librarians)]
        self.bartender_ids = [f"b{i + 1}" for i in range(t.bartenders)]
        self.shepherd_ids = [f"s{i + 1}" for i in range(t.shepherds)]
        scheme = "sim"
        ep = lambda h: ServiceEndpoint(f"{scheme}://{h}/{SERVICE_NAMES[h[0]]}", dn_of(h))  # noqa: E731
        self.endpoints = {h: ep(h) for h in self.ahash_ids + self.librarian_ids + self.bartender_ids + self.shepherd_ids}
        ahash_eps = {h: self.endpoints[h] for h in self.ahash_ids}
        lib_eps = [self.endpoints[h] for h in self.librarian_ids]
        bart_eps = [self.endpoints[h] for h in self.bartender_ids]

        self.ahash: dict[str, AHashNode] = {}
        self.storages: dict[str, MemoryStorage] = {}
        for h in self.ahash_ids:
            self.storages[h] = FileStorage(Path(t.data_dir) / h) if t.data_dir else MemoryStorage()
            node = AHashNode(h, ahash_eps, storage=self.storages[h], config=t.ahash_config)
            trusted = [dn_of(x) for x in self.ahash_ids + self.librarian_ids] + list(t.extra_ahash_clients)
            self._host(h).register_service("AHash", node, dn_of(h), trusted)
            self.ahash[h] = node

        self.librarians: dict[str, Librarian] = {}
        for h in self.librarian_ids:
            lib = Librarian(list(ahash_eps.values()), t.librarian_config)
            self._host(h).register_service("Librarian", lib, dn_of(h),
                                           [dn_of(x) for x in self.bartender_ids + self.shepherd_ids])
            self.librarians[h] = lib

        shepherd_dns = {self.endpoints[h].url: dn_of(h) for h in self.shepherd_ids}
        self.bartenders: dict[str, Bartender] = {}
        for h in self.bartender_ids:
            bart = Bartender(lib_eps, shepherd_dns)
            self._host(h, t.bartender_pool).register_service("Bartender", bart, dn_of(h),
                                                             [dn_of(x) for x in self.shepherd_ids])
            self.bartenders[h] = bart

        self.shepherds: dict[str, Shepherd] = {}
        for h in self.shepherd_ids:
            cfg = ShepherdConfig(**{**t.shepherd_config.__dict__, "capacity": t.shepherd_capacity})
            if t.data_dir:
                backend, catalog = FileBackend(Path(t.data_dir) / h / "replicas"), Path(t.data_dir) / h / "catalog.json"
            else:
                backend, catalog = MemoryBackend(), None
            turl = t.turl_base.replace("{host}", h) if t.turl_base else None
            shep = Shepherd(lib_eps, bart_eps, backend, cfg, catalog_path=catalog, turl_base=turl)
            self._host(h).register_service("Shepherd", shep, dn_of(h), [dn_of(x) for x in self.bartender_ids])
            self.shepherds[h] = shep
        self.periodic: dict[str, list] = {}

    def _host(self, name: str, pool: WorkerPoolConfig | None = None):
        return self.network.add_host(name, pool, self.topology.processing_time.get(name[0], 0.0))

    # -- lifecycle ------------------------------------------------------------
    def start(self, settle: float = 0.0) -> "Deployment":
        t = self.topology
        # one node calls the first election; the others join through it
        self.network.hosts[self.ahash_ids[0]].restart("AHash")
        for h in self.librarian_ids:
            try:
                self.librarians[h].ensure_root()
            except ServiceError as exc:
                log.info("root bootstrap deferred: %s", exc)
        for h in self.shepherd_ids:
            self.network.hosts[h].restart("Shepherd")
        if t.periodic:
            n = len(self.ahash_ids)
            for i, h in enumerate(self.ahash_ids):
                self._every(h, "AHash", t.ahash_config.ping_period, "tick", t.ahash_config.ping_period * i / n)
            for i, h in enumerate(self.librarian_ids):
                period = t.librarian_config.check_period
                self._every(h, "Librarian", period, "tick", period * (i + 0.5) / max(1, len(self.librarian_ids)))
            ns = max(1, len(self.shepherd_ids))
            for i, h in enumerate(self.shepherd_ids):
                hb, ck = t.shepherd_config.heartbeat_period, t.shepherd_config.check_period
                self._every(h, "Shepherd", hb, "heartbeat", hb * (i + 1) / ns)
                self._every(h, "Shepherd", ck, "self_check", ck * (i + 1) / ns)
        if settle and self.clock.simulated:
            self.run_for(settle)
        return self

    def _every(self, host: str, service: str, period: float, method: str, offset: float) -> None:
        handle = self.network.hosts[host].every(service, period, method, offset)
        self.periodic.setdefault(host, []).append(handle)

    def stop(self) -> None:
        for handles in self.periodic.values():
            for handle in handles:
                handle.cancel()
        self.periodic.clear()

    def run_for(self, seconds: float) -> None:
        self.clock.run_until(self.clock.now + seconds)

    def kill(self, host: str) -> None:
        self.network.hosts[host].kill(SERVICE_NAMES[host[0]])

    def restart(self, host: str) -> None:
        self.network.hosts[host].restart(SERVICE_NAMES[host[0]])

    def is_up(self, host: str) -> bool:
        return self.network.hosts[host].is_up(SERVICE_NAMES[host[0]])

    def master(self) -> AHashNode | None:
        masters = [n for h, n in self.ahash.items() if n.role == MASTER and self.is_up(h)]
        return max(masters, key=lambda n: n.epoch) if masters else None

    def store(self) -> dict:
        """Committed objects, read straight from the master replica (no messages)."""
        node = self.master() or max((n for h, n in self.ahash.items() if self.is_up(h)), key=lambda n: n.seq)
        return node.store.objects

    def client(self, dn: str = "CN=user", bartender: str | None = None) -> "Client":
        return Client(self, dn, bartender or self.bartender_ids[0])


class Client:
    """A user of the Bartender API, talking over the network like the CLI does."""

    def __init__(self, deployment: Deployment, dn: str, bartender: str):
        self.d = deployment
        self.dn = dn
        self.bartender = deployment.endpoints[bartender]

    def call(self, operation: str, **args):
        return self.d.network.request(self.dn, self.bartender, operation, args)

    def mkdir(self, ln: str, policy: list[str] | None = None) -> dict:
        return self.call("make_collection", ln=ln, policy=policy)

    def stat(self, ln: str) -> dict:
        return self.call("stat", ln=ln)

    def list(self, ln: str) -> dict:
        return self.call("list", ln=ln)

    def put(self, ln: str, data: bytes, needed: int = 1, size: int | None = None) -> dict:
        """Create the entry and upload ``data``; ``size`` may declare a larger logical size."""
        digest = checksum(data)
        ticket = self.call("put_file", ln=ln, size=len(data) if size is None else size, checksum=digest,
                           checksum_type="sha256", needed_replicas=needed)
        state = transfer.upload(self.d.network, ticket["url"], data, self.dn)
        return {**ticket, "state": state}

    def get(self, ln: str) -> bytes | str:
        ticket = self.call("get_file", ln=ln)
        if ticket.get("external"):
            return ticket["url"]
        return transfer.download(self.d.network, ticket["url"], self.dn)

    def rm(self, ln: str) -> dict:
        return self.call("del_file", ln=ln)

    def rmdir(self, ln: str) -> dict:
        return self.call("unmake_collection", ln=ln)

    def move(self, src: str, dst: str) -> dict:
        return self.call("move", src=src, dst=dst)

    def mount(self, ln: str, url: str) -> dict:
        return self.call("mount", ln=ln, url=url)
