"""Declarative scenarios: an INI file with topology, parameters and a fault schedule.

Example::

    [scenario]
    kind = replication
    seed = 7

    [topology]
    ahash = 2
    shepherds = 5
    profile = lan

    [params]
    files = 10

    [schedule]
    events =
        300 kill holder:8
        480 restart last

Schedule targets are host names (``s3``, ``a1``) or symbolic:
``master`` (current A-Hash master), ``ahash-client`` (an up non-master
A-Hash replica), ``holder:N`` (a shepherd with exactly N ALIVE replicas),
``last`` (the most recently killed host).
"""

from __future__ import annotations

import configparser
import logging
import shlex
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..ahash import MASTER, AHashConfig
from ..errors import ServiceError
from ..hed import LAN, WAN, WorkerPoolConfig
from ..librarian import LibrarianConfig
from ..metadata import ALIVE
from ..shepherd import ShepherdConfig
from .deployment import Deployment, Topology
from .fsck import StateSample, take_sample

log = logging.getLogger(__name__)

EVENTS = {"kill", "restart", "corrupt", "op", "sample"}
PROFILES = {"lan": LAN, "wan": WAN, "none": {"latency": 0.0, "bandwidth": None}}


@dataclass
class Event:
    time: float
    action: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if self.action not in EVENTS:
            raise ValueError(f"unknown event {self.action!r}")


@dataclass
class Scenario:
    name: str
    kind: str
    seed: int = 0
    topology: dict[str, str] = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)
    schedule: list[Event] = field(default_factory=list)

    def param(self, key: str, default, cast=None):
        if key not in self.params:
            return default
        cast = cast or type(default)
        return cast(self.params[key])

    def build_topology(self) -> Topology:
        return build_topology(self.topology)


def parse_events(text: str) -> list[Event]:
    events = []
    for line in text.strip().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = shlex.split(line)
        events.append(Event(float(parts[0]), parts[1], tuple(parts[2:])))
    return sorted(events, key=lambda e: e.time)


def builtin_path(name: str) -> Path:
    return Path(str(resources.files(__package__) / "scenarios" / f"{name}.ini"))


def builtin_names() -> list[str]:
    folder = resources.files(__package__) / "scenarios"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".ini"))


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a path, or by name from the bundled scenarios."""
    path = Path(source)
    if not path.exists():
        path = builtin_path(str(source))
        if not path.exists():
            raise FileNotFoundError(f"no scenario {source!r}; bundled: {', '.join(builtin_names())}")
    parser = configparser.ConfigParser()
    parser.read(path)
    head = parser["scenario"] if parser.has_section("scenario") else {}
    return Scenario(
        name=head.get("name", path.stem),
        kind=head.get("kind", path.stem),
        seed=int(head.get("seed", "0")),
        topology=dict(parser["topology"]) if parser.has_section("topology") else {},
        params=dict(parser["params"]) if parser.has_section("params") else {},
        schedule=parse_events(parser.get("schedule", "events", fallback="")),
    )


def build_topology(spec: dict[str, str]) -> Topology:
    g = lambda k, d, cast=int: cast(spec[k]) if k in spec else d  # noqa: E731
    profile = PROFILES[spec.get("profile", "lan")]
    ahash = AHashConfig(master_timeout=g("master_timeout", 10.0, float), ping_period=g("ping_period", 1.0, float))
    lib = LibrarianConfig(heartbeat_period=g("heartbeat_period", 60.0, float), grace=g("grace", 60.0, float),
                          check_period=g("librarian_check_period", 60.0, float))
    shep = ShepherdConfig(heartbeat_period=g("heartbeat_period", 60.0, float),
                          check_period=g("check_period", 60.0, float), ticket_ttl=g("ticket_ttl", 300.0, float))
    processing = {k[len("processing_"):]: float(v) for k, v in spec.items() if k.startswith("processing_")}
    return Topology(
        ahash=g("ahash", 1), librarians=g("librarians", 1), bartenders=g("bartenders", 1),
        shepherds=g("shepherds", 0), shepherd_capacity=g("shepherd_capacity", 10 ** 12),
        latency=profile["latency"], bandwidth=profile["bandwidth"],
        ahash_config=ahash, librarian_config=lib, shepherd_config=shep,
        bartender_pool=WorkerPoolConfig(g("bartender_threads", 10), g("bartender_queue", 100)),
        processing_time=processing,
    )


class Driver:
    """Plays a schedule against a deployment and records samples and events."""

    def __init__(self, deployment: Deployment, client=None):
        self.d = deployment
        self.client = client or deployment.client()
        self.samples: list[StateSample] = []
        self.events: list[dict] = []
        self.killed: list[str] = []
        self.rng = deployment.network.rng

    def schedule(self, events: list[Event], offset: float = 0.0) -> None:
        for ev in events:
            self.d.clock.at(offset + ev.time, self.fire, ev)

    def sample_every(self, period: float, until: float, start: float = 0.0) -> None:
        t = start
        while t <= until + 1e-9:
            self.d.clock.at(t, self.sample)
            t += period

    def sample(self) -> StateSample:
        s = take_sample(self.d.clock.now, self.d.store(), self.d.network.stats)
        self.samples.append(s)
        return s

    def note(self, action: str, target: str = "", detail: str = "") -> None:
        self.events.append({"time": round(self.d.clock.now, 6), "event": action, "target": target,
                            "detail": detail})

    def resolve(self, target: str) -> str:
        d = self.d
        if target == "master":
            m = d.master()
            if m is None:
                raise LookupError("no master to target")
            return m.node_id
        if target == "ahash-client":
            up = [h for h in d.ahash_ids if d.is_up(h) and d.ahash[h].role != MASTER]
            if not up:
                raise LookupError("no client A-Hash replica is up")
            return up[0]
        if target == "last":
            if not self.killed:
                raise LookupError("nothing was killed")
            return self.killed[-1]
        if target.startswith("holder:"):
            want = int(target.split(":", 1)[1])
            for h in d.shepherd_ids:
                alive = [r for r in d.shepherds[h].replicas.values() if r.state == ALIVE]
                if len(alive) == want and d.is_up(h):
                    return h
            raise LookupError(f"no shepherd holds exactly {want} ALIVE replicas")
        return target

    def fire(self, ev: Event) -> None:
        try:
            getattr(self, f"_do_{ev.action}")(*ev.args)
        except LookupError as exc:
            self.note(ev.action, " ".join(ev.args), f"skipped: {exc}")

    def _do_sample(self) -> None:
        self.sample()

    def _do_kill(self, target: str) -> None:
        host = self.resolve(target)
        self.d.kill(host)
        self.killed.append(host)
        self.note("kill", host, target)

    def _do_restart(self, target: str) -> None:
        host = self.resolve(target)
        self.d.restart(host)
        self.note("restart", host, target)

    def _do_corrupt(self, target: str, count: str = "1") -> None:
        host = self.resolve(target)
        shep = self.d.shepherds[host]
        refs = sorted(r.reference_id for r in shep.replicas.values() if r.state == ALIVE)
        picked = self.rng.sample(refs, min(int(count), len(refs)))
        for ref in picked:
            shep.backend.corrupt(ref)
        self.note("corrupt", host, ",".join(picked))

    def _do_op(self, op: str, *args: str) -> None:
        c = self.client
        try:
            if op == "put":
                size = int(args[1]) if len(args) > 1 else 1024
                needed = int(args[2]) if len(args) > 2 else 1
                c.put(args[0], self.rng.randbytes(size), needed=needed)
            elif op == "mkdir":
                c.mkdir(args[0])
            elif op == "rm":
                c.rm(args[0])
            elif op == "rmdir":
                c.rmdir(args[0])
            elif op == "get":
                c.get(args[0])
            elif op == "list":
                c.list(args[0])
            else:
                raise ValueError(f"unknown client op {op!r}")
        except ServiceError as exc:
            self.note("op", " ".join((op,) + args), f"failed: {exc.code}")
            return
        self.note("op", " ".join((op,) + args), "ok")
