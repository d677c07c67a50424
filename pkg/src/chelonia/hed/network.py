"""Message routing between hosts, with message accounting.

Every request and every reply is one message.  Under the simulation clock
each message costs ``latency + size / bandwidth`` virtual seconds.
"""

from __future__ import annotations

import itertools
import logging
import random
import threading
from dataclasses import dataclass, replace
from typing import Callable

from .. import codec
from ..errors import NotSimulationTransport, QueueFull, ServiceError, TransportFailure, UnknownTarget
from .clock import Simulator
from .host import Host, RequestEnvelope, ServiceEndpoint, WorkerPoolConfig

log = logging.getLogger(__name__)

LAN = {"latency": 0.0005, "bandwidth": 12.5e6}
WAN = {"latency": 0.015, "bandwidth": 2.5e6}


@dataclass
class TransportStats:
    message_count: int = 0
    bytes_sent: int = 0
    simulated_latency: float = 0.0

    def snapshot(self) -> "TransportStats":
        return replace(self)

    def __sub__(self, other: "TransportStats") -> "TransportStats":
        return TransportStats(self.message_count - other.message_count,
                              self.bytes_sent - other.bytes_sent, self.simulated_latency)


def _decode_reply(reply: bytes):
    data = codec.decode(reply)
    if "error" in data:
        raise ServiceError.from_wire(data)
    return data["result"]


class Network:
    """Routes envelopes to hosts; owns the clock and the transport counters."""

    def __init__(self, clock=None, *, latency: float = 0.0, bandwidth: float | None = None,
                 seed: int | None = None):
        self.clock = clock if clock is not None else Simulator()
        # seeded for reproducible simulations; OS entropy otherwise
        self.rng = random.Random(seed) if seed is not None else random.SystemRandom()
        self.hosts: dict[str, Host] = {}
        self.stats = TransportStats(simulated_latency=latency)
        self.latency = latency
        self.bandwidth = bandwidth
        self.partitions: list[set[str]] | None = None
        self.taps: list[Callable[[RequestEnvelope, bytes], None]] = []
        self.remotes: dict[str, object] = {}  # scheme -> remote transport (sockets)
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    # -- topology ---------------------------------------------------------
    def add_host(self, name: str, pool: WorkerPoolConfig | None = None,
                 processing_time: float = 0.0) -> Host:
        if name in self.hosts:
            raise ValueError(f"host {name!r} exists")
        host = Host(name, self, pool, processing_time)
        self.hosts[name] = host
        return host

    def set_simulated_network(self, latency: float, bandwidth: float | None) -> None:
        if not self.clock.simulated:
            raise NotSimulationTransport("latency/bandwidth apply to the simulation transport only")
        self.latency = latency
        self.bandwidth = bandwidth
        self.stats.simulated_latency = latency

    def partition(self, *groups) -> None:
        self.partitions = [set(g) for g in groups]

    def heal(self) -> None:
        self.partitions = None

    def reachable(self, origin: str, host: str) -> bool:
        if self.partitions is None or not origin or origin == host:
            return True
        return any(origin in g and host in g for g in self.partitions)

    def reset_stats(self) -> None:
        self.stats = TransportStats(simulated_latency=self.latency)

    # -- accounting -------------------------------------------------------
    def message_delay(self, size: int) -> float:
        delay = self.latency
        if self.bandwidth:
            delay += size / self.bandwidth
        return delay

    def _send(self, size: int) -> None:
        with self._lock:
            self.stats.message_count += 1
            self.stats.bytes_sent += size
        if self.clock.simulated:
            self.clock.advance(self.message_delay(size))

    def envelope(self, caller_dn: str, target: ServiceEndpoint, operation: str,
                 args: dict | None = None, origin: str = "") -> RequestEnvelope:
        rid = f"{origin or 'client'}-{next(self._ids)}"
        return RequestEnvelope(rid, caller_dn, target, operation, codec.encode(args or {}), origin)

    def _resolve(self, env: RequestEnvelope) -> Host:
        host = self.hosts.get(env.target.host)
        if host is None:
            raise UnknownTarget(f"no host for {env.target.url}")
        if not self.reachable(env.origin, host.name):
            raise TransportFailure(f"{env.target.url} unreachable from {env.origin}")
        if not host.is_up(env.target.service):
            if host.alive and env.target.service not in host.services:
                raise UnknownTarget(f"no service at {env.target.url}")
            raise TransportFailure(f"{env.target.url} is down")
        return host

    # -- synchronous calls -------------------------------------------------
    def call_raw(self, env: RequestEnvelope) -> bytes:
        remote = self.remotes.get(env.target.scheme)
        if remote is not None:
            return remote.call_raw(env)
        self._send(env.payload_size)
        host = self._resolve(env)
        reply = host.dispatch(env)
        self._send(len(reply))
        for tap in self.taps:
            tap(env, reply)
        return reply

    def call(self, env: RequestEnvelope):
        return _decode_reply(self.call_raw(env))

    def request(self, caller_dn: str, target: ServiceEndpoint, operation: str,
                args: dict | None = None, origin: str = ""):
        return self.call(self.envelope(caller_dn, target, operation, args, origin))

    # -- asynchronous calls through the worker pool (simulation only) ------
    def submit(self, env: RequestEnvelope, on_done: Callable, session: str | None = None) -> None:
        """Deliver ``env`` in virtual time; ``on_done(result, error)`` gets the reply.

        The target host admits at most ``max_concurrent`` requests at once; the
        rest wait in FIFO order, and arrivals beyond ``queue_capacity`` are
        answered with ``queue-full``.  A request that names a ``session`` (one
        client connection) keeps its worker until :meth:`close_session`, the
        way a threaded server serves a kept-alive connection.
        """
        clock = self.clock
        if not clock.simulated:
            raise NotSimulationTransport("submit() needs the simulation transport")
        self._send_count_only(env.payload_size)
        clock.schedule(self.message_delay(env.payload_size), self._arrive, env, on_done, session)

    def close_session(self, host_name: str, session: str) -> None:
        host = self.hosts[host_name]
        pool = host.vpool
        if session in pool.sessions:
            pool.sessions.discard(session)
            pool.active -= 1
            self._dequeue(host)
        else:
            pool.queue = type(pool.queue)(item for item in pool.queue if item[2] != session)

    def _send_count_only(self, size: int) -> None:
        self.stats.message_count += 1
        self.stats.bytes_sent += size

    def _arrive(self, env: RequestEnvelope, on_done: Callable, session: str | None = None) -> None:
        try:
            host = self._resolve(env)
        except ServiceError as exc:
            on_done(None, exc)
            return
        pool = host.vpool
        if session is not None and session in pool.sessions:
            self._start(host, env, on_done, session)
        elif pool.active < pool.config.max_concurrent and not pool.queue:
            pool.active += 1
            if session is not None:
                pool.sessions.add(session)
            self._start(host, env, on_done, session)
        elif len(pool.queue) >= pool.config.queue_capacity:
            self._respond(env, codec.encode(QueueFull("worker pool saturated").to_wire()), on_done)
        else:
            pool.queue.append((env, on_done, session))
            pool.max_queued = max(pool.max_queued, len(pool.queue))

    def _start(self, host: Host, env: RequestEnvelope, on_done: Callable, session: str | None) -> None:
        reply = host.dispatch(env, use_pool=False)
        # the handler's nested work advanced the clock; the worker is busy until now
        self.clock.schedule(0.0, self._finish, host, env, reply, on_done, session)

    def _finish(self, host: Host, env: RequestEnvelope, reply: bytes, on_done: Callable,
                session: str | None) -> None:
        self._respond(env, reply, on_done)
        if session is None or session not in host.vpool.sessions:
            host.vpool.active -= 1
            self._dequeue(host)

    def _dequeue(self, host: Host) -> None:
        pool = host.vpool
        while pool.queue and pool.active < pool.config.max_concurrent:
            env, on_done, session = pool.queue.popleft()
            pool.active += 1
            if session is not None:
                pool.sessions.add(session)
            # each start is its own event so their processing overlaps in virtual time
            self.clock.schedule(0.0, self._start, host, env, on_done, session)

    def _respond(self, env: RequestEnvelope, reply: bytes, on_done: Callable) -> None:
        self._send_count_only(len(reply))
        for tap in self.taps:
            tap(env, reply)

        def deliver():
            try:
                result = _decode_reply(reply)
            except ServiceError as exc:
                on_done(None, exc)
                return
            on_done(result, None)

        self.clock.schedule(self.message_delay(len(reply)), deliver)
