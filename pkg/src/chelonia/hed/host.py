"""Service container: hosts services, enforces trust and bounds concurrency."""

from __future__ import annotations

import collections
import contextlib
import contextvars
import functools
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable
from urllib.parse import urlsplit

from .. import codec
from ..errors import (
    DuplicateName,
    QueueFull,
    ServiceError,
    TransportFailure,
    TrustDenied,
    UnknownOperation,
    UnknownTarget,
)

log = logging.getLogger(__name__)

_current: contextvars.ContextVar["RequestEnvelope | None"] = contextvars.ContextVar(
    "current_request", default=None
)


@functools.lru_cache(maxsize=4096)
def _split(url: str):
    return urlsplit(url)


@dataclass(frozen=True)
class ServiceEndpoint:
    url: str
    dn: str

    def __post_init__(self):
        if not self.dn:
            raise ValueError("endpoint DN must be non-empty")

    @property
    def host(self) -> str:
        return _split(self.url).netloc

    @property
    def service(self) -> str:
        return _split(self.url).path.strip("/")

    @property
    def scheme(self) -> str:
        return _split(self.url).scheme


@dataclass
class RequestEnvelope:
    request_id: str
    caller_dn: str
    target: ServiceEndpoint
    operation: str
    payload: bytes
    origin: str = ""  # caller's host name; "" for external clients

    @property
    def payload_size(self) -> int:
        return len(self.payload)


@dataclass
class WorkerPoolConfig:
    max_concurrent: int = 32
    queue_capacity: int = 1024

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.queue_capacity < 0:
            raise ValueError("queue_capacity must be >= 0")


def rpc(fn: Callable | None = None, *, public: bool = False):
    """Mark a service method as remotely callable.

    ``public`` operations are client-facing and skip the inter-service
    trust check; everything else requires the caller's DN on the trust list.
    """

    def mark(f):
        f._rpc_public = public
        return f

    return mark(fn) if fn is not None else mark


def current_request() -> "RequestEnvelope | None":
    return _current.get()


def current_caller() -> str:
    env = _current.get()
    return env.caller_dn if env is not None else ""


class WorkerPool:
    """Bounded thread admission with a FIFO overflow queue."""

    def __init__(self, config: WorkerPoolConfig):
        self.config = config
        self.active = 0
        self._waiting: collections.deque = collections.deque()
        self._cond = threading.Condition()

    @property
    def queued(self) -> int:
        return len(self._waiting)

    @contextlib.contextmanager
    def slot(self):
        with self._cond:
            if self.active >= self.config.max_concurrent or self._waiting:
                if len(self._waiting) >= self.config.queue_capacity:
                    raise QueueFull("worker pool saturated")
                ticket = object()
                self._waiting.append(ticket)
                while self._waiting[0] is not ticket or self.active >= self.config.max_concurrent:
                    self._cond.wait()
                self._waiting.popleft()
            self.active += 1
            self._cond.notify_all()
        try:
            yield
        finally:
            with self._cond:
                self.active -= 1
                self._cond.notify_all()


class VirtualPool:
    """Worker-pool occupancy over virtual time (simulation transport)."""

    def __init__(self, config: WorkerPoolConfig):
        self.config = config
        self.active = 0
        self.queue: collections.deque = collections.deque()
        self.sessions: set[str] = set()  # connections currently holding a worker
        self.max_queued = 0


@dataclass
class _Hosted:
    name: str
    handler: Any
    endpoint: ServiceEndpoint
    trusted: set[str] = field(default_factory=set)
    alive: bool = True


class Host:
    """One service container (one HED instance).

    Services are reached through the owning :class:`~chelonia.hed.network.Network`;
    the host decodes the payload, checks trust, runs the handler inside a
    worker slot and encodes the reply.
    """

    def __init__(self, name: str, network, pool: WorkerPoolConfig | None = None,
                 processing_time: float = 0.0, scheme: str = "sim"):
        self.name = name
        self.network = network
        self.pool_config = pool or WorkerPoolConfig()
        self.pool = WorkerPool(self.pool_config)
        self.vpool = VirtualPool(self.pool_config)
        self.processing_time = processing_time
        self.scheme = scheme
        self.services: dict[str, _Hosted] = {}
        self.alive = True
        self._lock = threading.Lock()

    @property
    def clock(self):
        return self.network.clock

    def register_service(self, name: str, handler, dn: str, trusted=None) -> ServiceEndpoint:
        with self._lock:
            if name in self.services:
                raise DuplicateName(f"service {name!r} already registered on {self.name}")
            endpoint = ServiceEndpoint(f"{self.scheme}://{self.name}/{name}", dn)
            self.services[name] = _Hosted(name, handler, endpoint, set(trusted or ()))
        if hasattr(handler, "attach"):
            handler.attach(self, endpoint)
        return endpoint

    def endpoint(self, name: str) -> ServiceEndpoint:
        return self.services[name].endpoint

    def handler(self, name: str):
        return self.services[name].handler

    def set_trusted(self, name: str, dns) -> None:
        self.services[name].trusted = set(dns)

    def check_trust(self, caller_dn: str, target: ServiceEndpoint) -> bool:
        hosted = self.services.get(target.service)
        if hosted is None:
            return False
        return caller_dn in hosted.trusted

    def is_up(self, name: str) -> bool:
        hosted = self.services.get(name)
        return bool(self.alive and hosted is not None and hosted.alive)

    def kill(self, name: str) -> None:
        hosted = self.services[name]
        hosted.alive = False
        if hasattr(hosted.handler, "on_kill"):
            hosted.handler.on_kill()

    def restart(self, name: str, handler=None) -> None:
        hosted = self.services[name]
        if handler is not None:
            hosted.handler = handler
            if hasattr(handler, "attach"):
                handler.attach(self, hosted.endpoint)
        hosted.alive = True
        if hasattr(hosted.handler, "on_start"):
            hosted.handler.on_start()

    def every(self, name: str, period: float, method: str, offset: float = 0.0):
        """Run ``handler.<method>()`` periodically while the service is up."""

        def tick():
            if not self.is_up(name):
                return
            try:
                getattr(self.services[name].handler, method)()
            except ServiceError as exc:
                log.debug("%s.%s skipped: %s", name, method, exc)

        return self.clock.every(period, tick, offset)

    def dispatch(self, env: RequestEnvelope, *, use_pool: bool = True) -> bytes:
        """Execute one request and return the encoded reply (never raises ServiceError)."""
        hosted = self.services.get(env.target.service)
        if hosted is None or not self.alive:
            return codec.encode(UnknownTarget(f"no service at {env.target.url}").to_wire())
        if not hosted.alive:
            return codec.encode(TransportFailure(f"{env.target.url} is down").to_wire())
        try:
            ctx = self.pool.slot() if use_pool and not self.clock.simulated else contextlib.nullcontext()
            with ctx:
                return codec.encode({"result": self._invoke(hosted, env)})
        except ServiceError as exc:
            return codec.encode(exc.to_wire())

    def _invoke(self, hosted: _Hosted, env: RequestEnvelope):
        handler = hosted.handler
        args = codec.decode(env.payload) if env.payload else {}
        if not isinstance(args, dict):
            raise ServiceError("payload must be a mapping")
        self.clock.advance(self.processing_time)
        token = _current.set(env)
        try:
            if callable(handler) and not hasattr(handler, "attach"):
                # bare dispatch function: handler(operation, args, envelope)
                if not self.check_trust(env.caller_dn, hosted.endpoint):
                    raise TrustDenied(f"{env.caller_dn!r} is not trusted by {hosted.name}")
                return handler(env.operation, args, env)
            method = getattr(handler, env.operation, None)
            if method is None or not hasattr(method, "_rpc_public"):
                raise UnknownOperation(f"{hosted.name} has no operation {env.operation!r}")
            if not method._rpc_public and not self.check_trust(env.caller_dn, hosted.endpoint):
                raise TrustDenied(f"{env.caller_dn!r} is not trusted by {hosted.name}")
            return method(**args)
        finally:
            _current.reset(token)
