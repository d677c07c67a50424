"""Common plumbing for hosted services."""

from __future__ import annotations

import uuid

from ..errors import TransportFailure, UnknownTarget
from .host import ServiceEndpoint


class Service:
    """Base class: gives a hosted service its clock, RNG and outbound calls."""

    host = None
    endpoint: ServiceEndpoint | None = None

    def attach(self, host, endpoint: ServiceEndpoint) -> None:
        self.host = host
        self.endpoint = endpoint

    @property
    def network(self):
        return self.host.network

    @property
    def clock(self):
        return self.host.clock

    def now(self) -> float:
        return self.clock.time()

    def call(self, target: ServiceEndpoint, operation: str, **args):
        return self.network.request(self.endpoint.dn, target, operation, args, origin=self.host.name)

    def new_guid(self) -> str:
        return str(uuid.UUID(int=self.network.rng.getrandbits(128), version=4))

    def new_token(self, nbytes: int = 24) -> str:
        return f"{self.network.rng.getrandbits(8 * nbytes):0{2 * nbytes}x}"

    def call_any(self, targets, operation: str, unavailable=None, **args):
        """Call the first of ``targets`` that is reachable."""
        last = None
        for target in targets:
            try:
                return self.call(target, operation, **args)
            except (TransportFailure, UnknownTarget) as exc:
                last = exc
        raise (unavailable or TransportFailure)(f"no endpoint reachable for {operation}: {last}")
