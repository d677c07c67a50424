"""Client-side access to a set of A-Hash replicas.

Reads go to one sticky replica; writes go to the master, found through the
``not-master`` hint.  When a replica stops answering, the node list is
re-read from any replica that still does and the next one is tried.
"""

from __future__ import annotations

import logging
import threading

from ..errors import (
    AHashUnavailable,
    NoMajority,
    NoMaster,
    NotMaster,
    TransportFailure,
    UnknownTarget,
)
from ..hed.host import ServiceEndpoint

log = logging.getLogger(__name__)

_UNREACHABLE = (TransportFailure, UnknownTarget)


class AHashClient:
    def __init__(self, caller, seeds: list[ServiceEndpoint]):
        if not seeds:
            raise ValueError("need at least one A-Hash endpoint")
        self.caller = caller  # a Service: provides .call(endpoint, op, **args)
        self.nodes: list[ServiceEndpoint] = list(seeds)
        self.reader: ServiceEndpoint = self.nodes[0]
        self.master: ServiceEndpoint | None = None
        self.refreshes = 0
        self._lock = threading.Lock()

    def refresh(self, skip: set[str] = frozenset()) -> bool:
        """Re-read the node list from the first replica that answers."""
        for ep in list(self.nodes):
            if ep.url in skip:
                continue
            try:
                listing = self.caller.call(ep, "get_node_list")
            except _UNREACHABLE:
                continue
            with self._lock:
                self.nodes = [ServiceEndpoint(d["url"], d["dn"]) for d in listing] or self.nodes
                self.refreshes += 1
            return True
        return False

    def _candidates(self, first: ServiceEndpoint | None, failed: set[str]) -> list[ServiceEndpoint]:
        with self._lock:
            order = ([first] if first is not None else []) + self.nodes
        seen, out = set(), []
        for ep in order:
            if ep.url not in seen and ep.url not in failed:
                seen.add(ep.url)
                out.append(ep)
        return out

    def get(self, ids: list[str]) -> dict[str, dict]:
        failed: set[str] = set()
        for _ in range(2):
            for ep in self._candidates(self.reader, failed):
                try:
                    result = self.caller.call(ep, "get", ids=list(ids))
                except _UNREACHABLE:
                    failed.add(ep.url)
                    continue
                self.reader = ep
                return result
            if not self.refresh(failed):
                break
        raise AHashUnavailable("no A-Hash replica answered a read")

    def change(self, requests: list[dict], atomic: bool = False) -> dict[str, str]:
        """Send one batch to the master; returns change id -> result."""
        failed: set[str] = set()
        refreshed = False
        target = self.master
        while True:
            if target is None:
                options = self._candidates(None, failed)
                if not options:
                    if refreshed or not self.refresh(failed):
                        raise AHashUnavailable("no A-Hash master reachable")
                    refreshed = True
                    continue
                target = options[0]
            try:
                reply = self.caller.call(target, "change", requests=requests, atomic=atomic)
            except NotMaster as exc:
                failed.add(target.url)
                hint = exc.details.get("master")
                if hint and hint not in failed:
                    target = ServiceEndpoint(hint, exc.details.get("master_dn") or "CN=unknown")
                else:
                    target = None
                continue
            except (NoMaster, NoMajority):
                failed.add(target.url)
                self.master = None
                target = None
                continue
            except _UNREACHABLE:
                failed.add(target.url)
                self.master = None
                target = None
                continue
            self.master = target
            return reply["results"]
