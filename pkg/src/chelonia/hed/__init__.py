"""Service hosting: containers, transports, clocks."""

from .clock import RealtimeScheduler, Simulator
from .host import (
    Host,
    RequestEnvelope,
    ServiceEndpoint,
    WorkerPool,
    WorkerPoolConfig,
    current_caller,
    rpc,
)
from .network import LAN, WAN, Network, TransportStats
from .service import Service

__all__ = [
    "Host", "LAN", "Network", "RealtimeScheduler", "RequestEnvelope", "Service",
    "ServiceEndpoint", "Simulator", "TransportStats", "WAN", "WorkerPool",
    "WorkerPoolConfig", "current_caller", "rpc",
]
