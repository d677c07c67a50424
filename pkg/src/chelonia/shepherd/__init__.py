"""Storage nodes: replica bytes, transfer tickets and the repair protocol."""

from .backend import BackendHandle, FileBackend, MemoryBackend, checksum
from .service import ReplicaRecord, Shepherd, ShepherdConfig, TransferTicket

__all__ = [
    "BackendHandle", "FileBackend", "MemoryBackend", "ReplicaRecord", "Shepherd",
    "ShepherdConfig", "TransferTicket", "checksum",
]
