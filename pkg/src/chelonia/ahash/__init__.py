"""Replicated metadata store."""

from .node import CANDIDATE, CLIENT, MASTER, NODE_LIST, AHashConfig, AHashNode
from .store import (
    APPLIED,
    CONDITION_FAILED,
    FAILED,
    ChangeRequest,
    Condition,
    FileStorage,
    MemoryStorage,
    ObjectStore,
    change,
)

__all__ = [
    "AHashConfig", "AHashNode", "APPLIED", "CANDIDATE", "CLIENT", "CONDITION_FAILED",
    "ChangeRequest", "Condition", "FAILED", "FileStorage", "MASTER", "MemoryStorage",
    "NODE_LIST", "ObjectStore", "change",
]
