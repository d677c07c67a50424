"""Byte stores behind a shepherd.

A backend only keeps bytes under a reference ID.  Sizes used for capacity
accounting are declared by the shepherd, so a simulated "114 MB" replica
can be stored as a few bytes of generated content.
"""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from ..errors import BackendFailure

DEFAULT_CHECKSUM = "sha256"


def checksum(data: bytes, algorithm: str = DEFAULT_CHECKSUM) -> str:
    try:
        return hashlib.new(algorithm, data).hexdigest()
    except ValueError as exc:
        raise BackendFailure(f"unknown checksum type {algorithm!r}") from exc


@dataclass
class BackendHandle:
    backend_name: str
    capacity: int
    used: int


class MemoryBackend:
    name = "memory"

    def __init__(self):
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def write(self, ref: str, data: bytes) -> None:
        with self._lock:
            self._blobs[ref] = bytes(data)

    def read(self, ref: str) -> bytes:
        with self._lock:
            try:
                return self._blobs[ref]
            except KeyError:
                raise BackendFailure(f"no bytes stored for {ref}") from None

    def delete(self, ref: str) -> None:
        with self._lock:
            self._blobs.pop(ref, None)

    def exists(self, ref: str) -> bool:
        return ref in self._blobs

    def corrupt(self, ref: str, offset: int = 0) -> None:
        """Flip one bit (fault injection)."""
        with self._lock:
            blob = bytearray(self._blobs[ref] or b"\0")
            blob[offset % len(blob)] ^= 0x01
            self._blobs[ref] = bytes(blob)


class FileBackend:
    """One file per replica under ``data_dir``; writes go through a temp file."""

    name = "filesystem"

    def __init__(self, data_dir):
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, ref: str) -> Path:
        if not ref or "/" in ref or ref.startswith("."):
            raise BackendFailure(f"bad reference {ref!r}")
        return self.dir / ref

    def write(self, ref: str, data: bytes) -> None:
        path = self._path(ref)
        tmp = path.with_name(f".{ref}.tmp")
        try:
            with tmp.open("wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def read(self, ref: str) -> bytes:
        try:
            return self._path(ref).read_bytes()
        except OSError as exc:
            raise BackendFailure(str(exc)) from exc

    def delete(self, ref: str) -> None:
        try:
            self._path(ref).unlink()
        except FileNotFoundError:
            pass

    def exists(self, ref: str) -> bool:
        return self._path(ref).exists()

    def corrupt(self, ref: str, offset: int = 0) -> None:
        blob = bytearray(self.read(ref) or b"\0")
        blob[offset % len(blob)] ^= 0x01
        self._path(ref).write_bytes(bytes(blob))
