"""TCP transport: length-prefixed frames, one connection per client.

Frame = 4-byte big-endian body length + codec-encoded body.  Requests carry
the caller DN and, when the server has a secrets table, the shared secret
registered for that DN.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading

from .. import codec
from ..errors import TransportFailure, TrustDenied
from .host import Host, RequestEnvelope, ServiceEndpoint

log = logging.getLogger(__name__)

_HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


def send_frame(sock: socket.socket, body: bytes) -> None:
    sock.sendall(_HEADER.pack(len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes | None:
    head = sock.recv(_HEADER.size, socket.MSG_WAITALL)
    if not head:
        return None
    if len(head) < _HEADER.size:
        head += _recv_exact(sock, _HEADER.size - len(head))
    (length,) = _HEADER.unpack(head)
    if length > MAX_FRAME:
        raise ConnectionError(f"frame of {length} bytes exceeds limit")
    return _recv_exact(sock, length)


class SocketServer:
    """Serve one :class:`Host` over TCP."""

    def __init__(self, host: Host, address=("127.0.0.1", 0), secrets: dict[str, str] | None = None):
        self.host = host
        self.secrets = secrets
        outer = self

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self):
                while True:
                    try:
                        body = recv_frame(self.request)
                    except (ConnectionError, OSError):
                        return
                    if body is None:
                        return
                    send_frame(self.request, outer._handle(body))

        class _Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = _Server(address, _Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def authority(self) -> str:
        host, port = self.address
        return f"{host}:{port}"

    def _handle(self, body: bytes) -> bytes:
        msg = codec.decode(body)
        env = RequestEnvelope(
            request_id=msg["id"],
            caller_dn=msg["dn"],
            target=ServiceEndpoint(msg["target"], msg["target_dn"]),
            operation=msg["op"],
            payload=msg["payload"],
            origin=msg.get("origin", ""),
        )
        if self.secrets is not None and self.secrets.get(env.caller_dn) != msg.get("secret"):
            return codec.encode(TrustDenied(f"bad credentials for {env.caller_dn!r}").to_wire())
        return self.host.dispatch(env)

    def start(self) -> "SocketServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True,
                                        name=f"tcp-{self.authority}")
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class SocketTransport:
    """Client side; install with ``network.remotes["tcp"] = SocketTransport(network)``."""

    def __init__(self, network, secrets: dict[str, str] | None = None, timeout: float = 30.0):
        self.network = network
        self.secrets = secrets or {}
        self.timeout = timeout
        self._conns: dict[str, tuple[socket.socket, threading.Lock]] = {}
        self._lock = threading.Lock()

    def _conn(self, authority: str):
        with self._lock:
            if authority not in self._conns:
                host, _, port = authority.rpartition(":")
                try:
                    sock = socket.create_connection((host, int(port)), timeout=self.timeout)
                except OSError as exc:
                    raise TransportFailure(f"cannot connect to {authority}: {exc}") from exc
                self._conns[authority] = (sock, threading.Lock())
            return self._conns[authority]

    def _drop(self, authority: str) -> None:
        with self._lock:
            conn = self._conns.pop(authority, None)
        if conn is not None:
            conn[0].close()

    def call_raw(self, env: RequestEnvelope) -> bytes:
        body = codec.encode({
            "id": env.request_id,
            "dn": env.caller_dn,
            "secret": self.secrets.get(env.caller_dn, ""),
            "target": env.target.url,
            "target_dn": env.target.dn,
            "op": env.operation,
            "payload": env.payload,
            "origin": env.origin,
        })
        authority = env.target.host
        sock, lock = self._conn(authority)
        stats = self.network.stats
        with lock:
            try:
                send_frame(sock, body)
                stats.message_count += 1
                stats.bytes_sent += env.payload_size
                reply = recv_frame(sock)
            except OSError as exc:
                self._drop(authority)
                raise TransportFailure(f"{authority}: {exc}") from exc
        if reply is None:
            self._drop(authority)
            raise TransportFailure(f"{authority} closed the connection")
        stats.message_count += 1
        stats.bytes_sent += len(reply)
        return reply

    def close(self) -> None:
        with self._lock:
            for sock, _ in self._conns.values():
                sock.close()
            self._conns.clear()
