"""INI configuration for the HTTP server and the command-line client.

Server file::

    [server]
    host = 127.0.0.1
    port = 8080
    public_url = http://127.0.0.1:8080
    data_dir = ./chelonia-data

    [topology]
    ahash = 3
    shepherds = 3
    heartbeat_period = 60

Client file (found through ``$CHELONIA_CONFIG``, else ``~/.chelonia.ini``)::

    [client]
    bartenders = http://127.0.0.1:8080, http://127.0.0.1:8081
    needed_replicas = 2
    dn = CN=me
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .harness.deployment import Topology
from .harness.scenario import build_topology

CONFIG_ENV = "CHELONIA_CONFIG"
DEFAULT_CLIENT_CONFIG = Path.home() / ".chelonia.ini"


class ConfigError(ValueError):
    pass


@dataclass
class ClientConfig:
    bartender_urls: list[str]
    needed_replicas: int = 1
    identity_dn: str = "CN=anonymous"
    timeout: float = 30.0
    attempts: int = 5
    backoff: float = 0.5

    def __post_init__(self):
        if not self.bartender_urls:
            raise ConfigError("at least one bartender URL is required")
        if self.needed_replicas < 1:
            raise ConfigError("needed_replicas must be at least 1")
        if self.attempts < 1:
            raise ConfigError("attempts must be at least 1")


@dataclass
class ServerConfig:
    topology: Topology = field(default_factory=lambda: Topology(shepherds=1))
    host: str = "127.0.0.1"
    port: int = 8080
    public_url: str = ""
    seed: int | None = None

    def __post_init__(self):
        if not self.public_url:
            self.public_url = f"http://{self.host}:{self.port}"
        if self.topology.turl_base is None:
            self.topology.turl_base = self.transfer_base()

    def transfer_base(self) -> str:
        return f"{self.public_url.rstrip('/')}/transfer/{{host}}"


def _read(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return parser


def load_client_config(path=None) -> ClientConfig:
    path = path or os.environ.get(CONFIG_ENV) or DEFAULT_CLIENT_CONFIG
    parser = _read(path)
    if not parser.has_section("client"):
        raise ConfigError(f"{path}: missing [client] section")
    section = parser["client"]
    urls = [u.strip() for u in section.get("bartenders", "").replace("\n", ",").split(",") if u.strip()]
    try:
        return ClientConfig(
            bartender_urls=urls,
            needed_replicas=section.getint("needed_replicas", 1),
            identity_dn=section.get("dn", "CN=anonymous"),
            timeout=section.getfloat("timeout", 30.0),
            attempts=section.getint("attempts", 5),
            backoff=section.getfloat("backoff", 0.5),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_server_config(path) -> ServerConfig:
    parser = _read(path)
    server = parser["server"] if parser.has_section("server") else {}
    spec = dict(parser["topology"]) if parser.has_section("topology") else {}
    spec.setdefault("shepherds", "1")
    spec.setdefault("profile", "none")
    topology = build_topology(spec)
    host, port = server.get("host", "127.0.0.1"), int(server.get("port", "8080"))
    public = server.get("public_url", "") or f"http://{host}:{port}"
    topology.data_dir = server.get("data_dir") or None
    seed = server.get("seed")
    return ServerConfig(topology, host, port, public, int(seed) if seed else None)
