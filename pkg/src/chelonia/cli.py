"""``chelonia``: the command-line client for the Bartender HTTP API.

Exit codes: 0 success, 1 user error (bad path, permissions, usage),
2 system error (service unavailable, transfer failure).  Errors are printed
to stderr as ``error: <code>: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import shutil
import sys
import time
from pathlib import Path
from urllib.parse import urlsplit

import httpx

from .config import ClientConfig, ConfigError, load_client_config
from .errors import BartenderUnavailable, ServiceError, is_user_error

log = logging.getLogger(__name__)

IDENTITY_HEADER = "X-Chelonia-DN"
# transient conditions worth another attempt after a pause
RETRYABLE = frozenset({"queue-full", "ahash-unavailable", "no-master", "librarian-unavailable"})
CHUNK = 1 << 20


class ChecksumMismatch(ServiceError):
    code = "checksum-mismatch"


class TransferFailed(ServiceError):
    code = "transfer-failed"


def file_checksum(path: Path) -> tuple[str, int]:
    digest, size = hashlib.sha256(), 0
    with path.open("rb") as fh:
        while chunk := fh.read(CHUNK):
            digest.update(chunk)
            size += len(chunk)
    return digest.hexdigest(), size


class BartenderClient:
    """Calls a Bartender over HTTP, failing over between configured URLs."""

    def __init__(self, config: ClientConfig, http: httpx.Client | None = None, sleep=time.sleep):
        self.config = config
        self.http = http or httpx.Client(timeout=config.timeout)
        self.sleep = sleep
        self.urls = list(config.bartender_urls)
        self.retries = 0

    @property
    def headers(self) -> dict[str, str]:
        return {IDENTITY_HEADER: self.config.identity_dn}

    def call(self, operation: str, **args):
        last: ServiceError | None = None
        for attempt in range(self.config.attempts):
            if attempt:
                self.retries += 1
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            for url in list(self.urls):
                try:
                    reply = self.http.post(f"{url.rstrip('/')}/bartender/{operation}", json=args,
                                           headers=self.headers)
                except httpx.TransportError as exc:
                    log.info("bartender %s unreachable: %s", url, exc)
                    last = BartenderUnavailable(f"{url} unreachable")
                    continue
                # prefer the URL that answered
                self.urls.remove(url)
                self.urls.insert(0, url)
                if reply.status_code == 200:
                    return reply.json()["result"]
                last = _error_from(reply)
                if last.code not in RETRYABLE:
                    raise last
                break
        raise last or BartenderUnavailable("no bartender configured")

    def upload(self, url: str, path: Path) -> str:
        with path.open("rb") as fh:
            reply = self._transfer("PUT", url, content=fh)
        return reply.json()["state"]

    def download(self, url: str, dest, checksum: str | None = None) -> int:
        """Stream ``url`` into the binary file object ``dest``; verifies the checksum."""
        digest, size = hashlib.sha256(), 0
        try:
            with self.http.stream("GET", url) as reply:
                if reply.status_code != 200:
                    reply.read()
                    raise _error_from(reply)
                for chunk in reply.iter_bytes(CHUNK):
                    digest.update(chunk)
                    dest.write(chunk)
                    size += len(chunk)
        except httpx.TransportError as exc:
            raise TransferFailed(f"download from {url} failed: {exc}") from exc
        if checksum and digest.hexdigest() != checksum:
            raise ChecksumMismatch(f"downloaded bytes do not match checksum {checksum}")
        return size

    def _transfer(self, method: str, url: str, **kwargs) -> httpx.Response:
        try:
            reply = self.http.request(method, url, **kwargs)
        except httpx.TransportError as exc:
            raise TransferFailed(f"{method} {url} failed: {exc}") from exc
        if reply.status_code != 200:
            raise _error_from(reply)
        return reply

    # -- commands -------------------------------------------------------------
    def put(self, local: Path, ln: str, needed: int | None = None) -> dict:
        digest, size = file_checksum(local)
        ticket = self.call("put_file", ln=ln, size=size, checksum=digest, checksum_type="sha256",
                           needed_replicas=needed or self.config.needed_replicas)
        state = self.upload(ticket["url"], local)
        return {"guid": ticket["guid"], "state": state, "size": size}

    def get(self, ln: str, dest, handlers: dict | None = None) -> dict:
        ticket = self.call("get_file", ln=ln)
        if ticket.get("external"):
            handler = (handlers if handlers is not None else self.handlers()).get(urlsplit(ticket["url"]).scheme)
            if handler is None:
                return {"external": ticket["url"], "size": None}
            return {"external": ticket["url"], "size": handler(ticket["url"], dest)}
        return {"size": self.download(ticket["url"], dest, ticket.get("checksum"))}

    def handlers(self) -> dict:
        def http_get(url: str, dest) -> int:
            return self.download(url, dest)

        def file_get(url: str, dest) -> int:
            with open(urlsplit(url).path, "rb") as src:
                before = dest.tell() if dest.seekable() else 0
                shutil.copyfileobj(src, dest, CHUNK)
                return (dest.tell() - before) if dest.seekable() else 0

        return {"http": http_get, "https": http_get, "file": file_get}


def _error_from(reply: httpx.Response) -> ServiceError:
    try:
        body = reply.json()
    except ValueError:
        body = {}
    if not isinstance(body, dict) or "error" not in body:
        return TransferFailed(f"HTTP {reply.status_code}")
    return ServiceError.from_wire(body)


def _flatten(value, prefix: str = "") -> list[tuple[str, str]]:
    if isinstance(value, dict):
        out = []
        for key in sorted(value):
            out += _flatten(value[key], f"{prefix}.{key}" if prefix else key)
        return out
    return [(prefix, str(value))]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are user errors
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chelonia", description="Client for a chelonia storage cloud.")
    parser.add_argument("--config", help="client INI file (default: $CHELONIA_CONFIG or ~/.chelonia.ini)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("put", help="upload a local file")
    p.add_argument("local")
    p.add_argument("ln")
    p.add_argument("-n", "--replicas", type=int, help="needed replicas (default from config)")
    p = sub.add_parser("get", help="download a file (to LOCAL, '-' for stdout)")
    p.add_argument("ln")
    p.add_argument("local", nargs="?")
    for name, text in (("list", "list a collection"), ("stat", "show metadata"), ("mkdir", "create a collection")):
        sub.add_parser(name, help=text).add_argument("ln")
    p = sub.add_parser("rm", help="remove a file, or an empty collection with -d")
    p.add_argument("ln")
    p.add_argument("-d", "--collection", action="store_true")
    p = sub.add_parser("move", help="move or rename an entry")
    p.add_argument("src")
    p.add_argument("dst")
    p = sub.add_parser("mount", help="mount an external URL into the namespace")
    p.add_argument("ln")
    p.add_argument("url")
    return parser


def run(argv: list[str] | None = None, http: httpx.Client | None = None, out=None, sleep=time.sleep) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_client_config(args.config)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    client = BartenderClient(config, http, sleep)
    try:
        return _dispatch(client, args, out)
    except ServiceError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1 if is_user_error(exc.code) else 2
    except OSError as exc:
        print(f"error: local: {exc}", file=sys.stderr)
        return 1


def _dispatch(client: BartenderClient, args, out) -> int:
    cmd = args.command
    if cmd == "put":
        info = client.put(Path(args.local), args.ln, args.replicas)
        print(f"{args.ln}\t{info['guid']}\t{info['size']}\t{info['state']}", file=out)
    elif cmd == "get":
        target = args.local or os.path.basename(args.ln.rstrip("/")) or "download"
        if target == "-":
            info = client.get(args.ln, sys.stdout.buffer)
        else:
            part = Path(f"{target}.part")
            try:
                with part.open("wb") as fh:
                    info = client.get(args.ln, fh)
            except BaseException:
                part.unlink(missing_ok=True)
                raise
            if info.get("external") and info["size"] is None:
                part.unlink(missing_ok=True)
            else:
                part.replace(target)
        if info.get("external"):
            print(f"external\t{info['external']}", file=sys.stderr if target == "-" else out)
    elif cmd == "list":
        for name, (guid, etype) in sorted(client.call("list", ln=args.ln).items()):
            print(f"{name}\t{etype}\t{guid}", file=out)
    elif cmd == "stat":
        reply = client.call("stat", ln=args.ln)
        print(f"guid\t{reply['guid']}", file=out)
        for key, value in _flatten(reply["metadata"]):
            print(f"{key}\t{value}", file=out)
    elif cmd == "mkdir":
        print(f"{args.ln}\t{client.call('make_collection', ln=args.ln)['guid']}", file=out)
    elif cmd == "rm":
        client.call("unmake_collection" if args.collection else "del_file", ln=args.ln)
        print(f"removed\t{args.ln}", file=out)
    elif cmd == "move":
        client.call("move", src=args.src, dst=args.dst)
        print(f"moved\t{args.src}\t{args.dst}", file=out)
    elif cmd == "mount":
        print(f"{args.ln}\t{client.call('mount', ln=args.ln, url=args.url)['guid']}", file=out)
    return 0


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
