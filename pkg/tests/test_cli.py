import io
import json

import httpx
import pytest
from fastapi.testclient import TestClient

from chelonia import cli
from chelonia.config import ServerConfig
from chelonia.harness import Topology
from chelonia.server import create_app


class DeadHostTransport(httpx.BaseTransport):
    """Forward to the app, except that ``dead.invalid`` refuses connections."""

    def __init__(self, inner):
        self.inner = inner
        self.dead_calls = 0

    def handle_request(self, request):
        if request.url.host == "dead.invalid":
            self.dead_calls += 1
            raise httpx.ConnectError("connection refused", request=request)
        return self.inner.handle_request(request)


@pytest.fixture
def env(tmp_path, monkeypatch):
    cfg = tmp_path / "client.ini"
    cfg.write_text("[client]\nbartenders = http://dead.invalid, http://testserver\ndn = CN=me\n")
    monkeypatch.setenv("CHELONIA_CONFIG", str(cfg))
    monkeypatch.chdir(tmp_path)
    app = create_app(ServerConfig(Topology(shepherds=2), public_url="http://testserver"))
    with TestClient(app) as tc:
        transport = DeadHostTransport(tc._transport)
        with httpx.Client(transport=transport) as http:
            yield tmp_path, http, transport


def run(http, *argv):
    out, err = io.StringIO(), io.StringIO()
    import contextlib
    with contextlib.redirect_stderr(err):
        code = cli.run(list(argv), http=http, out=out, sleep=lambda s: None)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("size", [0, 1, 1 << 20])
def test_put_get_round_trip(env, size):
    tmp, http, transport = env
    data = bytes((i * 7 + 3) % 256 for i in range(size))
    (tmp / "in.bin").write_bytes(data)
    code, out, _ = run(http, "put", "in.bin", "/f")
    assert code == 0 and out.split("\t")[3].strip() == "ALIVE"
    code, _, _ = run(http, "get", "/f", "out.bin")
    assert code == 0 and (tmp / "out.bin").read_bytes() == data
    assert transport.dead_calls >= 1  # the first configured bartender was tried and skipped


def test_namespace_commands(env):
    tmp, http, _ = env
    assert run(http, "mkdir", "/user")[0] == 0
    assert run(http, "mkdir", "/user/me")[0] == 0
    (tmp / "orange.jpg").write_bytes(b"orange")
    assert run(http, "put", "orange.jpg", "/user/me/orange.jpg")[0] == 0
    code, out, _ = run(http, "list", "/user/me")
    assert code == 0 and out.startswith("orange.jpg\tfile\t")
    code, out, _ = run(http, "stat", "/user/me/orange.jpg")
    assert "states.size\t6" in out.splitlines()
    assert run(http, "move", "/user/me/orange.jpg", "/user/o.jpg")[0] == 0
    assert run(http, "rm", "/user/o.jpg")[0] == 0
    assert run(http, "rm", "-d", "/user/me")[0] == 0
    code, out, _ = run(http, "list", "/user")
    assert code == 0 and out == ""


def test_stat_missing_is_user_error(env):
    _, http, _ = env
    code, _, err = run(http, "stat", "/missing")
    assert code == 1 and err.startswith("error: not-found:")


def test_get_default_target_and_missing(env):
    tmp, http, _ = env
    (tmp / "a.txt").write_bytes(b"abc")
    run(http, "put", "a.txt", "/a.txt")
    (tmp / "a.txt").unlink()
    assert run(http, "get", "/a.txt")[0] == 0
    assert (tmp / "a.txt").read_bytes() == b"abc"
    assert run(http, "get", "/nope", "x")[0] == 1
    assert not (tmp / "x").exists() and not (tmp / "x.part").exists()


def test_mount_file_scheme_followed(env):
    tmp, http, _ = env
    ext = tmp / "dcache" / "fruits"
    ext.mkdir(parents=True)
    (ext / "apple.jpg").write_bytes(b"apple")
    run(http, "mkdir", "/my")
    assert run(http, "mount", "/my/dCache", f"file://{tmp / 'dcache'}")[0] == 0
    code, out, _ = run(http, "get", "/my/dCache/fruits/apple.jpg", "apple.jpg")
    assert code == 0 and out.startswith("external\tfile://")
    assert (tmp / "apple.jpg").read_bytes() == b"apple"


def test_unhandled_scheme_is_printed(env):
    tmp, http, _ = env
    run(http, "mkdir", "/my")
    run(http, "mount", "/my/dCache", "gsiftp://dcache.example")
    code, out, _ = run(http, "get", "/my/dCache/fruits/apple.jpg", "apple.jpg")
    assert code == 0 and out.strip() == "external\tgsiftp://dcache.example/fruits/apple.jpg"
    assert not (tmp / "apple.jpg").exists()


def test_usage_and_config_errors(env, tmp_path, monkeypatch):
    _, http, _ = env
    with pytest.raises(SystemExit) as exc:
        cli.run(["frobnicate"], http=http)
    assert exc.value.code == 1
    monkeypatch.setenv("CHELONIA_CONFIG", str(tmp_path / "absent.ini"))
    assert run(http, "stat", "/")[0] == 1


def mock_config(tmp_path, monkeypatch, attempts=5):
    cfg = tmp_path / "m.ini"
    cfg.write_text(f"[client]\nbartenders = http://b1, http://b2\nattempts = {attempts}\n")
    monkeypatch.setenv("CHELONIA_CONFIG", str(cfg))


def test_overload_retried_with_backoff(tmp_path, monkeypatch):
    mock_config(tmp_path, monkeypatch)
    calls = []

    def handler(request):
        calls.append(str(request.url))
        if len(calls) < 3:
            return httpx.Response(503, json={"error": "queue-full", "message": "busy", "details": {}})
        return httpx.Response(200, json={"result": {"guid": "g"}})

    sleeps = []
    out = io.StringIO()
    code = cli.run(["mkdir", "/x"], http=httpx.Client(transport=httpx.MockTransport(handler)), out=out,
                   sleep=sleeps.append)
    assert code == 0 and out.getvalue() == "/x\tg\n"
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted_is_system_error(tmp_path, monkeypatch, capsys):
    mock_config(tmp_path, monkeypatch, attempts=3)

    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    sleeps = []
    code = cli.run(["stat", "/"], http=httpx.Client(transport=httpx.MockTransport(handler)), sleep=sleeps.append)
    assert code == 2 and len(sleeps) == 2
    assert "bartender-unavailable" in capsys.readouterr().err


def test_checksum_mismatch_detected(tmp_path, monkeypatch):
    mock_config(tmp_path, monkeypatch)

    def handler(request):
        if request.url.path.startswith("/bartender/"):
            body = {"url": "http://b1/transfer/s1/tok", "external": False, "checksum": "0" * 64}
            return httpx.Response(200, json={"result": body})
        return httpx.Response(200, content=b"tampered")

    client = cli.BartenderClient(cli.load_client_config(), httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(cli.ChecksumMismatch):
        client.get("/f", io.BytesIO())
    assert json.dumps(cli.ChecksumMismatch("x").to_wire())
