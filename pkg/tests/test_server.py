import hashlib

import pytest
from fastapi.testclient import TestClient

from chelonia.config import ServerConfig
from chelonia.harness import Topology
from chelonia.server import IDENTITY_HEADER, create_app


@pytest.fixture
def http():
    app = create_app(ServerConfig(Topology(shepherds=2), public_url="http://testserver"))
    with TestClient(app) as tc:
        yield tc


def op(http, name, dn="CN=me", **body):
    return http.post(f"/bartender/{name}", json=body, headers={IDENTITY_HEADER: dn})


def test_health(http):
    body = http.get("/health").json()
    assert body["status"] == "ok" and body["master"] == "a1"
    assert set(body["services"]) == {"a1", "l1", "b1", "s1", "s2"}


def test_put_get_over_http(http):
    data = b"\x00\x01 some bytes"
    assert op(http, "make_collection", ln="/u").status_code == 200
    r = op(http, "put_file", ln="/u/f", size=len(data), checksum=hashlib.sha256(data).hexdigest())
    url = r.json()["result"]["url"]
    assert url.startswith("http://testserver/transfer/s")
    assert http.put(url, content=data).json() == {"state": "ALIVE"}
    ticket = op(http, "get_file", ln="/u/f").json()["result"]
    got = http.get(ticket["url"])
    assert got.content == data
    again = http.get(ticket["url"])
    assert again.status_code == 403 and again.json()["error"] == "ticket-refused"
    listing = op(http, "list", ln="/u").json()["result"]
    assert listing["f"][1] == "file"


@pytest.mark.parametrize("name,body,status,code", [
    ("stat", {"ln": "/missing"}, 404, "not-found"),
    ("make_collection", {"ln": "/a/b"}, 404, "parent-missing"),
    ("put_file", {"ln": "/x", "size": 1, "checksum": "c", "needed_replicas": 0}, 422, None),
])
def test_errors_map_to_status(http, name, body, status, code):
    r = op(http, name, **body)
    assert r.status_code == status
    if code:
        assert r.json()["error"] == code


def test_identity_header_drives_policy(http):
    op(http, "make_collection", dn="CN=alice", ln="/alice")
    r = op(http, "make_collection", dn="CN=bob", ln="/alice/x")
    assert r.status_code == 403 and r.json()["error"] == "access-denied"


def test_unknown_transfer_host(http):
    assert http.get("/transfer/a1/token").status_code == 404
