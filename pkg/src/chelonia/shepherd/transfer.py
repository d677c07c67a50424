"""Redeeming transfer URLs over the service network.

A transfer URL is ``<shepherd endpoint url>/<token>``; the token alone
authorizes one upload or one download.
"""

from __future__ import annotations

from ..hed.host import ServiceEndpoint

ANONYMOUS = "CN=anonymous"


def split_turl(url: str) -> tuple[ServiceEndpoint, str]:
    base, _, token = url.rpartition("/")
    if not base or not token:
        raise ValueError(f"not a transfer URL: {url!r}")
    return ServiceEndpoint(base, "CN=transfer"), token


def upload(network, url: str, data: bytes, dn: str = ANONYMOUS, origin: str = "") -> str:
    """Send ``data`` to an upload URL; returns the replica's new state."""
    target, token = split_turl(url)
    return network.request(dn, target, "upload", {"token": token, "data": bytes(data)}, origin)["state"]


def download(network, url: str, dn: str = ANONYMOUS, origin: str = "") -> bytes:
    target, token = split_turl(url)
    return network.request(dn, target, "download", {"token": token}, origin)
