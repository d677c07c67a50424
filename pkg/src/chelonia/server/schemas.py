"""Request and response bodies of the HTTP API."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class PathRequest(BaseModel):
    ln: str


class MakeCollectionRequest(BaseModel):
    ln: str
    policy: list[str] | None = None


class MountRequest(BaseModel):
    ln: str
    url: str
    policy: list[str] | None = None


class MoveRequest(BaseModel):
    src: str
    dst: str


class PutFileRequest(BaseModel):
    ln: str
    size: int = Field(ge=0)
    checksum: str
    checksum_type: str = "sha256"
    needed_replicas: int = Field(default=1, ge=1)
    policy: list[str] | None = None


class OperationResponse(BaseModel):
    result: Any = None


class UploadResponse(BaseModel):
    state: str


class ErrorResponse(BaseModel):
    error: str
    message: str
    details: dict[str, Any] = Field(default_factory=dict)


class HealthResponse(BaseModel):
    status: str
    time: float
    master: str | None = None
    services: dict[str, str]
