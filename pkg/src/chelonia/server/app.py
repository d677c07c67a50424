"""FastAPI application hosting a whole deployment in one process.

All services run on the in-process network under the real-time scheduler;
HTTP exposes only what outside users may touch: the Bartender's public
operations and the Shepherds' transfer URLs.  The caller's identity is the
``X-Chelonia-DN`` header (a stub for real certificates).
"""

from __future__ import annotations

import argparse
import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse, Response
from fastapi.concurrency import run_in_threadpool

from ..config import ServerConfig, load_server_config
from ..errors import NotFound, ServiceError
from ..hed.clock import RealtimeScheduler
from ..harness.deployment import Deployment
from ..shepherd.transfer import ANONYMOUS
from .schemas import (
    ErrorResponse,
    HealthResponse,
    MakeCollectionRequest,
    MountRequest,
    MoveRequest,
    OperationResponse,
    PathRequest,
    PutFileRequest,
    UploadResponse,
)

log = logging.getLogger(__name__)

IDENTITY_HEADER = "X-Chelonia-DN"

STATUS = {
    "not-found": 404, "parent-missing": 404,
    "name-taken": 409, "not-empty": 409, "is-a-collection": 409, "not-a-collection": 409,
    "access-denied": 403, "trust-denied": 403, "ticket-refused": 403,
    "invalid-name": 400, "unknown-operation": 400,
    "insufficient-space": 507,
    "queue-full": 503, "ahash-unavailable": 503, "no-master": 503, "transport-failure": 503,
    "librarian-unavailable": 503, "no-shepherd-available": 503, "no-alive-replica": 503,
    "bartender-unavailable": 503, "no-eligible-shepherd": 503,
}


def build_deployment(config: ServerConfig) -> Deployment:
    return Deployment(config.topology, seed=config.seed, clock=RealtimeScheduler())


def create_app(config: ServerConfig | None = None, deployment: Deployment | None = None) -> FastAPI:
    config = config or ServerConfig()
    d = deployment or build_deployment(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        d.start()
        d.clock.start()
        log.info("deployment up: %s", ", ".join(d.endpoints))
        yield
        d.stop()
        d.clock.stop()

    app = FastAPI(title="chelonia", lifespan=lifespan)
    app.state.deployment = d
    bartender = d.endpoints[d.bartender_ids[0]]

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        body = ErrorResponse(error=exc.code, message=exc.message, details=exc.details)
        return JSONResponse(status_code=STATUS.get(exc.code, 500), content=body.model_dump())

    def call(dn: str | None, operation: str, **args):
        return OperationResponse(result=d.network.request(dn or ANONYMOUS, bartender, operation, args))

    Dn = Header(default=None, alias=IDENTITY_HEADER)

    @app.get("/health", response_model=HealthResponse)
    def health():
        services = {h: "up" if d.is_up(h) else "down" for h in d.endpoints}
        m = d.master()
        status = "ok" if m is not None and all(v == "up" for v in services.values()) else "degraded"
        return HealthResponse(status=status, time=d.clock.time(), master=m.node_id if m else None,
                              services=services)

    @app.post("/bartender/make_collection", response_model=OperationResponse)
    def make_collection(body: MakeCollectionRequest, dn: str | None = Dn):
        return call(dn, "make_collection", ln=body.ln, policy=body.policy)

    @app.post("/bartender/unmake_collection", response_model=OperationResponse)
    def unmake_collection(body: PathRequest, dn: str | None = Dn):
        return call(dn, "unmake_collection", ln=body.ln)

    @app.post("/bartender/list", response_model=OperationResponse)
    def list_collection(body: PathRequest, dn: str | None = Dn):
        return call(dn, "list", ln=body.ln)

    @app.post("/bartender/stat", response_model=OperationResponse)
    def stat(body: PathRequest, dn: str | None = Dn):
        return call(dn, "stat", ln=body.ln)

    @app.post("/bartender/del_file", response_model=OperationResponse)
    def del_file(body: PathRequest, dn: str | None = Dn):
        return call(dn, "del_file", ln=body.ln)

    @app.post("/bartender/move", response_model=OperationResponse)
    def move(body: MoveRequest, dn: str | None = Dn):
        return call(dn, "move", src=body.src, dst=body.dst)

    @app.post("/bartender/mount", response_model=OperationResponse)
    def mount(body: MountRequest, dn: str | None = Dn):
        return call(dn, "mount", ln=body.ln, url=body.url, policy=body.policy)

    @app.post("/bartender/put_file", response_model=OperationResponse)
    def put_file(body: PutFileRequest, dn: str | None = Dn):
        return call(dn, "put_file", **body.model_dump())

    @app.post("/bartender/get_file", response_model=OperationResponse)
    def get_file(body: PathRequest, dn: str | None = Dn):
        return call(dn, "get_file", ln=body.ln)

    def shepherd(host: str):
        ep = d.endpoints.get(host)
        if ep is None or host not in d.shepherds:
            raise NotFound(f"no shepherd {host}")
        return ep

    @app.put("/transfer/{host}/{token}", response_model=UploadResponse)
    async def upload(host: str, token: str, request: Request):
        data = await request.body()
        reply = await run_in_threadpool(d.network.request, ANONYMOUS, shepherd(host), "upload",
                                        {"token": token, "data": data})
        return UploadResponse(state=reply["state"])

    @app.get("/transfer/{host}/{token}")
    def download(host: str, token: str):
        data = d.network.request(ANONYMOUS, shepherd(host), "download", {"token": token})
        return Response(content=data, media_type="application/octet-stream")

    return app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="chelonia-server", description="Run a deployment behind HTTP.")
    parser.add_argument("--config", help="server INI file")
    parser.add_argument("--host")
    parser.add_argument("--port", type=int)
    parser.add_argument("--data-dir")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    config = load_server_config(args.config) if args.config else ServerConfig()
    if args.host or args.port:
        config.host = args.host or config.host
        config.port = args.port or config.port
        if not args.config:
            config.public_url = f"http://{config.host}:{config.port}"
    config.topology.turl_base = config.transfer_base()
    if args.data_dir:
        config.topology.data_dir = args.data_dir
    uvicorn.run(create_app(config), host=config.host, port=config.port)
    return 0
