"""ProvSAP: provenance records over a plain HTTP GET query.

``GET /provsap?ID=ex:lvl2&DEPTH=1&RESPONSEFORMAT=PROV-N`` walks the store
from the given record, filters the result and returns one serialization.
Parameter names and enumerated values are case-insensitive; the ID is not.

    ID              record id, ``prefix:local`` (mandatory)
    DEPTH           ALL or an integer >= 0 (ALL)
    DIRECTION       BACKWARD | FORWARD (BACKWARD)
    RESPONSEFORMAT  PROV-JSON | PROV-N | PROV-DOT | PROV-SVG (PROV-JSON)
    MODEL           IVOA | W3C (IVOA)
    AGENTS, CONFIGURATION, ATTRIBUTES    0 | 1 (1)
    DESCRIPTIONS    0 | 1 | 2 (1)
"""

from __future__ import annotations

import json
import logging
import re
import socket
import time
from dataclasses import dataclass
from typing import Optional
from urllib.parse import parse_qsl, urlencode

from fastapi import FastAPI, Request
from fastapi.responses import Response
from pydantic import BaseModel, ConfigDict, Field

from provkit.errors import (
    BadValue,
    BindFailure,
    CorruptStore,
    CyclicGraph,
    EmptyId,
    MissingId,
    NotFound,
    ProvError,
    UnknownParam,
    UnknownPrefix,
)
from provkit.model import DEFAULT_PREFIX, parse_qualified_id
from provkit.serializers import MIME_TYPES, Model, ProjectionOptions, SerializationFormat, apply_projection, serialize
from provkit.store import Direction, ProvenanceStore

log = logging.getLogger(__name__)

ENDPOINT = "/provsap"
PARAMETERS = ("ID", "DEPTH", "DIRECTION", "RESPONSEFORMAT", "MODEL",
              "AGENTS", "CONFIGURATION", "DESCRIPTIONS", "ATTRIBUTES")
_DIGITS = re.compile(r"^[0-9]+$")


class ProvSapRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    depth: Optional[int] = Field(default=None, ge=0)  # None = ALL
    direction: Direction = Direction.BACKWARD
    format: SerializationFormat = SerializationFormat.PROV_JSON
    model: Model = Model.IVOA
    agents: bool = True
    configuration: bool = True
    descriptions: int = Field(default=1, ge=0, le=2)
    attributes: bool = True

    def projection(self) -> ProjectionOptions:
        return ProjectionOptions(model=self.model, agents=self.agents, configuration=self.configuration,
                                 descriptions=self.descriptions, attributes=self.attributes)


class ErrorBody(BaseModel):
    error: str
    detail: str


@dataclass(frozen=True)
class HttpResponse:
    status: int
    content_type: str
    body: bytes


def _choice(name: str, value: str, allowed: dict[str, object]):
    try:
        return allowed[value.upper()]
    except KeyError:
        raise BadValue(name, value, "expected one of " + ", ".join(allowed)) from None


_FLAG = {"0": False, "1": True}
_DIRECTIONS = {d.value: d for d in Direction}
_FORMATS = {f.value: f for f in SerializationFormat}
_MODELS = {m.value: m for m in Model}
_LEVELS = {"0": 0, "1": 1, "2": 2}


def parse_provsap_query(query: str) -> ProvSapRequest:
    """Parse a raw query string (without the leading ``?``)."""
    params: dict[str, str] = {}
    for name, value in parse_qsl(query, keep_blank_values=True):
        key = name.upper()
        if key not in PARAMETERS:
            raise UnknownParam(name)
        if key in params:
            raise BadValue(key, value, "parameter given more than once")
        params[key] = value
    if not params.get("ID"):
        raise MissingId("the ID parameter is mandatory")

    fields: dict[str, object] = {"id": params["ID"]}
    if "DEPTH" in params:
        raw = params["DEPTH"]
        if raw.upper() == "ALL":
            fields["depth"] = None
        elif _DIGITS.match(raw):
            fields["depth"] = int(raw)
        else:
            raise BadValue("DEPTH", raw, "expected ALL or an integer >= 0")
    if "DIRECTION" in params:
        fields["direction"] = _choice("DIRECTION", params["DIRECTION"], _DIRECTIONS)
    if "RESPONSEFORMAT" in params:
        fields["format"] = _choice("RESPONSEFORMAT", params["RESPONSEFORMAT"], _FORMATS)
    if "MODEL" in params:
        fields["model"] = _choice("MODEL", params["MODEL"], _MODELS)
    for flag in ("AGENTS", "CONFIGURATION", "ATTRIBUTES"):
        if flag in params:
            fields[flag.lower()] = _choice(flag, params[flag], _FLAG)
    if "DESCRIPTIONS" in params:
        fields["descriptions"] = _choice("DESCRIPTIONS", params["DESCRIPTIONS"], _LEVELS)
    return ProvSapRequest(**fields)


def render(request: ProvSapRequest) -> str:
    """Canonical query string; every parameter is spelled out."""
    pairs = [
        ("ID", request.id),
        ("DEPTH", "ALL" if request.depth is None else str(request.depth)),
        ("DIRECTION", request.direction.value),
        ("RESPONSEFORMAT", request.format.value),
        ("MODEL", request.model.value),
        ("AGENTS", str(int(request.agents))),
        ("CONFIGURATION", str(int(request.configuration))),
        ("DESCRIPTIONS", str(request.descriptions)),
        ("ATTRIBUTES", str(int(request.attributes))),
    ]
    return urlencode(pairs)


def error_response(status: int, exc: ProvError) -> HttpResponse:
    body = ErrorBody(error=exc.code, detail=str(exc))
    return HttpResponse(status, "application/json", (json.dumps(body.model_dump()) + "\n").encode())


def handle_provsap(store: ProvenanceStore, request: ProvSapRequest) -> HttpResponse:
    """traverse -> project -> serialize, mapped onto an HTTP status."""
    try:
        start = parse_qualified_id(request.id, store.namespaces, DEFAULT_PREFIX)
    except (UnknownPrefix, EmptyId) as exc:
        return error_response(400, BadValue("ID", request.id, str(exc)))
    try:
        doc = store.traverse(start, request.depth, request.direction)
        text = serialize(apply_projection(doc, request.projection()), request.format)
    except NotFound as exc:
        return error_response(404, exc)
    except (CorruptStore, CyclicGraph) as exc:
        log.error("provsap request %s failed: %s", request.id, exc)
        return error_response(500, exc)
    return HttpResponse(200, MIME_TYPES[request.format], text.encode("utf-8"))


def handle_query(store: ProvenanceStore, query: str) -> HttpResponse:
    try:
        request = parse_provsap_query(query)
    except (MissingId, BadValue, UnknownParam) as exc:
        return error_response(400, exc)
    try:
        store.refresh()
    except CorruptStore as exc:
        return error_response(500, exc)
    return handle_provsap(store, request)


def create_app(store: ProvenanceStore) -> FastAPI:
    app = FastAPI(title="provkit ProvSAP", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        log.info("%s %s?%s %d %.1fms", request.method, request.url.path, request.url.query,
                 response.status_code, (time.perf_counter() - started) * 1000)
        return response

    # plain def: FastAPI runs it in the threadpool, so slow traversals do not block the loop
    @app.get(ENDPOINT, responses={400: {"model": ErrorBody}, 404: {"model": ErrorBody},
                                  500: {"model": ErrorBody}})
    def provsap(request: Request) -> Response:
        result = handle_query(app.state.store, request.url.query)
        return Response(content=result.body, status_code=result.status, media_type=result.content_type)

    return app


def check_port(host: str, port: int) -> None:
    """Fail fast with :class:`BindFailure` if the address cannot be bound."""
    try:
        with socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET, socket.SOCK_STREAM) as sock:
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((host, port))
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc.strerror or exc}") from None


def serve(store: ProvenanceStore, host: str = "127.0.0.1", port: int = 8080) -> None:
    import uvicorn

    check_port(host, port)
    uvicorn.run(create_app(store), host=host, port=port, log_level="warning")
