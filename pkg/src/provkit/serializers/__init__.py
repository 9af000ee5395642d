"""Projection and serialization of provenance documents."""

from __future__ import annotations

from enum import Enum

from provkit.model import ProvenanceDocument
from provkit.serializers.dot import to_dot
from provkit.serializers.projection import Model, ProjectionOptions, apply_projection
from provkit.serializers.provjson import from_prov_json, to_prov_json
from provkit.serializers.provn import to_prov_n
from provkit.serializers.svg import to_svg


class SerializationFormat(str, Enum):
    PROV_JSON = "PROV-JSON"
    PROV_N = "PROV-N"
    PROV_DOT = "PROV-DOT"
    PROV_SVG = "PROV-SVG"


MIME_TYPES = {
    SerializationFormat.PROV_JSON: "application/json",
    SerializationFormat.PROV_N: "text/provenance-notation",
    SerializationFormat.PROV_DOT: "text/vnd.graphviz",
    SerializationFormat.PROV_SVG: "image/svg+xml",
}

_WRITERS = {
    SerializationFormat.PROV_JSON: to_prov_json,
    SerializationFormat.PROV_N: to_prov_n,
    SerializationFormat.PROV_DOT: to_dot,
    SerializationFormat.PROV_SVG: to_svg,
}


def serialize(doc: ProvenanceDocument, fmt: SerializationFormat | str) -> str:
    return _WRITERS[SerializationFormat(fmt)](doc)


__all__ = [
    "MIME_TYPES",
    "Model",
    "ProjectionOptions",
    "SerializationFormat",
    "apply_projection",
    "from_prov_json",
    "serialize",
    "to_dot",
    "to_prov_json",
    "to_prov_n",
    "to_svg",
]
