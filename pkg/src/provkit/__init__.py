"""provkit: provenance capture, storage, serialization and access for data pipelines."""

from provkit.capture import RecorderSession, fold_events, read_events
from provkit.errors import DataError, ProvError
from provkit.laststep import LastStepRecord, build_laststep, emit_header_cards, parse_header_cards, reconstruct
from provkit.model import (
    Activity,
    ActivityDescription,
    Agent,
    AgentKind,
    Entity,
    Parameter,
    ProvenanceDocument,
    QualifiedId,
    Used,
    ValueType,
    WasAssociatedWith,
    WasAttributedTo,
    WasGeneratedBy,
    merge_documents,
    parse_qualified_id,
    validate_document,
)
from provkit.serializers import (
    ProjectionOptions,
    SerializationFormat,
    apply_projection,
    from_prov_json,
    serialize,
    to_prov_json,
)
from provkit.store import ALL, Direction, ProvenanceStore

__version__ = "0.1.0"

__all__ = [
    "ALL",
    "Activity",
    "ActivityDescription",
    "Agent",
    "AgentKind",
    "DataError",
    "Direction",
    "Entity",
    "LastStepRecord",
    "Parameter",
    "ProjectionOptions",
    "ProvError",
    "ProvenanceDocument",
    "ProvenanceStore",
    "QualifiedId",
    "RecorderSession",
    "SerializationFormat",
    "Used",
    "ValueType",
    "WasAssociatedWith",
    "WasAttributedTo",
    "WasGeneratedBy",
    "apply_projection",
    "build_laststep",
    "emit_header_cards",
    "fold_events",
    "from_prov_json",
    "merge_documents",
    "parse_header_cards",
    "parse_qualified_id",
    "read_events",
    "reconstruct",
    "serialize",
    "to_prov_json",
    "validate_document",
]
