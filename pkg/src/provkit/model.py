"""Provenance graph data model.

W3C PROV core classes (Entity, Activity, Agent and four relations) plus the
IVOA additions ActivityDescription and Parameter, with document validation,
merging and a compact derivation view.
"""

from __future__ import annotations

import dataclasses
import functools
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Union

from provkit.errors import ConflictingNamespace, ConflictingRecord, EmptyId, UnknownPrefix

PROV_NS = "http://www.w3.org/ns/prov#"
VOPROV_NS = "http://www.ivoa.net/documents/ProvenanceDM/ns/voprov/"
DEFAULT_PREFIX = "ex"
DEFAULT_NAMESPACES = {
    "prov": PROV_NS,
    "voprov": VOPROV_NS,
    DEFAULT_PREFIX: "http://example.org/",
}

_LOCAL_RE = re.compile(r"^\S+$")


def default_namespaces() -> dict[str, str]:
    return dict(DEFAULT_NAMESPACES)


@functools.total_ordering
@dataclass(frozen=True)
class QualifiedId:
    prefix: str
    local: str

    def __post_init__(self) -> None:
        if not self.prefix or ":" in self.prefix or not _LOCAL_RE.match(self.prefix):
            raise ValueError(f"invalid namespace prefix {self.prefix!r}")
        if not self.local or not _LOCAL_RE.match(self.local):
            raise ValueError(f"invalid local name {self.local!r}")

    def __str__(self) -> str:
        return f"{self.prefix}:{self.local}"

    def __lt__(self, other: QualifiedId) -> bool:
        if not isinstance(other, QualifiedId):
            return NotImplemented
        return str(self) < str(other)


def parse_qualified_id(
    text: str,
    namespaces: dict[str, str] | None = None,
    default_prefix: str = DEFAULT_PREFIX,
) -> QualifiedId:
    """Split ``text`` on its first colon; bare names get ``default_prefix``."""
    if not text:
        raise EmptyId("empty identifier")
    if namespaces is None:
        namespaces = DEFAULT_NAMESPACES
    prefix, sep, local = text.partition(":")
    if not sep:
        prefix, local = default_prefix, text
    if prefix not in namespaces:
        raise UnknownPrefix(prefix)
    try:
        return QualifiedId(prefix, local)
    except ValueError as exc:
        raise EmptyId(str(exc)) from None


def qid(text: str) -> QualifiedId:
    """Shorthand for parsing against the default namespace map."""
    return parse_qualified_id(text)


# -- timestamps -------------------------------------------------------------

def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 instant with an explicit offset, returned in UTC."""
    if not isinstance(text, str) or "T" not in text:
        raise ValueError(f"not an ISO-8601 date-time: {text!r}")
    raw = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    value = datetime.fromisoformat(raw)
    if value.tzinfo is None:
        raise ValueError(f"timestamp without UTC offset: {text!r}")
    return value.astimezone(timezone.utc)


def normalize_timestamp(text: str) -> str:
    return parse_timestamp(text).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def utc_now() -> str:
    return format_timestamp(datetime.now(timezone.utc))


def _valid_timestamp(text: str) -> bool:
    try:
        parse_timestamp(text)
    except (ValueError, TypeError):
        return False
    return True


# -- records ----------------------------------------------------------------

class AgentKind(str, Enum):
    PERSON = "Person"
    ORGANIZATION = "Organization"
    SOFTWARE_AGENT = "SoftwareAgent"


class ValueType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    REAL = "real"
    BOOLEAN = "boolean"
    TIMESTAMP = "timestamp"


_INT_RE = re.compile(r"^[+-]?\d+$")
_REAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


def value_matches_type(value: str, value_type: ValueType) -> bool:
    if value_type is ValueType.STRING:
        return True
    if value_type is ValueType.INTEGER:
        return bool(_INT_RE.match(value))
    if value_type is ValueType.REAL:
        return bool(_REAL_RE.match(value))
    if value_type is ValueType.BOOLEAN:
        return value in ("true", "false")
    return _valid_timestamp(value)


@dataclass
class Entity:
    id: QualifiedId
    name: str | None = None
    location: str | None = None
    generated_at: str | None = None
    comment: str | None = None
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class Activity:
    id: QualifiedId
    name: str | None = None
    start_time: str | None = None
    end_time: str | None = None
    description_ref: QualifiedId | None = None
    comment: str | None = None
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class Agent:
    id: QualifiedId
    name: str = ""
    kind: AgentKind = AgentKind.PERSON
    email: str | None = None
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class ActivityDescription:
    """Static description of the method or software behind activities."""

    id: QualifiedId
    name: str = ""
    version: str | None = None
    doc: str | None = None
    docurl: str | None = None
    code_reference: str | None = None
    code_revision: str | None = None


@dataclass(frozen=True)
class Parameter:
    activity: QualifiedId
    name: str
    value: str
    value_type: ValueType = ValueType.STRING


Record = Union[Entity, Activity, Agent, ActivityDescription]


def clone_record(rec: Record) -> Record:
    if hasattr(rec, "attributes"):
        return dataclasses.replace(rec, attributes=dict(rec.attributes))
    return dataclasses.replace(rec)


@dataclass(frozen=True)
class Used:
    activity: QualifiedId
    entity: QualifiedId
    role: str | None = None
    time: str | None = None

    @property
    def key(self) -> tuple[QualifiedId, QualifiedId, str | None]:
        return (self.activity, self.entity, self.role)


@dataclass(frozen=True)
class WasGeneratedBy:
    entity: QualifiedId
    activity: QualifiedId
    role: str | None = None
    time: str | None = None

    @property
    def key(self) -> tuple[QualifiedId, QualifiedId, str | None]:
        return (self.entity, self.activity, self.role)


@dataclass(frozen=True)
class WasAssociatedWith:
    activity: QualifiedId
    agent: QualifiedId
    role: str | None = None

    @property
    def key(self) -> tuple[QualifiedId, QualifiedId, str | None]:
        return (self.activity, self.agent, self.role)


@dataclass(frozen=True)
class WasAttributedTo:
    entity: QualifiedId
    agent: QualifiedId
    role: str | None = None

    @property
    def key(self) -> tuple[QualifiedId, QualifiedId, str | None]:
        return (self.entity, self.agent, self.role)


Relation = Union[Used, WasGeneratedBy, WasAssociatedWith, WasAttributedTo]

RECORD_SECTIONS = {
    Entity: "entities",
    Activity: "activities",
    Agent: "agents",
    ActivityDescription: "descriptions",
}
RELATION_SECTIONS = {
    Used: "used",
    WasGeneratedBy: "generated",
    WasAssociatedWith: "associations",
    WasAttributedTo: "attributions",
}

# Attribute keys that the serializers map onto record fields.
RESERVED_KEYS = {
    "entities": {"prov:label", "prov:location", "voprov:generatedAtTime", "voprov:comment", "voprov:stub"},
    "activities": {"prov:label", "prov:startTime", "prov:endTime", "voprov:description",
                   "voprov:comment", "voprov:stub"},
    "agents": {"prov:label", "prov:type", "voprov:email", "voprov:stub"},
}


def relation_sort_key(rel: Relation) -> tuple[str, str, str, str]:
    subject, obj, role = rel.key
    return (str(subject), str(obj), role or "", getattr(rel, "time", None) or "")


@dataclass(eq=False)
class ProvenanceDocument:
    namespaces: dict[str, str] = field(default_factory=default_namespaces)
    entities: dict[QualifiedId, Entity] = field(default_factory=dict)
    activities: dict[QualifiedId, Activity] = field(default_factory=dict)
    agents: dict[QualifiedId, Agent] = field(default_factory=dict)
    descriptions: dict[QualifiedId, ActivityDescription] = field(default_factory=dict)
    parameters: list[Parameter] = field(default_factory=list)
    used: list[Used] = field(default_factory=list)
    generated: list[WasGeneratedBy] = field(default_factory=list)
    associations: list[WasAssociatedWith] = field(default_factory=list)
    attributions: list[WasAttributedTo] = field(default_factory=list)
    incomplete_ids: set[QualifiedId] = field(default_factory=set)

    def add(self, item: Record | Parameter | Relation, *, stub: bool = False) -> None:
        """Append a record, parameter or relation (no de-duplication)."""
        if isinstance(item, Parameter):
            self.parameters.append(item)
        elif type(item) in RELATION_SECTIONS:
            getattr(self, RELATION_SECTIONS[type(item)]).append(item)
        else:
            getattr(self, RECORD_SECTIONS[type(item)])[item.id] = item
            if stub:
                self.incomplete_ids.add(item.id)
            else:
                self.incomplete_ids.discard(item.id)

    def records(self) -> Iterator[Record]:
        for section in RECORD_SECTIONS.values():
            yield from getattr(self, section).values()

    def relations(self) -> Iterator[Relation]:
        for section in RELATION_SECTIONS.values():
            yield from getattr(self, section)

    def get(self, record_id: QualifiedId) -> Record | None:
        for section in RECORD_SECTIONS.values():
            found = getattr(self, section).get(record_id)
            if found is not None:
                return found
        return None

    def is_stub(self, record_id: QualifiedId) -> bool:
        return record_id in self.incomplete_ids

    def is_empty(self) -> bool:
        return not (any(True for _ in self.records()) or self.parameters
                    or any(True for _ in self.relations()))

    def record_count(self) -> int:
        """Records, parameters and relations together."""
        return (sum(1 for _ in self.records()) + len(self.parameters)
                + sum(1 for _ in self.relations()))

    def copy(self) -> ProvenanceDocument:
        dup = clone_record
        return ProvenanceDocument(
            namespaces=dict(self.namespaces),
            entities={k: dup(v) for k, v in self.entities.items()},
            activities={k: dup(v) for k, v in self.activities.items()},
            agents={k: dup(v) for k, v in self.agents.items()},
            descriptions={k: dup(v) for k, v in self.descriptions.items()},
            parameters=list(self.parameters),
            used=list(self.used),
            generated=list(self.generated),
            associations=list(self.associations),
            attributions=list(self.attributions),
            incomplete_ids=set(self.incomplete_ids),
        )

    def _comparable(self) -> tuple:
        return (
            self.namespaces,
            self.entities,
            self.activities,
            self.agents,
            self.descriptions,
            sorted(self.parameters, key=lambda p: (str(p.activity), p.name, p.value, p.value_type.value)),
            *(sorted(getattr(self, s), key=relation_sort_key) for s in RELATION_SECTIONS.values()),
            self.incomplete_ids,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProvenanceDocument):
            return NotImplemented
        return self._comparable() == other._comparable()

    __hash__ = None  # type: ignore[assignment]


# -- validation -------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    subject: str


def _all_ids(doc: ProvenanceDocument) -> Iterator[QualifiedId]:
    for rec in doc.records():
        yield rec.id
    for act in doc.activities.values():
        if act.description_ref is not None:
            yield act.description_ref
    for param in doc.parameters:
        yield param.activity
    for rel in doc.relations():
        yield rel.key[0]
        yield rel.key[1]
    yield from doc.incomplete_ids


def graph_arcs(doc: ProvenanceDocument) -> list[tuple[QualifiedId, QualifiedId]]:
    """Arcs entity -> generating activity and activity -> used entity."""
    arcs = [(g.entity, g.activity) for g in doc.generated]
    arcs.extend((u.activity, u.entity) for u in doc.used)
    return arcs


def strongly_connected_cycles(
    nodes: Iterable[QualifiedId], arcs: Iterable[tuple[QualifiedId, QualifiedId]]
) -> list[list[QualifiedId]]:
    """Return every strongly connected component that contains a cycle."""
    succ: dict[QualifiedId, list[QualifiedId]] = defaultdict(list)
    all_nodes = set(nodes)
    self_loops = set()
    for a, b in arcs:
        succ[a].append(b)
        all_nodes.update((a, b))
        if a == b:
            self_loops.add(a)

    index: dict[QualifiedId, int] = {}
    low: dict[QualifiedId, int] = {}
    on_stack: set[QualifiedId] = set()
    stack: list[QualifiedId] = []
    found: list[list[QualifiedId]] = []
    counter = 0
    # iterative Tarjan; recursion would overflow on long pipelines
    for root in sorted(all_nodes):
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, children = work[-1]
            advanced = False
            for child in children:
                if child not in index:
                    index[child] = low[child] = counter
                    counter += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(succ[child])))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1 or node in self_loops:
                    found.append(sorted(component))
    return found


def validate_document(doc: ProvenanceDocument, default_prefix: str = DEFAULT_PREFIX) -> list[Finding]:
    """Check every document invariant; findings are returned, never raised."""
    findings: set[Finding] = set()

    def error(code: str, subject: object) -> None:
        findings.add(Finding("error", code, str(subject)))

    def warning(code: str, subject: object) -> None:
        findings.add(Finding("warning", code, str(subject)))

    for prefix in ("prov", default_prefix):
        if prefix not in doc.namespaces:
            error("MISSING_NAMESPACE", prefix)
    for ident in _all_ids(doc):
        if ident.prefix not in doc.namespaces:
            error("UNKNOWN_PREFIX", ident)

    for section in RECORD_SECTIONS.values():
        for key, rec in getattr(doc, section).items():
            if key != rec.id:
                error("ID_MISMATCH", key)
            reserved = RESERVED_KEYS.get(section, ())
            for attr_key, attr_value in getattr(rec, "attributes", {}).items():
                if not attr_key or attr_key in reserved:
                    error("RESERVED_ATTRIBUTE", rec.id)
                if not isinstance(attr_value, str):
                    error("BAD_ATTRIBUTE", rec.id)

    for ent in doc.entities.values():
        if ent.generated_at is not None and not _valid_timestamp(ent.generated_at):
            error("BAD_TIMESTAMP", ent.id)
    for act in doc.activities.values():
        times_ok = True
        for value in (act.start_time, act.end_time):
            if value is not None and not _valid_timestamp(value):
                error("BAD_TIMESTAMP", act.id)
                times_ok = False
        if times_ok and act.start_time and act.end_time:
            if normalize_timestamp(act.start_time) > normalize_timestamp(act.end_time):
                error("TIME_ORDER", act.id)
        if act.description_ref is not None and act.description_ref not in doc.descriptions:
            warning("DANGLING_REF", act.description_ref)
    for ag in doc.agents.values():
        if not ag.name and ag.id not in doc.incomplete_ids:
            error("EMPTY_NAME", ag.id)
    for desc in doc.descriptions.values():
        if not desc.name and desc.id not in doc.incomplete_ids:
            error("EMPTY_NAME", desc.id)

    seen_params: set[tuple[QualifiedId, str]] = set()
    for param in doc.parameters:
        pkey = (param.activity, param.name)
        if pkey in seen_params:
            error("DUPLICATE_PARAMETER", f"{param.activity}#{param.name}")
        seen_params.add(pkey)
        if not param.name:
            error("EMPTY_NAME", param.activity)
        if not value_matches_type(param.value, param.value_type):
            error("BAD_PARAMETER_VALUE", f"{param.activity}#{param.name}")
        if param.activity not in doc.activities:
            warning("DANGLING_REF", param.activity)

    endpoint_sections = {
        Used: ("activities", "entities"),
        WasGeneratedBy: ("entities", "activities"),
        WasAssociatedWith: ("activities", "agents"),
        WasAttributedTo: ("entities", "agents"),
    }
    for rel_type, section in RELATION_SECTIONS.items():
        seen_keys: set = set()
        subj_sec, obj_sec = endpoint_sections[rel_type]
        for rel in getattr(doc, section):
            if rel.key in seen_keys:
                error("DUPLICATE_RELATION", rel.key[0])
            seen_keys.add(rel.key)
            subject, obj, _ = rel.key
            if subject not in getattr(doc, subj_sec):
                warning("DANGLING_REF", subject)
            if obj not in getattr(doc, obj_sec):
                warning("DANGLING_REF", obj)
            time = getattr(rel, "time", None)
            if time is not None and not _valid_timestamp(time):
                error("BAD_TIMESTAMP", subject)

    generators: dict[QualifiedId, set] = defaultdict(set)
    for gen in doc.generated:
        generators[gen.entity].add(gen.key)
    for ent_id, keys in generators.items():
        if len(keys) > 1:
            error("MULTI_GENERATION", ent_id)

    for stub in doc.incomplete_ids:
        if doc.get(stub) is None:
            error("STUB_WITHOUT_RECORD", stub)
        else:
            warning("DANGLING_REF", stub)

    for component in strongly_connected_cycles((), graph_arcs(doc)):
        acts = [n for n in component if n in doc.activities] or component
        error("CYCLE", min(acts))

    return sorted(findings, key=lambda f: (f.severity != "error", f.code, f.subject))


def has_errors(findings: Iterable[Finding]) -> bool:
    return any(f.severity == "error" for f in findings)


# -- merging ----------------------------------------------------------------

def _empty(value: object) -> bool:
    return value is None or value == "" or value == {}


def combine_records(left: Record, left_stub: bool, right: Record, right_stub: bool) -> Record:
    """Field-wise union of two records with the same id.

    A stub side never causes a conflict: the full side wins on disagreement.
    """
    if type(left) is not type(right):
        raise ConflictingRecord(left.id, "records of different classes")
    values = {}
    for f in dataclasses.fields(left):
        a, b = getattr(left, f.name), getattr(right, f.name)
        if f.name == "attributes":
            merged = dict(a)
            for key, value in b.items():
                if key in merged and merged[key] != value:
                    if left_stub and not right_stub:
                        merged[key] = value
                    elif right_stub and not left_stub:
                        continue
                    else:
                        raise ConflictingRecord(left.id, f"attribute {key}")
                else:
                    merged[key] = value
            values[f.name] = merged
        elif f.name != "kind" and _empty(a):
            values[f.name] = b
        elif a == b or (f.name != "kind" and _empty(b)):
            values[f.name] = a
        elif left_stub and not right_stub:
            values[f.name] = b
        elif right_stub and not left_stub:
            values[f.name] = a
        else:
            raise ConflictingRecord(left.id, f.name)
    return type(left)(**values)


def combine_relations(left: Relation, right: Relation) -> Relation:
    a, b = getattr(left, "time", None), getattr(right, "time", None)
    if a is not None and b is not None and a != b:
        raise ConflictingRecord(left.key[0], f"{type(left).__name__} time")
    return left if a is not None or b is None else right


def combine_parameters(left: Parameter, right: Parameter) -> Parameter:
    if (left.value, left.value_type) != (right.value, right.value_type):
        raise ConflictingRecord(left.activity, f"parameter {left.name}")
    return left


def merge_namespaces(a: dict[str, str], b: dict[str, str]) -> dict[str, str]:
    out = dict(a)
    for prefix, uri in b.items():
        if out.setdefault(prefix, uri) != uri:
            raise ConflictingNamespace(prefix)
    return out


def merge_documents(a: ProvenanceDocument, b: ProvenanceDocument) -> ProvenanceDocument:
    """Union of two documents keyed by id; conflicts raise."""
    out = ProvenanceDocument(namespaces=merge_namespaces(a.namespaces, b.namespaces))
    for section in RECORD_SECTIONS.values():
        left, right = getattr(a, section), getattr(b, section)
        merged = {}
        for rid in sorted(left.keys() | right.keys()):
            ra, rb = left.get(rid), right.get(rid)
            a_stub, b_stub = rid in a.incomplete_ids, rid in b.incomplete_ids
            if ra is None:
                rec, stub = rb, b_stub
            elif rb is None:
                rec, stub = ra, a_stub
            else:
                rec, stub = combine_records(ra, a_stub, rb, b_stub), a_stub and b_stub
            merged[rid] = clone_record(rec)
            if stub:
                out.incomplete_ids.add(rid)
        setattr(out, section, merged)
    # stubs known without a record survive only if no side describes them
    for rid in a.incomplete_ids | b.incomplete_ids:
        if out.get(rid) is None:
            out.incomplete_ids.add(rid)

    params: dict[tuple[QualifiedId, str], Parameter] = {}
    for param in [*a.parameters, *b.parameters]:
        pkey = (param.activity, param.name)
        params[pkey] = combine_parameters(params[pkey], param) if pkey in params else param
    out.parameters = [params[k] for k in sorted(params, key=lambda k: (str(k[0]), k[1]))]

    for section in RELATION_SECTIONS.values():
        rels: dict = {}
        for rel in [*getattr(a, section), *getattr(b, section)]:
            rels[rel.key] = combine_relations(rels[rel.key], rel) if rel.key in rels else rel
        setattr(out, section, sorted(rels.values(), key=relation_sort_key))
    return out


def derive_progenitor_pairs(doc: ProvenanceDocument) -> list[tuple[QualifiedId, QualifiedId]]:
    """(derived, source) entity pairs linked through one activity."""
    inputs: dict[QualifiedId, set[QualifiedId]] = defaultdict(set)
    for u in doc.used:
        inputs[u.activity].add(u.entity)
    pairs = {(g.entity, src) for g in doc.generated for src in inputs.get(g.activity, ())}
    return sorted(pairs, key=lambda p: (str(p[0]), str(p[1])))
