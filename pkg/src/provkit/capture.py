"""Capture "inside": structured provenance events written as JSON lines.

A pipeline instruments itself with a :class:`RecorderSession`; each call
appends one event line to a sink.  :func:`fold_events` turns a stream of
parsed events back into a :class:`~provkit.model.ProvenanceDocument`.
"""

from __future__ import annotations

import itertools
import json
import logging
import re
import secrets
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, TextIO

from provkit.errors import (
    BadValue,
    ConflictingRecord,
    DataError,
    MalformedJson,
    MissingField,
    UnknownEventKind,
    UseAfterEnd,
)
from provkit.model import (
    DEFAULT_NAMESPACES,
    DEFAULT_PREFIX,
    Activity,
    ActivityDescription,
    Agent,
    AgentKind,
    Entity,
    Finding,
    Parameter,
    ProvenanceDocument,
    QualifiedId,
    Used,
    ValueType,
    WasAssociatedWith,
    WasAttributedTo,
    WasGeneratedBy,
    combine_records,
    format_timestamp,
    parse_qualified_id,
    parse_timestamp,
    utc_now,
    value_matches_type,
)

EVENT_EXTENSION = ".provlog.jsonl"

# kind -> (mandatory fields, optional fields)
EVENT_FIELDS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "activity_start": (("activity_id", "name", "time"), ("description_ref",)),
    "activity_end": (("activity_id", "time"), ()),
    "used": (("activity_id", "entity_id"), ("role", "time")),
    "generated": (("activity_id", "entity_id"), ("role", "time")),
    "entity": (("entity_id",), ("name", "location", "generated_at", "comment")),
    "agent": (("agent_id", "name", "kind"), ("email",)),
    "association": (("activity_id", "agent_id"), ("role",)),
    "attribution": (("entity_id", "agent_id"), ("role",)),
    "parameter": (("activity_id", "name", "value", "value_type"), ()),
    "description": (("description_id", "name"),
                    ("version", "doc", "docurl", "code_reference", "code_revision")),
}
ID_FIELDS = {"activity_id", "entity_id", "agent_id", "description_id", "description_ref"}
TIME_FIELDS = {"time", "generated_at"}


@dataclass
class CaptureEvent:
    kind: str
    fields: dict[str, Any]
    extra: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"event": self.kind}
        for name, value in self.fields.items():
            if value is None:
                continue
            if isinstance(value, QualifiedId):
                value = str(value)
            elif isinstance(value, (AgentKind, ValueType)):
                value = value.value
            obj[name] = value
        for name, value in self.extra.items():
            obj.setdefault(name, value)
        return obj

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)


def _stringify(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value, sort_keys=True)


def build_event(kind: str, raw: dict[str, Any], namespaces: dict[str, str],
                default_prefix: str = DEFAULT_PREFIX) -> CaptureEvent:
    if kind not in EVENT_FIELDS:
        raise UnknownEventKind(kind)
    mandatory, optional = EVENT_FIELDS[kind]
    fields: dict[str, Any] = {}
    for name in mandatory + optional:
        value = raw.get(name)
        if value is None:
            if name in mandatory:
                raise MissingField(kind, name)
            continue
        if not isinstance(value, str):
            if name == "value" and isinstance(value, (int, float, bool)):
                value = json.dumps(value)
            else:
                raise BadValue(name, repr(value), "expected a string")
        if name in ID_FIELDS:
            value = parse_qualified_id(value, namespaces, default_prefix)
        elif name in TIME_FIELDS:
            try:
                parse_timestamp(value)
            except ValueError:
                raise BadValue(name, value, "not an ISO-8601 UTC instant") from None
        elif name == "kind":
            try:
                value = AgentKind(value)
            except ValueError:
                raise BadValue(name, value) from None
        elif name == "value_type":
            try:
                value = ValueType(value)
            except ValueError:
                raise BadValue(name, value) from None
        elif name == "name" and not value:
            raise MissingField(kind, name)
        fields[name] = value
    if kind == "parameter" and not value_matches_type(fields["value"], fields["value_type"]):
        raise BadValue("value", fields["value"], f"not a valid {fields['value_type'].value}")
    known = set(mandatory) | set(optional) | {"event"}
    extra = {k: _stringify(v) for k, v in raw.items() if k not in known}
    return CaptureEvent(kind, fields, extra)


def parse_event_line(line: str, namespaces: dict[str, str] | None = None,
                     default_prefix: str = DEFAULT_PREFIX) -> CaptureEvent:
    """Parse one JSON-lines event; unknown keys are kept in ``extra``."""
    if namespaces is None:
        namespaces = DEFAULT_NAMESPACES
    if not line or not line.strip():
        raise MalformedJson("empty line")
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(raw, dict):
        raise MalformedJson("event line is not a JSON object")
    if "event" not in raw:
        raise MissingField("?", "event")
    return build_event(raw["event"], raw, namespaces, default_prefix)


def read_events(path: str | Path, namespaces: dict[str, str] | None = None,
                default_prefix: str = DEFAULT_PREFIX) -> list[CaptureEvent]:
    """Parse an event file, skipping blank lines; errors carry ``lineno``."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                events.append(parse_event_line(line, namespaces, default_prefix))
            except DataError as exc:
                exc.lineno = lineno
                raise
    return events


# -- folding ----------------------------------------------------------------

class _Folder:
    def __init__(self, namespaces: dict[str, str]) -> None:
        self.doc = ProvenanceDocument(namespaces=dict(namespaces))
        self.warnings: dict[tuple[str, str], Finding] = {}
        self.started: set[QualifiedId] = set()
        self.ended: set[QualifiedId] = set()
        self.relation_index: dict[tuple, int] = {}
        self.param_index: set[tuple[QualifiedId, str]] = set()

    def warn(self, code: str, subject: object) -> None:
        self.warnings.setdefault((code, str(subject)), Finding("warning", code, str(subject)))

    def declare(self, rec, section: str) -> None:
        records = getattr(self.doc, section)
        if rec.id in records:
            try:
                rec = combine_records(records[rec.id], False, rec, False)
            except ConflictingRecord:
                self.warn("CONFLICTING_EVENT", rec.id)
                return
        self.doc.add(rec)

    def ensure(self, section: str, rec_id: QualifiedId, factory) -> None:
        if rec_id not in getattr(self.doc, section):
            self.doc.add(factory(rec_id), stub=True)

    def ensure_started(self, activity_id: QualifiedId) -> Activity:
        if activity_id not in self.started:
            self.warn("EVENT_BEFORE_START", activity_id)
        self.ensure("activities", activity_id, Activity)
        return self.doc.activities[activity_id]

    def relate(self, rel) -> None:
        section = {Used: "used", WasGeneratedBy: "generated",
                   WasAssociatedWith: "associations", WasAttributedTo: "attributions"}[type(rel)]
        key = (section, rel.key)
        if key in self.relation_index:
            return
        rels = getattr(self.doc, section)
        self.relation_index[key] = len(rels)
        rels.append(rel)

    def apply(self, ev: CaptureEvent) -> None:
        f = ev.fields
        kind = ev.kind
        if kind == "activity_start":
            act_id = f["activity_id"]
            if act_id in self.started:
                self.warn("DUPLICATE_START", act_id)
            new = Activity(act_id, name=f["name"], start_time=f["time"],
                           description_ref=f.get("description_ref"), attributes=dict(ev.extra))
            existing = self.doc.activities.get(act_id)
            if existing is not None:
                try:
                    new = combine_records(existing, self.doc.is_stub(act_id), new, False)
                except ConflictingRecord:
                    self.warn("CONFLICTING_EVENT", act_id)
                    new = existing
            self.started.add(act_id)
            self.doc.add(new)
        elif kind == "activity_end":
            act_id = f["activity_id"]
            if act_id not in self.started:
                self.warn("END_WITHOUT_START", act_id)
                self.ensure("activities", act_id, Activity)
            act = self.doc.activities[act_id]
            act.end_time = f["time"]
            act.attributes.update(ev.extra)
            self.ended.add(act_id)
        elif kind in ("used", "generated"):
            act = self.ensure_started(f["activity_id"])
            act.attributes.update(ev.extra)
            self.ensure("entities", f["entity_id"], Entity)
            if kind == "used":
                self.relate(Used(f["activity_id"], f["entity_id"], f.get("role"), f.get("time")))
            else:
                self.relate(WasGeneratedBy(f["entity_id"], f["activity_id"], f.get("role"), f.get("time")))
        elif kind == "association":
            act = self.ensure_started(f["activity_id"])
            act.attributes.update(ev.extra)
            self.ensure("agents", f["agent_id"], Agent)
            self.relate(WasAssociatedWith(f["activity_id"], f["agent_id"], f.get("role")))
        elif kind == "attribution":
            self.ensure("entities", f["entity_id"], Entity)
            self.ensure("agents", f["agent_id"], Agent)
            self.doc.entities[f["entity_id"]].attributes.update(ev.extra)
            self.relate(WasAttributedTo(f["entity_id"], f["agent_id"], f.get("role")))
        elif kind == "parameter":
            act = self.ensure_started(f["activity_id"])
            act.attributes.update(ev.extra)
            pkey = (f["activity_id"], f["name"])
            if pkey in self.param_index:
                self.warn("CONFLICTING_EVENT", f"{pkey[0]}#{pkey[1]}")
                return
            self.param_index.add(pkey)
            self.doc.parameters.append(Parameter(f["activity_id"], f["name"], f["value"], f["value_type"]))


def fold_events(
    events: Iterable[CaptureEvent], namespaces: dict[str, str] | None = None
) -> tuple[ProvenanceDocument, list[Finding]]:
    """Build a document from an event stream.

    Entity, agent and description declarations are applied first, so a stub
    is only created for an id that no declaration in the stream describes.
    """
    events = list(events)
    folder = _Folder(namespaces or DEFAULT_NAMESPACES)
    for ev in events:
        f = ev.fields
        if ev.kind == "entity":
            folder.declare(Entity(f["entity_id"], name=f.get("name"), location=f.get("location"),
                                  generated_at=f.get("generated_at"), comment=f.get("comment"),
                                  attributes=dict(ev.extra)), "entities")
        elif ev.kind == "agent":
            folder.declare(Agent(f["agent_id"], name=f["name"], kind=f["kind"], email=f.get("email"),
                                 attributes=dict(ev.extra)), "agents")
        elif ev.kind == "description":
            folder.declare(ActivityDescription(
                f["description_id"], name=f["name"], version=f.get("version"), doc=f.get("doc"),
                docurl=f.get("docurl"), code_reference=f.get("code_reference"),
                code_revision=f.get("code_revision")), "descriptions")
    for ev in events:
        folder.apply(ev)
    for act_id in sorted(folder.started - folder.ended):
        folder.warn("UNCLOSED_ACTIVITY", act_id)
    warnings = sorted(folder.warnings.values(), key=lambda w: (w.code, w.subject))
    return folder.doc, warnings


# -- recording --------------------------------------------------------------

class LoggingSink:
    """Adapter that sends each event line through :mod:`logging`."""

    def __init__(self, logger: logging.Logger | str = "provkit.capture", level: int = logging.INFO) -> None:
        self.logger = logging.getLogger(logger) if isinstance(logger, str) else logger
        self.level = level

    def write(self, text: str) -> None:
        self.logger.log(self.level, text.rstrip("\n"))


@dataclass
class ActivityHandle:
    id: QualifiedId
    name: str
    closed: bool = False


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "activity"


def _encode_value(value: Any, value_type: ValueType | str | None) -> tuple[str, ValueType]:
    if value_type is None:
        if isinstance(value, bool):
            value_type = ValueType.BOOLEAN
        elif isinstance(value, int):
            value_type = ValueType.INTEGER
        elif isinstance(value, float):
            value_type = ValueType.REAL
        elif isinstance(value, datetime):
            value_type = ValueType.TIMESTAMP
        else:
            value_type = ValueType.STRING
    value_type = ValueType(value_type)
    if isinstance(value, bool):
        text = "true" if value else "false"
    elif isinstance(value, datetime):
        text = format_timestamp(value)
    else:
        text = str(value)
    return text, value_type


class RecorderSession:
    """Append-only provenance recorder for one thread of a pipeline."""

    def __init__(
        self,
        sink: TextIO | LoggingSink,
        *,
        namespaces: dict[str, str] | None = None,
        default_prefix: str = DEFAULT_PREFIX,
        token: str | None = None,
        clock: Callable[[], str] = utc_now,
    ) -> None:
        self.sink = sink
        self.namespaces = dict(namespaces or DEFAULT_NAMESPACES)
        self.default_prefix = default_prefix
        self.token = token or secrets.token_hex(4)
        self.clock = clock
        self.open_activities: set[QualifiedId] = set()
        self._counter = itertools.count(1)
        self._owned_file: TextIO | None = None

    @classmethod
    def to_file(cls, path: str | Path, **kwargs: Any) -> RecorderSession:
        fh = open(path, "a", encoding="utf-8")
        session = cls(fh, **kwargs)
        session._owned_file = fh
        return session

    def close(self) -> None:
        if self._owned_file is not None:
            self._owned_file.close()
            self._owned_file = None

    def __enter__(self) -> RecorderSession:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def _id(self, value: str | QualifiedId) -> QualifiedId:
        if isinstance(value, QualifiedId):
            return value
        return parse_qualified_id(value, self.namespaces, self.default_prefix)

    def _emit(self, event_kind: str, /, **fields: Any) -> CaptureEvent:
        event = build_event(event_kind, CaptureEvent(event_kind, fields).to_json(), self.namespaces,
                            self.default_prefix)
        self.sink.write(event.to_line() + "\n")
        flush = getattr(self.sink, "flush", None)
        if flush is not None:
            flush()
        return event

    def _check(self, handle: ActivityHandle) -> None:
        if handle.closed:
            raise UseAfterEnd(f"activity {handle.id} already ended")

    def declare_entity(self, entity_id: str | QualifiedId, name: str | None = None,
                       location: str | None = None, generated_at: str | None = None,
                       comment: str | None = None) -> QualifiedId:
        ent_id = self._id(entity_id)
        self._emit("entity", entity_id=ent_id, name=name, location=location,
                   generated_at=generated_at, comment=comment)
        return ent_id

    def declare_agent(self, agent_id: str | QualifiedId, name: str,
                      kind: AgentKind | str = AgentKind.PERSON, email: str | None = None) -> QualifiedId:
        ag_id = self._id(agent_id)
        self._emit("agent", agent_id=ag_id, name=name, kind=AgentKind(kind), email=email)
        return ag_id

    def declare_description(self, description_id: str | QualifiedId, name: str, version: str | None = None,
                            doc: str | None = None, docurl: str | None = None,
                            code_reference: str | None = None,
                            code_revision: str | None = None) -> QualifiedId:
        desc_id = self._id(description_id)
        self._emit("description", description_id=desc_id, name=name, version=version, doc=doc,
                   docurl=docurl, code_reference=code_reference, code_revision=code_revision)
        return desc_id

    def begin_activity(self, name: str, description_ref: str | QualifiedId | None = None) -> ActivityHandle:
        act_id = QualifiedId(self.default_prefix, f"{_slug(name)}_{next(self._counter)}_{self.token}")
        desc = self._id(description_ref) if description_ref is not None else None
        self._emit("activity_start", activity_id=act_id, name=name, time=self.clock(), description_ref=desc)
        self.open_activities.add(act_id)
        return ActivityHandle(act_id, name)

    def record_used(self, handle: ActivityHandle, entity_id: str | QualifiedId, role: str | None = None) -> None:
        self._check(handle)
        self._emit("used", activity_id=handle.id, entity_id=self._id(entity_id), role=role)

    def record_generated(self, handle: ActivityHandle, entity_id: str | QualifiedId,
                         role: str | None = None) -> None:
        self._check(handle)
        self._emit("generated", activity_id=handle.id, entity_id=self._id(entity_id), role=role)

    def set_parameter(self, handle: ActivityHandle, name: str, value: Any,
                      value_type: ValueType | str | None = None) -> None:
        self._check(handle)
        text, vtype = _encode_value(value, value_type)
        self._emit("parameter", activity_id=handle.id, name=name, value=text, value_type=vtype)

    def associate(self, handle: ActivityHandle, agent_id: str | QualifiedId, role: str | None = None) -> None:
        self._check(handle)
        self._emit("association", activity_id=handle.id, agent_id=self._id(agent_id), role=role)

    def attribute(self, entity_id: str | QualifiedId, agent_id: str | QualifiedId, role: str | None = None) -> None:
        self._emit("attribution", entity_id=self._id(entity_id), agent_id=self._id(agent_id), role=role)

    def end_activity(self, handle: ActivityHandle) -> None:
        self._check(handle)
        self._emit("activity_end", activity_id=handle.id, time=self.clock())
        handle.closed = True
        self.open_activities.discard(handle.id)

    @contextmanager
    def activity(self, name: str, description_ref: str | QualifiedId | None = None) -> Iterator[ActivityHandle]:
        handle = self.begin_activity(name, description_ref)
        try:
            yield handle
        finally:
            if not handle.closed:
                self.end_activity(handle)
