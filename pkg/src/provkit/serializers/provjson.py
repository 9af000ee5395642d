"""PROV-JSON reading and canonical writing."""

from __future__ import annotations

import json
from typing import Any

from provkit.errors import BadRecord, EmptyId, MalformedJson, UnknownPrefix, UnknownSection
from provkit.model import (
    DEFAULT_NAMESPACES,
    DEFAULT_PREFIX,
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
    parse_qualified_id,
    relation_sort_key,
)

STUB_KEY = "voprov:stub"

ENTITY_FIELDS = {"name": "prov:label", "location": "prov:location",
                 "generated_at": "voprov:generatedAtTime", "comment": "voprov:comment"}
ACTIVITY_FIELDS = {"name": "prov:label", "start_time": "prov:startTime", "end_time": "prov:endTime",
                   "description_ref": "voprov:description", "comment": "voprov:comment"}
AGENT_FIELDS = {"name": "prov:label", "email": "voprov:email"}
DESCRIPTION_FIELDS = {"name": "voprov:name", "version": "voprov:version", "doc": "voprov:doc",
                      "docurl": "voprov:docurl", "code_reference": "voprov:codeReference",
                      "code_revision": "voprov:codeRevision"}

# section -> (relation class, id letter, subject key, object key, has time)
RELATION_SECTIONS = {
    "used": (Used, "u", "prov:activity", "prov:entity", True),
    "wasGeneratedBy": (WasGeneratedBy, "g", "prov:entity", "prov:activity", True),
    "wasAssociatedWith": (WasAssociatedWith, "w", "prov:activity", "prov:agent", False),
    "wasAttributedTo": (WasAttributedTo, "t", "prov:entity", "prov:agent", False),
}
_DOC_RELATIONS = {Used: "used", WasGeneratedBy: "generated",
                  WasAssociatedWith: "associations", WasAttributedTo: "attributions"}
SECTIONS = ("prefix", "entity", "activity", "agent", "activityDescription", "parameter",
            *RELATION_SECTIONS)


def _record_attrs(rec, fields: dict[str, str], stub: bool) -> dict[str, str]:
    out: dict[str, str] = {}
    for attr, key in fields.items():
        value = getattr(rec, attr)
        if value:
            out[key] = str(value)
    out.update(getattr(rec, "attributes", {}))
    if stub:
        out[STUB_KEY] = "true"
    return out


def to_prov_json_dict(doc: ProvenanceDocument) -> dict[str, Any]:
    out: dict[str, Any] = {"prefix": dict(doc.namespaces)}
    stubs = doc.incomplete_ids
    if doc.entities:
        out["entity"] = {str(i): _record_attrs(r, ENTITY_FIELDS, i in stubs) for i, r in doc.entities.items()}
    if doc.activities:
        out["activity"] = {str(i): _record_attrs(r, ACTIVITY_FIELDS, i in stubs)
                           for i, r in doc.activities.items()}
    if doc.agents:
        agents = {}
        for i, r in doc.agents.items():
            attrs = _record_attrs(r, AGENT_FIELDS, i in stubs)
            attrs["prov:type"] = f"prov:{r.kind.value}"
            agents[str(i)] = attrs
        out["agent"] = agents
    if doc.descriptions:
        out["activityDescription"] = {str(i): _record_attrs(r, DESCRIPTION_FIELDS, i in stubs)
                                      for i, r in doc.descriptions.items()}
    if doc.parameters:
        params = sorted(doc.parameters, key=lambda p: (str(p.activity), p.name))
        out["parameter"] = {
            f"_:p{n}": {"voprov:activity": str(p.activity), "voprov:name": p.name,
                        "voprov:value": p.value, "voprov:valueType": p.value_type.value}
            for n, p in enumerate(params, 1)
        }
    for section, (cls, letter, subj_key, obj_key, has_time) in RELATION_SECTIONS.items():
        rels = sorted(getattr(doc, _DOC_RELATIONS[cls]), key=relation_sort_key)
        if not rels:
            continue
        block = {}
        for n, rel in enumerate(rels, 1):
            subject, obj, role = rel.key
            entry = {subj_key: str(subject), obj_key: str(obj)}
            if role is not None:
                entry["prov:role"] = role
            if has_time and rel.time is not None:
                entry["prov:time"] = rel.time
            block[f"_:{letter}{n}"] = entry
        out[section] = block
    return out


def to_prov_json(doc: ProvenanceDocument) -> str:
    return json.dumps(to_prov_json_dict(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class _Reader:
    def __init__(self, namespaces: dict[str, str], defaults: dict[str, str], default_prefix: str) -> None:
        self.namespaces = namespaces
        self.defaults = defaults
        self.default_prefix = default_prefix

    def qid(self, text: Any, where: str) -> QualifiedId:
        if not isinstance(text, str):
            raise BadRecord(where, f"identifier must be a string, got {text!r}")
        prefix = text.partition(":")[0] if ":" in text else self.default_prefix
        if prefix not in self.namespaces and prefix in self.defaults:
            self.namespaces[prefix] = self.defaults[prefix]
        try:
            return parse_qualified_id(text, self.namespaces, self.default_prefix)
        except (UnknownPrefix, EmptyId) as exc:
            raise BadRecord(where, str(exc)) from None


def _scalar(value: Any, where: str) -> str:
    if isinstance(value, dict) and "$" in value:
        value = value["$"]
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float, bool)):
        return json.dumps(value)
    raise BadRecord(where, f"unsupported attribute value {value!r}")


def _records(section: str, block: Any) -> list[tuple[str, dict[str, str]]]:
    if not isinstance(block, dict):
        raise BadRecord(section, "section must be a JSON object")
    out = []
    for key, attrs in block.items():
        if not isinstance(attrs, dict):
            raise BadRecord(key, "record must be a JSON object")
        out.append((key, {k: _scalar(v, key) for k, v in attrs.items()}))
    return out


def _take(attrs: dict[str, str], fields: dict[str, str]) -> dict[str, str | None]:
    return {attr: attrs.pop(key, None) for attr, key in fields.items()}


def from_prov_json(text: str, namespaces: dict[str, str] | None = None,
                   default_prefix: str = DEFAULT_PREFIX) -> ProvenanceDocument:
    """Parse PROV-JSON produced by :func:`to_prov_json` (or compatible)."""
    defaults = dict(namespaces or DEFAULT_NAMESPACES)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedJson("top level must be a JSON object")
    for name in obj:
        if name not in SECTIONS:
            raise UnknownSection(name)

    prefix_block = obj.get("prefix", {})
    if not isinstance(prefix_block, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in prefix_block.items()):
        raise BadRecord("prefix", "prefix section must map strings to strings")
    ns = dict(prefix_block)
    for required in ("prov", default_prefix):
        if required not in ns and required in defaults:
            ns[required] = defaults[required]
    reader = _Reader(ns, defaults, default_prefix)
    doc = ProvenanceDocument(namespaces=ns)

    def stub_flag(key: str, attrs: dict[str, str]) -> bool:
        flag = attrs.pop(STUB_KEY, None)
        if flag not in (None, "true", "false"):
            raise BadRecord(key, f"bad {STUB_KEY} value {flag!r}")
        return flag == "true"

    for key, attrs in _records("entity", obj.get("entity", {})):
        rid = reader.qid(key, key)
        stub = stub_flag(key, attrs)
        doc.add(Entity(rid, **_take(attrs, ENTITY_FIELDS), attributes=attrs), stub=stub)
    for key, attrs in _records("activity", obj.get("activity", {})):
        rid = reader.qid(key, key)
        stub = stub_flag(key, attrs)
        fields = _take(attrs, ACTIVITY_FIELDS)
        if fields["description_ref"] is not None:
            fields["description_ref"] = reader.qid(fields["description_ref"], key)
        doc.add(Activity(rid, **fields, attributes=attrs), stub=stub)
    for key, attrs in _records("agent", obj.get("agent", {})):
        rid = reader.qid(key, key)
        stub = stub_flag(key, attrs)
        fields = _take(attrs, AGENT_FIELDS)
        ptype = attrs.pop("prov:type", "prov:Person")
        try:
            kind = AgentKind(ptype.split(":", 1)[-1])
        except ValueError:
            raise BadRecord(key, f"unsupported agent type {ptype!r}") from None
        doc.add(Agent(rid, name=fields["name"] or "", kind=kind, email=fields["email"],
                      attributes=attrs), stub=stub)
    for key, attrs in _records("activityDescription", obj.get("activityDescription", {})):
        rid = reader.qid(key, key)
        stub = stub_flag(key, attrs)
        fields = _take(attrs, DESCRIPTION_FIELDS)
        if attrs:
            raise BadRecord(key, f"unexpected keys {sorted(attrs)}")
        fields["name"] = fields["name"] or ""
        doc.add(ActivityDescription(rid, **fields), stub=stub)
    for key, attrs in _records("parameter", obj.get("parameter", {})):
        try:
            act = reader.qid(attrs.pop("voprov:activity"), key)
            name = attrs.pop("voprov:name")
            value = attrs.pop("voprov:value")
            vtype = ValueType(attrs.pop("voprov:valueType", "string"))
        except (KeyError, ValueError) as exc:
            raise BadRecord(key, f"bad parameter record ({exc})") from None
        if attrs:
            raise BadRecord(key, f"unexpected keys {sorted(attrs)}")
        doc.add(Parameter(act, name, value, vtype))
    for section, (cls, _letter, subj_key, obj_key, has_time) in RELATION_SECTIONS.items():
        for key, attrs in _records(section, obj.get(section, {})):
            if subj_key not in attrs or obj_key not in attrs:
                raise BadRecord(key, f"{section} needs {subj_key} and {obj_key}")
            args = [reader.qid(attrs.pop(subj_key), key), reader.qid(attrs.pop(obj_key), key),
                    attrs.pop("prov:role", None)]
            if has_time:
                args.append(attrs.pop("prov:time", None))
            if attrs:
                raise BadRecord(key, f"unsupported relation attributes {sorted(attrs)}")
            doc.add(cls(*args))
    return doc
