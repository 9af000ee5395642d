"""PROV-N text output (one statement per line, canonical order)."""

from __future__ import annotations

from provkit.model import ProvenanceDocument, relation_sort_key

_KIND_ORDER = ("entity", "activity", "agent", "activityDescription", "parameter",
               "used", "wasGeneratedBy", "wasAssociatedWith", "wasAttributedTo")


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _attrs(pairs: list[tuple[str, str]], user: dict[str, str] | None = None, stub: bool = False) -> str:
    items = [f"{k}={v}" for k, v in pairs]
    if user:
        items.extend(f"{k}={_quote(v)}" for k, v in sorted(user.items()))
    if stub:
        items.append('voprov:stub="true"')
    return f", [{', '.join(items)}]" if items else ""


def _opt(pairs: list[tuple[str, str]], key: str, value: object) -> None:
    if value:
        pairs.append((key, _quote(str(value))))


def to_prov_n(doc: ProvenanceDocument) -> str:
    statements: list[tuple[int, str, str]] = []

    def emit(kind: str, first: object, text: str) -> None:
        statements.append((_KIND_ORDER.index(kind), str(first), text))

    stubs = doc.incomplete_ids
    for ent in doc.entities.values():
        pairs: list[tuple[str, str]] = []
        _opt(pairs, "prov:label", ent.name)
        _opt(pairs, "prov:location", ent.location)
        if ent.generated_at:
            pairs.append(("voprov:generatedAtTime", f'{_quote(ent.generated_at)} %% xsd:dateTime'))
        _opt(pairs, "voprov:comment", ent.comment)
        emit("entity", ent.id, f"entity({ent.id}{_attrs(pairs, ent.attributes, ent.id in stubs)})")
    for act in doc.activities.values():
        pairs = []
        _opt(pairs, "prov:label", act.name)
        if act.description_ref is not None:
            pairs.append(("voprov:description", f"'{act.description_ref}'"))
        _opt(pairs, "voprov:comment", act.comment)
        emit("activity", act.id,
             f"activity({act.id}, {act.start_time or '-'}, {act.end_time or '-'}"
             f"{_attrs(pairs, act.attributes, act.id in stubs)})")
    for ag in doc.agents.values():
        pairs = [("prov:type", f"'prov:{ag.kind.value}'")]
        _opt(pairs, "prov:label", ag.name)
        _opt(pairs, "voprov:email", ag.email)
        emit("agent", ag.id, f"agent({ag.id}{_attrs(pairs, ag.attributes, ag.id in stubs)})")
    for desc in doc.descriptions.values():
        pairs = []
        _opt(pairs, "voprov:name", desc.name)
        _opt(pairs, "voprov:version", desc.version)
        _opt(pairs, "voprov:doc", desc.doc)
        _opt(pairs, "voprov:docurl", desc.docurl)
        _opt(pairs, "voprov:codeReference", desc.code_reference)
        _opt(pairs, "voprov:codeRevision", desc.code_revision)
        emit("activityDescription", desc.id,
             f"activityDescription({desc.id}{_attrs(pairs, stub=desc.id in stubs)})")
    for param in doc.parameters:
        pairs = [("voprov:value", _quote(param.value)), ("voprov:valueType", _quote(param.value_type.value))]
        emit("parameter", param.activity, f"parameter({param.activity}, {_quote(param.name)}{_attrs(pairs)})")

    def role(rel) -> list[tuple[str, str]]:
        return [("prov:role", _quote(rel.role))] if rel.role is not None else []

    for rel in sorted(doc.used, key=relation_sort_key):
        emit("used", rel.activity, f"used({rel.activity}, {rel.entity}, {rel.time or '-'}{_attrs(role(rel))})")
    for rel in sorted(doc.generated, key=relation_sort_key):
        emit("wasGeneratedBy", rel.entity,
             f"wasGeneratedBy({rel.entity}, {rel.activity}, {rel.time or '-'}{_attrs(role(rel))})")
    for rel in sorted(doc.associations, key=relation_sort_key):
        emit("wasAssociatedWith", rel.activity,
             f"wasAssociatedWith({rel.activity}, {rel.agent}, -{_attrs(role(rel))})")
    for rel in sorted(doc.attributions, key=relation_sort_key):
        emit("wasAttributedTo", rel.entity, f"wasAttributedTo({rel.entity}, {rel.agent}{_attrs(role(rel))})")

    lines = ["document"]
    lines.extend(f"  prefix {p} <{uri}>" for p, uri in sorted(doc.namespaces.items()) if p != "prov")
    lines.extend(f"  {text}" for _, _, text in sorted(statements))
    lines.append("endDocument")
    return "\n".join(lines) + "\n"
