"""Node/edge view of a document shared by the DOT and SVG writers."""

from __future__ import annotations

from dataclasses import dataclass

from provkit.model import ProvenanceDocument

# W3C PROV visual convention
STYLES = {
    "entity": {"shape": "ellipse", "fill": "#FFFC87"},
    "activity": {"shape": "box", "fill": "#9FB1FC"},
    "agent": {"shape": "house", "fill": "#FED37F"},
    "description": {"shape": "note", "fill": "#DDDDDD"},
    "parameter": {"shape": "note", "fill": "#F2F2F2"},
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    label: str
    stub: bool = False


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    label: str
    dashed: bool = False


def parameter_node_id(activity: object, name: str) -> str:
    return f"{activity}#{name}"


def graph_elements(doc: ProvenanceDocument) -> tuple[list[Node], list[Edge]]:
    nodes: dict[str, Node] = {}
    stubs = doc.incomplete_ids

    def add(node: Node) -> None:
        nodes.setdefault(node.id, node)

    for kind, section in (("entity", doc.entities), ("activity", doc.activities),
                          ("agent", doc.agents), ("description", doc.descriptions)):
        for rid, rec in section.items():
            add(Node(str(rid), kind, rec.name or str(rid), rid in stubs))

    edges: list[Edge] = []
    for rel in doc.used:
        edges.append(Edge(str(rel.activity), str(rel.entity), _label("used", rel.role)))
    for rel in doc.generated:
        edges.append(Edge(str(rel.entity), str(rel.activity), _label("wasGeneratedBy", rel.role)))
    for rel in doc.associations:
        edges.append(Edge(str(rel.activity), str(rel.agent), _label("wasAssociatedWith", rel.role)))
    for rel in doc.attributions:
        edges.append(Edge(str(rel.entity), str(rel.agent), _label("wasAttributedTo", rel.role)))
    for act in doc.activities.values():
        if act.description_ref is not None and act.description_ref in doc.descriptions:
            edges.append(Edge(str(act.id), str(act.description_ref), "description", dashed=True))
    for param in doc.parameters:
        pid = parameter_node_id(param.activity, param.name)
        add(Node(pid, "parameter", f"{param.name} = {param.value}"))
        edges.append(Edge(str(param.activity), pid, "parameter", dashed=True))

    # endpoints known only through a relation are drawn as stubs
    kinds = {"used": ("activity", "entity"), "wasGeneratedBy": ("entity", "activity"),
             "wasAssociatedWith": ("activity", "agent"), "wasAttributedTo": ("entity", "agent")}
    for edge in edges:
        rel_name = edge.label.split(" ", 1)[0]
        if rel_name in kinds:
            tail_kind, head_kind = kinds[rel_name]
            add(Node(edge.tail, tail_kind, edge.tail, True))
            add(Node(edge.head, head_kind, edge.head, True))

    return (sorted(nodes.values(), key=lambda n: n.id),
            sorted(set(edges), key=lambda e: (e.tail, e.head, e.label)))


def _label(name: str, role: str | None) -> str:
    return f"{name} ({role})" if role else name
