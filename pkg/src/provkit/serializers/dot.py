"""Graphviz DOT output."""

from __future__ import annotations

from provkit.model import ProvenanceDocument
from provkit.serializers.graph import STYLES, graph_elements

HEADER = (
    '  graph [rankdir="BT", charset="utf-8"];',
    '  node [fontname="Helvetica", fontsize="10", color="#808080"];',
    '  edge [fontname="Helvetica", fontsize="8"];',
)


def _q(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def to_dot(doc: ProvenanceDocument) -> str:
    nodes, edges = graph_elements(doc)
    lines = ["digraph provenance {", *HEADER]
    for node in nodes:
        style = STYLES[node.kind]
        look = "filled,dashed" if node.stub else "filled"
        lines.append(f'  {_q(node.id)} [label={_q(node.label)}, shape={_q(style["shape"])}, '
                     f'style={_q(look)}, fillcolor={_q(style["fill"])}];')
    for edge in edges:
        extra = ', style="dashed"' if edge.dashed else ""
        lines.append(f"  {_q(edge.tail)} -> {_q(edge.head)} [label={_q(edge.label)}{extra}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
