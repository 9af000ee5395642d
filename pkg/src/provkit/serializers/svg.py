"""Self-contained SVG rendering with deterministic layered layout.

Nodes are layered by longest path from the final products (layer 0, top)
back towards raw inputs; within a layer they are ordered by id.
"""

from __future__ import annotations

from collections import defaultdict, deque
from xml.sax.saxutils import escape, quoteattr

from provkit.errors import CyclicGraph
from provkit.model import ProvenanceDocument, graph_arcs, strongly_connected_cycles
from provkit.serializers.graph import STYLES, Edge, Node, graph_elements

NODE_W = 160
NODE_H = 40
H_GAP = 30
V_GAP = 60
MARGIN = 20
MAX_LABEL = 24


def layer_nodes(nodes: list[Node], edges: list[Edge]) -> dict[str, int]:
    """Longest-path layering over edges oriented product -> source."""
    succ: dict[str, list[str]] = defaultdict(list)
    indeg = {n.id: 0 for n in nodes}
    for e in edges:
        succ[e.tail].append(e.head)
        indeg[e.head] += 1
    layer = {n.id: 0 for n in nodes}
    queue = deque(sorted(n for n, d in indeg.items() if d == 0))
    while queue:
        node = queue.popleft()
        for nxt in sorted(succ[node]):
            layer[nxt] = max(layer[nxt], layer[node] + 1)
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    return layer


def _shape(node: Node, x: int, y: int) -> str:
    kind = STYLES[node.kind]["shape"]
    fill = STYLES[node.kind]["fill"]
    dash = ' stroke-dasharray="4,3"' if node.stub else ""
    common = f'fill="{fill}" stroke="#808080"{dash}'
    cx, cy = x + NODE_W // 2, y + NODE_H // 2
    if kind == "ellipse":
        return f'<ellipse cx="{cx}" cy="{cy}" rx="{NODE_W // 2}" ry="{NODE_H // 2}" {common}/>'
    if kind == "house":
        roof = NODE_H // 3
        pts = [(cx, y), (x + NODE_W, y + roof), (x + NODE_W, y + NODE_H), (x, y + NODE_H), (x, y + roof)]
        return f'<polygon points="{" ".join(f"{px},{py}" for px, py in pts)}" {common}/>'
    if kind == "note":
        fold = 10
        pts = [(x, y), (x + NODE_W - fold, y), (x + NODE_W, y + fold), (x + NODE_W, y + NODE_H), (x, y + NODE_H)]
        return f'<polygon points="{" ".join(f"{px},{py}" for px, py in pts)}" {common}/>'
    return f'<rect x="{x}" y="{y}" width="{NODE_W}" height="{NODE_H}" {common}/>'


def to_svg(doc: ProvenanceDocument) -> str:
    cycles = strongly_connected_cycles((), graph_arcs(doc))
    if cycles:
        raise CyclicGraph(f"cycle through {', '.join(str(n) for n in cycles[0])}")
    nodes, edges = graph_elements(doc)
    # every PROV arrow (used, wasGeneratedBy, ...) already points from the
    # more derived record towards its sources
    layer = layer_nodes(nodes, edges)

    rows: dict[int, list[Node]] = defaultdict(list)
    for node in nodes:
        rows[layer[node.id]].append(node)
    pos: dict[str, tuple[int, int]] = {}
    for depth, row in rows.items():
        for i, node in enumerate(sorted(row, key=lambda n: n.id)):
            pos[node.id] = (MARGIN + i * (NODE_W + H_GAP), MARGIN + depth * (NODE_H + V_GAP))
    width = max([len(r) for r in rows.values()] or [0]) * (NODE_W + H_GAP) - H_GAP + 2 * MARGIN
    height = (max(rows) + 1 if rows else 0) * (NODE_H + V_GAP) - V_GAP + 2 * MARGIN
    width, height = max(width, 2 * MARGIN), max(height, 2 * MARGIN)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="11">',
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="8" '
        'markerHeight="8" orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" fill="#555555"/>'
        '</marker></defs>',
    ]
    for edge in edges:
        (x1, y1), (x2, y2) = pos[edge.tail], pos[edge.head]
        sx, tx = x1 + NODE_W // 2, x2 + NODE_W // 2
        if y2 > y1:
            sy, ty = y1 + NODE_H, y2
        elif y2 < y1:
            sy, ty = y1, y2 + NODE_H
        else:
            sy = ty = y1 + NODE_H // 2
            sx, tx = (x1 + NODE_W, x2) if x2 > x1 else (x1, x2 + NODE_W)
        dash = ' stroke-dasharray="4,3"' if edge.dashed else ""
        name = edge.label.split(" ", 1)[0]
        out.append(f'<g class="edge {name}"><line x1="{sx}" y1="{sy}" x2="{tx}" y2="{ty}" '
                   f'stroke="#555555"{dash} marker-end="url(#arrow)"/>'
                   f'<text x="{(sx + tx) // 2 + 4}" y="{(sy + ty) // 2}" font-size="9">'
                   f'{escape(edge.label)}</text></g>')
    for node in nodes:
        x, y = pos[node.id]
        label = node.label if len(node.label) <= MAX_LABEL else node.label[:MAX_LABEL - 3] + "..."
        out.append(f'<g class="node {node.kind}" id={quoteattr(node.id)}>'
                   f'<title>{escape(node.id)}</title>{_shape(node, x, y)}'
                   f'<text x="{x + NODE_W // 2}" y="{y + NODE_H // 2 + 4}" text-anchor="middle">'
                   f'{escape(label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
