"""Fixtures shared by the test modules: a scripted pipeline, a chain, random DAGs."""

from __future__ import annotations

import io
import random
from collections import deque
from datetime import datetime, timedelta, timezone

from provkit.capture import RecorderSession
from provkit.model import (
    Activity,
    ActivityDescription,
    Agent,
    AgentKind,
    Entity,
    Parameter,
    ProvenanceDocument,
    Used,
    ValueType,
    WasAssociatedWith,
    WasAttributedTo,
    WasGeneratedBy,
    format_timestamp,
    qid,
)
from provkit.store import Direction

T0 = datetime(2024, 3, 1, 12, 0, 0, tzinfo=timezone.utc)
TOKEN = "t0k3n"


def ts(seconds: int) -> str:
    return format_timestamp(T0 + timedelta(seconds=seconds))


def fixed_clock():
    counter = iter(range(10_000))
    return lambda: ts(next(counter))


# -- chain raw -> a1 -> lvl1 -> a2 -> lvl2 ------------------------------------

def chain_doc() -> ProvenanceDocument:
    doc = ProvenanceDocument()
    for name in ("raw", "lvl1", "lvl2"):
        doc.add(Entity(qid(f"ex:{name}"), name=name))
    doc.add(Activity(qid("ex:a1"), name="a1"))
    doc.add(Activity(qid("ex:a2"), name="a2"))
    doc.add(Used(qid("ex:a1"), qid("ex:raw")))
    doc.add(WasGeneratedBy(qid("ex:lvl1"), qid("ex:a1")))
    doc.add(Used(qid("ex:a2"), qid("ex:lvl1")))
    doc.add(WasGeneratedBy(qid("ex:lvl2"), qid("ex:a2")))
    return doc


# -- scripted three-stage pipeline -------------------------------------------

def act_id(name: str, n: int) -> str:
    return f"ex:{name}_{n}_{TOKEN}"


GENERATED = ("ex:cal_img", "ex:cal_log", "ex:reduced", "ex:qc", "ex:science")


def run_pipeline(sink) -> RecorderSession:
    """raw + bias -> calibrate -> reduce -> make_product, recorded through the API."""
    rec = RecorderSession(sink, token=TOKEN, clock=fixed_clock())
    rec.declare_agent("ex:alice", "Alice Smith", AgentKind.PERSON, email="alice@example.org")
    rec.declare_agent("ex:pipe", "reduction pipeline", AgentKind.SOFTWARE_AGENT)
    rec.declare_description("ex:calib_sw", "calibrator", version="2.1",
                            docurl="https://example.org/calibrator",
                            code_reference="https://git.example.org/calibrator", code_revision="a1b2c3")
    rec.declare_entity("ex:raw", name="raw exposure", location="file:///data/raw.fits")
    rec.declare_entity("ex:bias", name="master bias", location="file:///data/bias.fits")

    with rec.activity("calibrate", description_ref="ex:calib_sw") as a1:
        rec.associate(a1, "ex:pipe")
        rec.record_used(a1, "ex:raw", "science")
        rec.record_used(a1, "ex:bias", "bias")
        rec.set_parameter(a1, "gain", 1.5)
        rec.set_parameter(a1, "overscan", True)
        rec.declare_entity("ex:cal_img", name="calibrated image", location="file:///data/cal.fits")
        rec.declare_entity("ex:cal_log", name="calibration log", location="file:///data/cal.log")
        rec.record_generated(a1, "ex:cal_img")
        rec.record_generated(a1, "ex:cal_log")

    with rec.activity("reduce") as a2:
        rec.associate(a2, "ex:pipe")
        rec.record_used(a2, "ex:cal_img")
        rec.set_parameter(a2, "sigma_clip", 3)
        rec.declare_entity("ex:reduced", name="reduced image", location="file:///data/red.fits")
        rec.declare_entity("ex:qc", name="quality report")
        rec.record_generated(a2, "ex:reduced")
        rec.record_generated(a2, "ex:qc")

    with rec.activity("make_product") as a3:
        rec.associate(a3, "ex:alice", "operator")
        rec.record_used(a3, "ex:reduced")
        rec.set_parameter(a3, "product_format", "FITS")
        rec.declare_entity("ex:science", name="science product",
                           location="https://archive.example.org/products/science_product_v1.fits")
        rec.record_generated(a3, "ex:science")

    for ent in GENERATED:
        rec.attribute(ent, "ex:alice", "contact")
    return rec


def pipeline_lines() -> list[str]:
    buf = io.StringIO()
    run_pipeline(buf)
    return buf.getvalue().splitlines()


def expected_pipeline_doc() -> ProvenanceDocument:
    """The same pipeline, built directly from the call arguments."""
    doc = ProvenanceDocument()
    a1, a2, a3 = qid(act_id("calibrate", 1)), qid(act_id("reduce", 2)), qid(act_id("make_product", 3))
    doc.add(Agent(qid("ex:alice"), "Alice Smith", AgentKind.PERSON, "alice@example.org"))
    doc.add(Agent(qid("ex:pipe"), "reduction pipeline", AgentKind.SOFTWARE_AGENT))
    doc.add(ActivityDescription(qid("ex:calib_sw"), "calibrator", version="2.1",
                                docurl="https://example.org/calibrator",
                                code_reference="https://git.example.org/calibrator", code_revision="a1b2c3"))
    ents = {
        "ex:raw": ("raw exposure", "file:///data/raw.fits"),
        "ex:bias": ("master bias", "file:///data/bias.fits"),
        "ex:cal_img": ("calibrated image", "file:///data/cal.fits"),
        "ex:cal_log": ("calibration log", "file:///data/cal.log"),
        "ex:reduced": ("reduced image", "file:///data/red.fits"),
        "ex:qc": ("quality report", None),
        "ex:science": ("science product", "https://archive.example.org/products/science_product_v1.fits"),
    }
    for ent_id, (name, loc) in ents.items():
        doc.add(Entity(qid(ent_id), name=name, location=loc))
    doc.add(Activity(a1, "calibrate", ts(0), ts(1), description_ref=qid("ex:calib_sw")))
    doc.add(Activity(a2, "reduce", ts(2), ts(3)))
    doc.add(Activity(a3, "make_product", ts(4), ts(5)))
    doc.add(WasAssociatedWith(a1, qid("ex:pipe")))
    doc.add(WasAssociatedWith(a2, qid("ex:pipe")))
    doc.add(WasAssociatedWith(a3, qid("ex:alice"), "operator"))
    doc.add(Used(a1, qid("ex:raw"), "science"))
    doc.add(Used(a1, qid("ex:bias"), "bias"))
    doc.add(Used(a2, qid("ex:cal_img")))
    doc.add(Used(a3, qid("ex:reduced")))
    for ent, act in (("ex:cal_img", a1), ("ex:cal_log", a1), ("ex:reduced", a2), ("ex:qc", a2),
                     ("ex:science", a3)):
        doc.add(WasGeneratedBy(qid(ent), act))
    doc.add(Parameter(a1, "gain", "1.5", ValueType.REAL))
    doc.add(Parameter(a1, "overscan", "true", ValueType.BOOLEAN))
    doc.add(Parameter(a2, "sigma_clip", "3", ValueType.INTEGER))
    doc.add(Parameter(a3, "product_format", "FITS", ValueType.STRING))
    for ent in GENERATED:
        doc.add(WasAttributedTo(qid(ent), qid("ex:alice"), "contact"))
    return doc


# -- random valid documents -----------------------------------------------------

_WORDS = ("alpha", "beta", "gamma", "delta", "flat field", "naïve", "quote\"d", "tab\tand\nnewline", "x")
_ASCII_WORDS = ("alpha", "beta", "flat field", "it's", "quote\"d", "x")


def random_document(rng: random.Random, n_records: int, *, extras: bool = True,
                    stubs: bool = True, ascii_only: bool = False) -> ProvenanceDocument:
    """A valid (acyclic, single-generation) document of about ``n_records`` records.

    Activities are created in topological order: each one uses entities that
    already exist and generates fresh ones, which rules out cycles.
    """
    doc = ProvenanceDocument()
    words = _ASCII_WORDS if ascii_only else _WORDS
    entities: list = []
    n_agents = max(1, n_records // 20) if extras else 0
    n_desc = max(1, n_records // 30) if extras else 0
    agents = [qid(f"ex:ag{i}") for i in range(n_agents)]
    descs = [qid(f"ex:desc{i}") for i in range(n_desc)]
    for i, ag in enumerate(agents):
        doc.add(Agent(ag, f"agent {i}", rng.choice(list(AgentKind)),
                      email=f"a{i}@example.org" if rng.random() < 0.5 else None))
    for i, d in enumerate(descs):
        doc.add(ActivityDescription(d, f"tool {i}", version=rng.choice([None, "1.0", "2.3b"]),
                                    doc=rng.choice([None, "does things"]),
                                    docurl=rng.choice([None, "https://example.org/doc"]),
                                    code_reference=rng.choice([None, "https://git.example.org/t"]),
                                    code_revision=rng.choice([None, "deadbeef"])))

    def new_entity() -> object:
        eid = qid(f"ex:e{len(entities)}")
        stub = stubs and rng.random() < 0.05
        if stub:
            doc.add(Entity(eid), stub=True)
        else:
            attrs = {"ex:quality": rng.choice(words)} if extras and rng.random() < 0.3 else {}
            doc.add(Entity(eid, name=rng.choice([None, *words]),
                           location=rng.choice([None, f"file:///d/{len(entities)}.fits"]),
                           generated_at=rng.choice([None, ts(len(entities))]), attributes=attrs))
        entities.append(eid)
        return eid

    for _ in range(rng.randint(1, 3)):
        new_entity()
    n_act = 0
    budget = n_records - len(doc.agents) - len(doc.descriptions)
    while len(doc.entities) + len(doc.activities) < budget:
        aid = qid(f"ex:a{n_act}")
        start = rng.randint(0, 1000)
        doc.add(Activity(aid, name=rng.choice([None, f"step {n_act}"]),
                         start_time=rng.choice([None, ts(start)]),
                         end_time=rng.choice([None, ts(start + rng.randint(0, 50))]),
                         description_ref=rng.choice([None, *descs]) if descs else None,
                         attributes={"ex:host": "node1"} if extras and rng.random() < 0.2 else {}))
        n_act += 1
        for ent in rng.sample(entities, min(len(entities), rng.randint(0, 3))):
            doc.add(Used(aid, ent, rng.choice([None, None, "input", "calib"]),
                         rng.choice([None, ts(start)])))
        for _ in range(rng.randint(1, 3)):
            ent = new_entity()
            doc.add(WasGeneratedBy(ent, aid, rng.choice([None, "output"])))
        if extras:
            for pn in range(rng.randint(0, 2)):
                vtype = rng.choice(list(ValueType))
                value = {ValueType.STRING: "abc", ValueType.INTEGER: str(rng.randint(-9, 99)),
                         ValueType.REAL: "2.5e-3", ValueType.BOOLEAN: "true",
                         ValueType.TIMESTAMP: ts(pn)}[vtype]
                doc.add(Parameter(aid, f"p{pn}", value, vtype))
            if agents and rng.random() < 0.5:
                doc.add(WasAssociatedWith(aid, rng.choice(agents), rng.choice([None, "operator"])))
    if agents:
        for ent in rng.sample(entities, min(len(entities), 3)):
            doc.add(WasAttributedTo(ent, rng.choice(agents), rng.choice([None, "contact"])))
    doc.parameters.sort(key=lambda p: (str(p.activity), p.name))
    return doc


# -- brute-force traversal oracle --------------------------------------------

def bfs_closure(doc: ProvenanceDocument, start, direction: Direction) -> set:
    """Entities and activities reachable from ``start``, by plain BFS over relation lists.

    Follows the bipartite arcs the way the traversal rules describe them:
    backward: entity -> its generator -> everything it generated and used;
    forward: entity -> activities using it -> everything they generated.
    Continues from used entities (backward) or generated entities (forward).
    """
    seen = {start}
    queue = deque()
    if start in doc.activities:
        queue.append(("act", start))
    else:
        queue.append(("ent", start))
    expanded = set()
    while queue:
        kind, node = queue.popleft()
        if kind == "ent":
            if direction is Direction.BACKWARD:
                acts = [g.activity for g in doc.generated if g.entity == node]
            else:
                acts = [u.activity for u in doc.used if u.entity == node]
            for a in acts:
                if a not in expanded:
                    queue.append(("act", a))
            continue
        if node in expanded:
            continue
        expanded.add(node)
        seen.add(node)
        outs = [g.entity for g in doc.generated if g.activity == node]
        ins = [u.entity for u in doc.used if u.activity == node]
        seen.update(outs)
        if direction is Direction.BACKWARD:
            seen.update(ins)
        nxt = ins if direction is Direction.BACKWARD else outs
        for e in nxt:
            queue.append(("ent", e))
    return seen


def graph_ids(doc: ProvenanceDocument) -> set:
    return set(doc.entities) | set(doc.activities)
