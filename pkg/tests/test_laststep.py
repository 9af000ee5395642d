import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provkit.capture import fold_events, parse_event_line
from provkit.errors import DuplicateKeyword, InvalidRecord, MalformedCard, NoProvenance, NotFound, TooManyIndexed
from provkit.laststep import (
    LastStepRecord,
    build_laststep,
    emit_header_cards,
    indexed_keyword,
    pack_header,
    parse_header_cards,
    read_fits_header,
    read_header_file,
    reconstruct,
    scan_directory,
    write_card_file,
)
from provkit.model import Agent, Entity, ProvenanceDocument, WasAttributedTo, WasGeneratedBy, qid
from provkit.store import ProvenanceStore
from support import GENERATED, chain_doc, expected_pipeline_doc, pipeline_lines, random_document

KEYWORD_CHARS = set("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-")


@pytest.fixture
def chain_store(tmp_path):
    with ProvenanceStore(tmp_path / "s") as store:
        store.ingest_document(chain_doc())
        yield store


def keywords(cards):
    return [c[:8].rstrip() for c in cards]


# -- building --

def test_build_lvl2(chain_store):
    rec = build_laststep(chain_store, qid("ex:lvl2"))
    assert rec == LastStepRecord("ex:lvl2", entity_name="lvl2", activity_id="ex:a2", activity_name="a2",
                                 used_ids=["ex:lvl1"], sibling_generated_ids=[])


def test_build_without_generator(chain_store):
    assert build_laststep(chain_store, qid("ex:raw")) == LastStepRecord("ex:raw", entity_name="raw")


def test_build_unknown(chain_store):
    with pytest.raises(NotFound):
        build_laststep(chain_store, qid("ex:nope"))
    with pytest.raises(NotFound):
        build_laststep(chain_store, qid("ex:a1"))


def test_build_siblings(tmp_path):
    doc = chain_doc()
    doc.add(Entity(qid("ex:qc_report")))
    doc.add(WasGeneratedBy(qid("ex:qc_report"), qid("ex:a2")))
    with ProvenanceStore(tmp_path / "s") as store:
        store.ingest_document(doc)
        assert build_laststep(store, qid("ex:lvl2")).sibling_generated_ids == ["ex:qc_report"]
        assert build_laststep(store, qid("ex:qc_report")).sibling_generated_ids == ["ex:lvl2"]


def test_contact_selection(tmp_path):
    doc = ProvenanceDocument()
    doc.add(Entity(qid("ex:e")))
    doc.add(Entity(qid("ex:f")))
    for ag in ("ex:zed", "ex:bob", "ex:amy"):
        doc.add(Agent(qid(ag), ag[3:].title(), email=f"{ag[3:]}@example.org"))
    doc.add(WasAttributedTo(qid("ex:e"), qid("ex:amy")))
    doc.add(WasAttributedTo(qid("ex:e"), qid("ex:zed"), "contact"))
    doc.add(WasAttributedTo(qid("ex:f"), qid("ex:zed")))
    doc.add(WasAttributedTo(qid("ex:f"), qid("ex:bob"), "author"))
    with ProvenanceStore(tmp_path / "s") as store:
        store.ingest_document(doc)
        e = build_laststep(store, qid("ex:e"))
        assert (e.contact_id, e.contact_name, e.contact_email) == ("ex:zed", "Zed", "zed@example.org")
        assert build_laststep(store, qid("ex:f")).contact_id == "ex:bob"


def _oracle(doc, ent_id):
    """Last-step content read straight off the relation lists."""
    ent = doc.entities[ent_id]
    rec = LastStepRecord(str(ent_id), ent.name, ent.generated_at, ent.location)
    atts = [a for a in doc.attributions if a.entity == ent_id]
    pick = sorted(a.agent for a in atts if a.role == "contact") or sorted(a.agent for a in atts)
    if pick:
        rec.contact_id = str(pick[0])
        agent = doc.agents.get(pick[0])
        if agent is not None:
            rec.contact_name, rec.contact_email = agent.name or None, agent.email
    gens = [g.activity for g in doc.generated if g.entity == ent_id]
    if gens:
        act = doc.activities[gens[0]]
        rec.activity_id, rec.activity_name = str(act.id), act.name
        rec.activity_start, rec.activity_end = act.start_time, act.end_time
        desc = doc.descriptions.get(act.description_ref)
        if desc is not None:
            rec.description_name, rec.description_version = desc.name, desc.version
        rec.used_ids = sorted({str(u.entity) for u in doc.used if u.activity == act.id} - {str(ent_id)})
        rec.sibling_generated_ids = sorted({str(g.entity) for g in doc.generated
                                            if g.activity == act.id} - {str(ent_id)})
        rec.parameters = sorted((p.name, p.value) for p in doc.parameters if p.activity == act.id)
    return rec


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_build_matches_oracle(tmp_path_factory, seed):
    doc = random_document(random.Random(seed), 150, stubs=False, ascii_only=True)
    with ProvenanceStore(tmp_path_factory.mktemp("s")) as store:
        store.ingest_document(doc)
        for ent_id in doc.entities:
            assert build_laststep(store, ent_id) == _oracle(doc, ent_id)


# -- cards --

def test_emit_entity_only():
    cards = emit_header_cards(LastStepRecord("ex:raw"))
    assert keywords(cards) == ["PRV_ID"]
    assert cards[0] == "PRV_ID  = 'ex:raw  ' / entity identifier".ljust(80)


def test_emit_lvl2(chain_store):
    cards = emit_header_cards(build_laststep(chain_store, qid("ex:lvl2")))
    assert cards[keywords(cards).index("PRV_ACT")].startswith("PRV_ACT = 'ex:a2   '")
    assert cards[keywords(cards).index("PRV_USD1")].startswith("PRV_USD1= 'ex:lvl1 '")
    assert keywords(cards) == ["PRV_ID", "PRV_NAME", "PRV_ACT", "PRV_ACTN", "PRV_USD1"]


def test_long_location_continues():
    uri = "https://archive.example.org/" + "d" * (70 - len("https://archive.example.org/"))
    assert len(uri) == 70
    cards = emit_header_cards(LastStepRecord("ex:e", location=uri))
    assert keywords(cards) == ["PRV_ID", "PRV_LOC", "CONTINUE"]
    assert cards[1].rstrip().endswith("&'")
    assert all(len(c) == 80 for c in cards)
    assert parse_header_cards(cards).location == uri


def test_quotes_are_doubled_and_never_split():
    value = "it's " + "'" * 100
    rec = LastStepRecord("ex:e", entity_name=value)
    cards = emit_header_cards(rec)
    assert parse_header_cards(cards) == rec


def test_indexed_keyword_shapes():
    assert indexed_keyword("PRV_USD", 7) == "PRV_USD7"
    assert indexed_keyword("PRV_USD", 42) == "PRV_US42"
    assert indexed_keyword("PRV_PAR", 999) == "PRV_P999"
    with pytest.raises(TooManyIndexed):
        indexed_keyword("PRV_GEN", 1000)


def test_too_many_indexed():
    rec = LastStepRecord("ex:e", activity_id="ex:a", used_ids=[f"ex:u{i}" for i in range(1000)])
    with pytest.raises(TooManyIndexed):
        emit_header_cards(rec)
    rec.used_ids = rec.used_ids[:999]
    assert parse_header_cards(emit_header_cards(rec)) == rec


def test_invalid_records():
    for rec in (LastStepRecord(""), LastStepRecord("ex:e", activity_name="orphan"),
                LastStepRecord("ex:e", entity_name="naïve"), LastStepRecord("ex:e", entity_name="x "),
                LastStepRecord("ex:e", activity_id="ex:a", used_ids=["ex:e"]),
                LastStepRecord("ex:e", activity_id="ex:a", parameters=[("a=b", "1")])):
        with pytest.raises(InvalidRecord):
            emit_header_cards(rec)


def test_parse_ignores_foreign_cards_and_stops_at_end():
    cards = ["SIMPLE  =                    T", "BITPIX  =                    8",
             *emit_header_cards(LastStepRecord("ex:e", entity_name="e")),
             "COMMENT just a comment", "END", "PRV_NAME= 'after end'"]
    assert parse_header_cards(cards) == LastStepRecord("ex:e", entity_name="e")


def test_parse_errors():
    with pytest.raises(NoProvenance):
        parse_header_cards(["SIMPLE  =                    T", "BITPIX  =                    8", "END"])
    with pytest.raises(DuplicateKeyword):
        parse_header_cards(["PRV_ID  = 'ex:a'", "PRV_ID  = 'ex:b'"])
    with pytest.raises(MalformedCard):
        parse_header_cards(["PRV_ID  = 'ex:a'" + " " * 80])
    with pytest.raises(MalformedCard):
        parse_header_cards(["PRV_ID  = 'unterminated"])
    with pytest.raises(MalformedCard):
        parse_header_cards(["PRV_ID  = 'ex:a'", "PRV_XYZ = 'what'"])
    with pytest.raises(MalformedCard):
        parse_header_cards(["PRV_NAME= 'no id'"])
    with pytest.raises(MalformedCard):
        parse_header_cards(["PRV_ID  = 42"])


_PRINTABLE = st.text(st.characters(min_codepoint=0x20, max_codepoint=0x7E), min_size=1, max_size=140)
_VALUE = _PRINTABLE.map(lambda s: s.rstrip(" ") or "v")
_OPT = st.none() | _VALUE


@st.composite
def records(draw):
    ent = draw(_VALUE)
    rec = LastStepRecord(ent, draw(_OPT), draw(_OPT), draw(_OPT), draw(_OPT), draw(_OPT), draw(_OPT))
    if draw(st.booleans()):
        rec.activity_id = draw(_VALUE)
        rec.activity_name, rec.activity_start, rec.activity_end = draw(_OPT), draw(_OPT), draw(_OPT)
        rec.description_name, rec.description_version = draw(_OPT), draw(_OPT)
        others = st.lists(_VALUE.filter(lambda v: v != ent), max_size=12, unique=True)
        rec.used_ids = draw(others)
        rec.sibling_generated_ids = draw(others)
        name = _VALUE.map(lambda s: s.replace("=", "_"))
        rec.parameters = draw(st.lists(st.tuples(name, st.text(
            st.characters(min_codepoint=0x20, max_codepoint=0x7E), max_size=90).map(lambda s: s.rstrip(" "))),
            max_size=12))
    return rec


@settings(max_examples=300, deadline=None)
@given(records())
def test_emit_parse_round_trip(rec):
    cards = emit_header_cards(rec)
    for card in cards:
        assert len(card) == 80
        assert set(card[:8].rstrip()) <= KEYWORD_CHARS
        assert card[8:10] in ("= ", "  ")
    assert parse_header_cards(cards) == rec


# -- files --

def test_fits_and_card_files(tmp_path, chain_store):
    rec = build_laststep(chain_store, qid("ex:lvl2"))
    cards = emit_header_cards(rec)
    (tmp_path / "hdr").mkdir()
    (tmp_path / "hdr" / "lvl2.fits").write_bytes(pack_header(cards) + b"\0" * 2880)
    write_card_file(tmp_path / "hdr" / "lvl1.hdr", emit_header_cards(build_laststep(chain_store, qid("ex:lvl1"))))
    (tmp_path / "hdr" / "plain.fits").write_bytes(pack_header([]))
    (tmp_path / "hdr" / "notes.md").write_text("ignored")
    assert read_fits_header(tmp_path / "hdr" / "lvl2.fits")[-1].startswith("END")
    assert read_header_file(tmp_path / "hdr" / "lvl2.fits") == rec
    found = scan_directory(tmp_path / "hdr")
    assert sorted(r.entity_id for r in found) == ["ex:lvl1", "ex:lvl2"]

    (tmp_path / "bad.fits").write_bytes(b"SIMPLE  = T".ljust(800))
    with pytest.raises(MalformedCard):
        read_fits_header(tmp_path / "bad.fits")


# -- reconstruction --

def headers_for(doc, ids, tmp_path):
    with ProvenanceStore(tmp_path) as store:
        store.ingest_document(doc)
        return [parse_header_cards(emit_header_cards(build_laststep(store, qid(i)))) for i in ids]


def edge_view(doc):
    return {
        "entities": {str(i) for i in doc.entities},
        "activities": {str(i) for i in doc.activities},
        "used": {(str(u.activity), str(u.entity)) for u in doc.used},
        "generated": {(str(g.entity), str(g.activity)) for g in doc.generated},
        "contacts": {(str(a.entity), str(a.agent)) for a in doc.attributions if a.role == "contact"},
    }


def test_reconstruct_empty():
    assert reconstruct([]).is_empty()


def test_reconstruct_chain(tmp_path):
    doc = chain_doc()
    both = reconstruct(headers_for(doc, ["ex:lvl1", "ex:lvl2"], tmp_path / "a"))
    assert edge_view(both) == edge_view(doc)
    assert {str(i) for i in both.incomplete_ids} == {"ex:raw"}

    only = reconstruct(headers_for(doc, ["ex:lvl2"], tmp_path / "b"))
    assert qid("ex:lvl1") in only.incomplete_ids
    assert qid("ex:lvl2") not in only.incomplete_ids


def test_reconstruct_pipeline_matches_capture(tmp_path):
    captured, _ = fold_events([parse_event_line(line) for line in pipeline_lines()])
    assert captured == expected_pipeline_doc()
    rebuilt = reconstruct(headers_for(captured, GENERATED, tmp_path / "s"))
    assert edge_view(rebuilt) == edge_view(captured)
    contact = rebuilt.agents[qid("ex:alice")]
    assert (contact.name, contact.email) == ("Alice Smith", "alice@example.org")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_reconstruct_monotone(tmp_path_factory, seed):
    rng = random.Random(seed)
    doc = random_document(rng, 120, stubs=False, ascii_only=True)
    generated = sorted({str(g.entity) for g in doc.generated})
    recs = headers_for(doc, generated, tmp_path_factory.mktemp("s"))
    rng.shuffle(recs)
    full = reconstruct(recs)
    assert edge_view(full)["used"] == edge_view(doc)["used"]
    assert edge_view(full)["generated"] == edge_view(doc)["generated"]
    prev = set()
    for k in range(0, len(recs) + 1, max(1, len(recs) // 5)):
        cur = {r.id for r in reconstruct(recs[:k]).records()}
        assert prev <= cur
        prev = cur
