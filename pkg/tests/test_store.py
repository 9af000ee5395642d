import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provkit.errors import ConflictingRecord, CorruptStore, NotFound
from provkit.model import Activity, Agent, Entity, ProvenanceDocument, Used, WasGeneratedBy, qid
from provkit.store import ALL, DB_NAME, Direction, InvalidDocument, ProvenanceStore
from support import bfs_closure, chain_doc, expected_pipeline_doc, graph_ids, random_document


def size(doc):
    return len(list(doc.records())) + len(doc.parameters) + len(list(doc.relations()))


@pytest.fixture
def store(tmp_path):
    with ProvenanceStore(tmp_path / "store") as s:
        yield s


def ids(doc):
    return {str(i) for i in graph_ids(doc)}


def test_ingest_idempotent(store):
    doc = expected_pipeline_doc()
    first = store.ingest_document(doc)
    assert first.as_dict() == {"inserted": size(doc), "updated": 0, "unchanged": 0}
    assert store.ingest_document(doc).as_dict() == {"inserted": 0, "updated": 0, "unchanged": size(doc)}


def test_ingest_empty(store):
    assert store.ingest_document(ProvenanceDocument()).as_dict() == {"inserted": 0, "updated": 0, "unchanged": 0}


def test_stub_then_full(tmp_path, store):
    stub = ProvenanceDocument()
    stub.add(Entity(qid("ex:e1")), stub=True)
    full = ProvenanceDocument()
    full.add(Entity(qid("ex:e1"), name="level one"))
    store.ingest_document(stub)
    assert store.is_stub(qid("ex:e1"))
    stats = store.ingest_document(full)
    assert stats.updated == 1
    assert not store.is_stub(qid("ex:e1"))
    # a stub never overwrites the full record
    assert store.ingest_document(stub).as_dict() == {"inserted": 0, "updated": 0, "unchanged": 1}
    live = store._current().comparable()
    store.rebuild_indexes()
    assert store._current().comparable() == live
    with ProvenanceStore(tmp_path / "fresh") as fresh:
        fresh.ingest_document(full)
        assert fresh._current().comparable()[1:] == live[1:]


def test_ingest_conflicts_leave_store_untouched(store):
    store.ingest_document(chain_doc())
    before = store.document()
    bad = ProvenanceDocument()
    bad.add(Entity(qid("ex:new")))
    bad.add(Entity(qid("ex:raw"), name="something else"))
    with pytest.raises(ConflictingRecord):
        store.ingest_document(bad)
    assert store.document() == before
    with pytest.raises(NotFound):
        store.get_record(qid("ex:new"))

    second_gen = ProvenanceDocument()
    second_gen.add(Activity(qid("ex:a9")))
    second_gen.add(WasGeneratedBy(qid("ex:lvl2"), qid("ex:a9")))
    with pytest.raises(ConflictingRecord):
        store.ingest_document(second_gen)

    clash = ProvenanceDocument()
    clash.add(Agent(qid("ex:raw"), "not an entity"))
    with pytest.raises(ConflictingRecord):
        store.ingest_document(clash)


def test_ingest_rejects_invalid(store):
    doc = ProvenanceDocument()
    doc.add(Used(qid("ex:a1"), qid("ex:e1")))
    doc.add(WasGeneratedBy(qid("ex:e1"), qid("ex:a1")))
    with pytest.raises(InvalidDocument):
        store.ingest_document(doc)


def test_get_record(store):
    store.ingest_document(chain_doc())
    assert isinstance(store.get_record(qid("ex:raw")), Entity)
    assert isinstance(store.get_record(qid("ex:a1")), Activity)
    with pytest.raises(NotFound):
        store.get_record(qid("ex:nope"))


def test_traverse_chain(store):
    store.ingest_document(chain_doc())
    assert ids(store.traverse(qid("ex:lvl2"), 1, Direction.BACKWARD)) == {"ex:lvl2", "ex:a2", "ex:lvl1"}
    assert ids(store.traverse(qid("ex:lvl2"), ALL, Direction.BACKWARD)) == {
        "ex:raw", "ex:a1", "ex:lvl1", "ex:a2", "ex:lvl2"}
    assert ids(store.traverse(qid("ex:lvl2"), 0)) == {"ex:lvl2"}
    assert ids(store.traverse(qid("ex:raw"), 1, Direction.FORWARD)) == {"ex:raw", "ex:a1", "ex:lvl1"}
    assert ids(store.traverse(qid("ex:a2"), 1, Direction.BACKWARD)) == {"ex:a2", "ex:lvl2", "ex:lvl1"}
    with pytest.raises(NotFound):
        store.traverse(qid("ex:nope"))


def test_traverse_includes_context(store):
    store.ingest_document(expected_pipeline_doc())
    doc = store.traverse(qid("ex:cal_img"), 1, Direction.BACKWARD)
    assert ids(doc) == {"ex:cal_img", "ex:cal_log", "ex:raw", "ex:bias", "ex:calibrate_1_t0k3n"}
    assert {str(a) for a in doc.agents} == {"ex:pipe", "ex:alice"}
    assert {p.name for p in doc.parameters} == {"gain", "overscan"}
    assert {str(d) for d in doc.descriptions} == {"ex:calib_sw"}


def test_forward_frontier_discipline(store):
    doc = ProvenanceDocument()
    for e in ("x", "y", "z", "w"):
        doc.add(Entity(qid(f"ex:{e}")))
    doc.add(Activity(qid("ex:a")))
    doc.add(Activity(qid("ex:b")))
    doc.add(Used(qid("ex:a"), qid("ex:x")))
    doc.add(Used(qid("ex:a"), qid("ex:y")))
    doc.add(WasGeneratedBy(qid("ex:z"), qid("ex:a")))
    doc.add(Used(qid("ex:b"), qid("ex:y")))
    doc.add(WasGeneratedBy(qid("ex:w"), qid("ex:b")))
    store.ingest_document(doc)
    # the sibling input y is not pulled in when walking forward from x
    assert ids(store.traverse(qid("ex:x"), ALL, Direction.FORWARD)) == {"ex:x", "ex:a", "ex:z"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_traverse_matches_bfs_and_is_monotone(tmp_path_factory, seed):
    rng = random.Random(seed)
    doc = random_document(rng, rng.randint(10, 300))
    with ProvenanceStore(tmp_path_factory.mktemp("s")) as store:
        store.ingest_document(doc)
        starts = sorted(graph_ids(doc))
        for _ in range(10):
            start = rng.choice(starts)
            direction = rng.choice(list(Direction))
            full = graph_ids(store.traverse(start, ALL, direction))
            assert full == bfs_closure(doc, start, direction)
            prev = set()
            for depth in range(4):
                cur = graph_ids(store.traverse(start, depth, direction))
                assert start in cur
                assert prev <= cur <= full
                prev = cur


def test_durability_and_rebuild(tmp_path):
    doc = random_document(random.Random(11), 300)
    root = tmp_path / "store"
    with ProvenanceStore(root) as store:
        store.ingest_document(doc)
        starts = sorted(graph_ids(doc))
        before = {s: store.traverse(s) for s in starts}
        records = {s: store.get_record(s) for s in store.ids()}
        store.drop_indexes()
        store.rebuild_indexes()
        assert {s: store.traverse(s) for s in starts} == before
    with ProvenanceStore(root, create=False) as store:
        assert {s: store.traverse(s) for s in starts} == before
        assert {s: store.get_record(s) for s in store.ids()} == records
        assert store.document() == ProvenanceStore(root).document()


def test_rebuild_empty_store(store):
    store.rebuild_indexes()
    assert store.ids() == []


def test_truncated_file_is_corrupt(tmp_path):
    root = tmp_path / "store"
    with ProvenanceStore(root) as store:
        store.ingest_document(random_document(random.Random(5), 200))
    path = root / DB_NAME
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 3])
    for extra in root.glob(DB_NAME + "-*"):
        extra.unlink()
    with pytest.raises(CorruptStore):
        ProvenanceStore(root)


def test_missing_store_without_create(tmp_path):
    with pytest.raises(CorruptStore):
        ProvenanceStore(tmp_path / "absent", create=False)


def test_reader_sees_other_writer(tmp_path):
    root = tmp_path / "store"
    with ProvenanceStore(root) as reader, ProvenanceStore(root) as writer:
        writer.ingest_document(chain_doc())
        assert reader.refresh()
        assert isinstance(reader.get_record(qid("ex:lvl2")), Entity)
        assert not reader.refresh()


def test_concurrent_traversals_agree(store):
    store.ingest_document(random_document(random.Random(8), 500))
    start = max(store.ids(), key=str)
    expected = store.traverse(start)
    results = []

    def work():
        for _ in range(5):
            results.append(store.traverse(start) == expected)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results and all(results)


def test_readers_never_see_partial_ingest(store):
    store.ingest_document(chain_doc())
    big = random_document(random.Random(9), 400)
    n_before = len(store.ids())
    n_after = len(set(store.ids()) | {r.id for r in big.records()})
    seen = set()
    stop = threading.Event()

    def read():
        while not stop.is_set():
            seen.add(len(store.ids()))

    t = threading.Thread(target=read)
    t.start()
    store.ingest_document(big)
    stop.set()
    t.join()
    assert seen <= {n_before, n_after}
