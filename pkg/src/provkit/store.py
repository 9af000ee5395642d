"""Durable provenance store with depth/direction graph traversal.

Records live in an SQLite database under the store root, one table per
record class and per relation class.  Traversals run against an immutable
in-memory index snapshot that is rebuilt from the tables on open and swapped
atomically after every ingest, so readers never see a half-applied ingest.

Layout of ``<root>/provenance.sqlite``::

    namespace(prefix, uri)
    entity(id, name, location, generated_at, comment, attributes, stub)
    activity(id, name, start_time, end_time, description_ref, comment, attributes, stub)
    agent(id, name, kind, email, attributes, stub)
    activity_description(id, name, version, doc, docurl, code_reference, code_revision, stub)
    parameter(activity, name, value, value_type)
    used(activity, entity, role, time)
    was_generated_by(entity, activity, role, time)
    was_associated_with(activity, agent, role)
    was_attributed_to(entity, agent, role)
    meta(key, value)
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sqlite3
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from provkit.errors import ConflictingRecord, CorruptStore, DataError, NotFound
from provkit.model import (
    Activity,
    ActivityDescription,
    Agent,
    AgentKind,
    Entity,
    Parameter,
    ProvenanceDocument,
    QualifiedId,
    Record,
    Used,
    ValueType,
    WasAssociatedWith,
    WasAttributedTo,
    WasGeneratedBy,
    combine_parameters,
    clone_record,
    combine_records,
    combine_relations,
    has_errors,
    merge_namespaces,
    validate_document,
)

log = logging.getLogger(__name__)

DB_NAME = "provenance.sqlite"
SCHEMA_VERSION = 1

ALL = None  # depth sentinel: iterate to fixpoint


class Direction(str, Enum):
    BACKWARD = "BACKWARD"
    FORWARD = "FORWARD"


class InvalidDocument(DataError):
    code = "InvalidDocument"


_SCHEMA = """
CREATE TABLE IF NOT EXISTS namespace (prefix TEXT PRIMARY KEY, uri TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS entity (
    id TEXT PRIMARY KEY, name TEXT, location TEXT, generated_at TEXT, comment TEXT,
    attributes TEXT NOT NULL, stub INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS activity (
    id TEXT PRIMARY KEY, name TEXT, start_time TEXT, end_time TEXT, description_ref TEXT,
    comment TEXT, attributes TEXT NOT NULL, stub INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS agent (
    id TEXT PRIMARY KEY, name TEXT NOT NULL, kind TEXT NOT NULL, email TEXT,
    attributes TEXT NOT NULL, stub INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS activity_description (
    id TEXT PRIMARY KEY, name TEXT NOT NULL, version TEXT, doc TEXT, docurl TEXT,
    code_reference TEXT, code_revision TEXT, stub INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS parameter (
    activity TEXT NOT NULL, name TEXT NOT NULL, value TEXT NOT NULL, value_type TEXT NOT NULL,
    PRIMARY KEY (activity, name));
CREATE TABLE IF NOT EXISTS used (
    activity TEXT NOT NULL, entity TEXT NOT NULL, role TEXT NOT NULL, time TEXT,
    PRIMARY KEY (activity, entity, role));
CREATE TABLE IF NOT EXISTS was_generated_by (
    entity TEXT NOT NULL, activity TEXT NOT NULL, role TEXT NOT NULL, time TEXT,
    PRIMARY KEY (entity, activity, role));
CREATE TABLE IF NOT EXISTS was_associated_with (
    activity TEXT NOT NULL, agent TEXT NOT NULL, role TEXT NOT NULL,
    PRIMARY KEY (activity, agent, role));
CREATE TABLE IF NOT EXISTS was_attributed_to (
    entity TEXT NOT NULL, agent TEXT NOT NULL, role TEXT NOT NULL,
    PRIMARY KEY (entity, agent, role));
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
"""

_RECORD_TABLES = {
    Entity: ("entity", ("name", "location", "generated_at", "comment", "attributes")),
    Activity: ("activity", ("name", "start_time", "end_time", "description_ref", "comment", "attributes")),
    Agent: ("agent", ("name", "kind", "email", "attributes")),
    ActivityDescription: ("activity_description",
                          ("name", "version", "doc", "docurl", "code_reference", "code_revision")),
}
_RELATION_TABLES = {
    Used: ("used", ("activity", "entity", "role", "time")),
    WasGeneratedBy: ("was_generated_by", ("entity", "activity", "role", "time")),
    WasAssociatedWith: ("was_associated_with", ("activity", "agent", "role")),
    WasAttributedTo: ("was_attributed_to", ("entity", "agent", "role")),
}


@dataclass
class IngestStats:
    inserted: int = 0
    updated: int = 0
    unchanged: int = 0

    def as_dict(self) -> dict[str, int]:
        return dataclasses.asdict(self)


def _split_id(text: str) -> QualifiedId:
    prefix, sep, local = text.partition(":")
    if not sep:
        raise ValueError(f"unqualified id {text!r}")
    return QualifiedId(prefix, local)


@dataclass
class _Index:
    """Immutable-by-convention snapshot of the persisted record set."""

    generation: int = 0
    namespaces: dict[str, str] = field(default_factory=dict)
    records: dict[QualifiedId, Record] = field(default_factory=dict)
    stubs: set[QualifiedId] = field(default_factory=set)
    params: dict[QualifiedId, dict[str, Parameter]] = field(default_factory=lambda: defaultdict(dict))
    generated_of_entity: dict = field(default_factory=lambda: defaultdict(dict))
    generated_by_activity: dict = field(default_factory=lambda: defaultdict(dict))
    used_by_activity: dict = field(default_factory=lambda: defaultdict(dict))
    users_of_entity: dict = field(default_factory=lambda: defaultdict(dict))
    agents_of_activity: dict = field(default_factory=lambda: defaultdict(dict))
    agents_of_entity: dict = field(default_factory=lambda: defaultdict(dict))

    _ADJ = ("generated_of_entity", "generated_by_activity", "used_by_activity", "users_of_entity",
            "agents_of_activity", "agents_of_entity")

    def copy(self) -> _Index:
        new = _Index(self.generation, dict(self.namespaces), dict(self.records), set(self.stubs))
        new.params = defaultdict(dict, {k: dict(v) for k, v in self.params.items()})
        for name in self._ADJ:
            setattr(new, name, defaultdict(dict, {k: dict(v) for k, v in getattr(self, name).items()}))
        return new

    def add_relation(self, rel) -> None:
        # adjacency maps are node -> {relation key: relation}
        if isinstance(rel, Used):
            self.used_by_activity[rel.activity][rel.key] = rel
            self.users_of_entity[rel.entity][rel.key] = rel
        elif isinstance(rel, WasGeneratedBy):
            self.generated_of_entity[rel.entity][rel.key] = rel
            self.generated_by_activity[rel.activity][rel.key] = rel
        elif isinstance(rel, WasAssociatedWith):
            self.agents_of_activity[rel.activity][rel.key] = rel
        else:
            self.agents_of_entity[rel.entity][rel.key] = rel

    def relation(self, rel):
        if isinstance(rel, Used):
            return self.used_by_activity.get(rel.activity, {}).get(rel.key)
        if isinstance(rel, WasGeneratedBy):
            return self.generated_of_entity.get(rel.entity, {}).get(rel.key)
        if isinstance(rel, WasAssociatedWith):
            return self.agents_of_activity.get(rel.activity, {}).get(rel.key)
        return self.agents_of_entity.get(rel.entity, {}).get(rel.key)

    def all_relations(self):
        for by_node in (self.used_by_activity, self.generated_of_entity,
                        self.agents_of_activity, self.agents_of_entity):
            for rels in by_node.values():
                yield from rels.values()

    def comparable(self) -> tuple:
        """Plain-data view, used to check a rebuilt index against a live one."""
        def flat(mapping):
            return {k: dict(v) for k, v in mapping.items() if v}
        return (self.namespaces, self.records, self.stubs, flat(self.params),
                *(flat(getattr(self, name)) for name in self._ADJ))


class ProvenanceStore:
    """Single-writer, multi-reader provenance store rooted at a directory."""

    def __init__(self, root: str | Path, *, create: bool = True) -> None:
        self.root = Path(root)
        self.path = self.root / DB_NAME
        if not self.root.exists():
            if not create:
                raise CorruptStore(self.root, "store directory does not exist")
            self.root.mkdir(parents=True)
        self._lock = threading.RLock()
        self._write_lock = threading.Lock()
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
            self._conn.executescript(_SCHEMA)
            self._conn.execute("INSERT OR IGNORE INTO meta VALUES ('schema_version', ?)", (str(SCHEMA_VERSION),))
            self._conn.execute("INSERT OR IGNORE INTO meta VALUES ('generation', '0')")
        except sqlite3.DatabaseError as exc:
            raise CorruptStore(self.path, str(exc)) from None
        self._index: _Index | None = None
        self.rebuild_indexes()

    # -- lifecycle --

    def close(self) -> None:
        with self._lock:
            if self._conn is not None:
                self._conn.close()
                self._conn = None

    def __enter__(self) -> ProvenanceStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # -- index maintenance --

    def _read_generation(self) -> int:
        with self._lock:
            try:
                row = self._conn.execute("SELECT value FROM meta WHERE key='generation'").fetchone()
            except sqlite3.DatabaseError as exc:
                raise CorruptStore(self.path, str(exc)) from None
        return int(row[0]) if row else 0

    def drop_indexes(self) -> None:
        self._index = None

    def rebuild_indexes(self) -> None:
        """Reload every index from the persisted tables."""
        with self._lock:
            try:
                self._index = self._load()
            except (sqlite3.DatabaseError, ValueError, KeyError, TypeError) as exc:
                raise CorruptStore(self.path, str(exc)) from None

    def _load(self) -> _Index:
        conn = self._conn
        conn.execute("BEGIN")
        ok = False
        try:
            index = _Index(generation=int(conn.execute(
                "SELECT value FROM meta WHERE key='generation'").fetchone()[0]))
            index.namespaces = dict(conn.execute("SELECT prefix, uri FROM namespace ORDER BY prefix"))
            for cls, (table, cols) in _RECORD_TABLES.items():
                for row in conn.execute(f"SELECT id, {', '.join(cols)}, stub FROM {table} ORDER BY id"):
                    rec_id = _split_id(row[0])
                    values = dict(zip(cols, row[1:-1]))
                    if "attributes" in values:
                        values["attributes"] = json.loads(values["attributes"])
                    if values.get("description_ref"):
                        values["description_ref"] = _split_id(values["description_ref"])
                    if "kind" in values:
                        values["kind"] = AgentKind(values["kind"])
                    index.records[rec_id] = cls(rec_id, **values)
                    if row[-1]:
                        index.stubs.add(rec_id)
            for act, name, value, vtype in conn.execute("SELECT * FROM parameter ORDER BY activity, name"):
                act_id = _split_id(act)
                index.params[act_id][name] = Parameter(act_id, name, value, ValueType(vtype))
            for cls, (table, cols) in _RELATION_TABLES.items():
                for row in conn.execute(f"SELECT {', '.join(cols)} FROM {table}"):
                    args = [_split_id(row[0]), _split_id(row[1]), row[2] or None, *row[3:]]
                    index.add_relation(cls(*args))
            ok = True
        finally:
            if conn.in_transaction:
                conn.execute("COMMIT" if ok else "ROLLBACK")
        return index

    def _current(self) -> _Index:
        index = self._index
        if index is None:
            self.rebuild_indexes()
            index = self._index
        return index

    def refresh(self) -> bool:
        """Reload if another process committed since the last load."""
        if self._index is None or self._read_generation() != self._index.generation:
            self.rebuild_indexes()
            return True
        return False

    @property
    def namespaces(self) -> dict[str, str]:
        return dict(self._current().namespaces)

    # -- writing --

    def ingest_document(self, doc: ProvenanceDocument) -> IngestStats:
        """Upsert every record of ``doc``; all-or-nothing."""
        findings = validate_document(doc)
        if has_errors(findings):
            bad = next(f for f in findings if f.severity == "error")
            raise InvalidDocument(f"{bad.code} at {bad.subject}")
        with self._write_lock:
            self.refresh()
            old = self._current()
            stats = IngestStats()
            new = old.copy()
            new.namespaces = merge_namespaces(old.namespaces, doc.namespaces)
            rec_rows: list[tuple[Record, bool]] = []
            param_rows: list[Parameter] = []
            rel_rows: list = []

            seen_types: dict[QualifiedId, type] = {}
            for rec in doc.records():
                if seen_types.setdefault(rec.id, type(rec)) is not type(rec):
                    raise ConflictingRecord(rec.id, "id used by two record classes")
                incoming_stub = rec.id in doc.incomplete_ids
                existing = old.records.get(rec.id)
                if existing is None:
                    stats.inserted += 1
                    merged, stub = rec, incoming_stub
                elif type(existing) is not type(rec):
                    raise ConflictingRecord(rec.id, f"already stored as {type(existing).__name__}")
                else:
                    stored_stub = rec.id in old.stubs
                    if incoming_stub and not stored_stub:
                        stats.unchanged += 1
                        continue
                    merged = combine_records(existing, stored_stub, rec, incoming_stub)
                    stub = stored_stub and incoming_stub
                    if merged == existing and stub == stored_stub:
                        stats.unchanged += 1
                        continue
                    stats.updated += 1
                merged = clone_record(merged)
                new.records[rec.id] = merged
                if stub:
                    new.stubs.add(rec.id)
                else:
                    new.stubs.discard(rec.id)
                rec_rows.append((merged, stub))

            for param in doc.parameters:
                existing = old.params.get(param.activity, {}).get(param.name)
                if existing is None:
                    stats.inserted += 1
                else:
                    combine_parameters(existing, param)
                    stats.unchanged += 1
                    continue
                new.params[param.activity][param.name] = param
                param_rows.append(param)

            for rel in doc.relations():
                existing = old.relation(rel)
                if existing is None:
                    if isinstance(rel, WasGeneratedBy):
                        others = new.generated_of_entity.get(rel.entity, {})
                        if any(k != rel.key for k in others):
                            raise ConflictingRecord(rel.entity, "entity already has a generating activity")
                    stats.inserted += 1
                    merged = rel
                else:
                    merged = combine_relations(existing, rel)
                    if merged == existing:
                        stats.unchanged += 1
                        continue
                    stats.updated += 1
                new.add_relation(merged)
                rel_rows.append(merged)

            if rec_rows or param_rows or rel_rows or new.namespaces != old.namespaces:
                new.generation = old.generation + 1
                self._persist(new, rec_rows, param_rows, rel_rows)
            self._index = new
            log.info("ingest: %s", stats.as_dict())
            return stats

    def _persist(self, index: _Index, rec_rows, param_rows, rel_rows) -> None:
        with self._lock:
            conn = self._conn
            try:
                conn.execute("BEGIN IMMEDIATE")
                stored_generation = int(conn.execute(
                    "SELECT value FROM meta WHERE key='generation'").fetchone()[0])
                if stored_generation != index.generation - 1:
                    raise CorruptStore(self.path, "concurrent writer detected")
                conn.executemany("INSERT OR REPLACE INTO namespace VALUES (?, ?)", index.namespaces.items())
                for rec, stub in rec_rows:
                    table, cols = _RECORD_TABLES[type(rec)]
                    values = []
                    for col in cols:
                        value = getattr(rec, col)
                        if col == "attributes":
                            value = json.dumps(value)
                        elif isinstance(value, QualifiedId):
                            value = str(value)
                        elif isinstance(value, AgentKind):
                            value = value.value
                        values.append(value)
                    marks = ", ".join("?" * (len(cols) + 2))
                    conn.execute(f"INSERT OR REPLACE INTO {table} (id, {', '.join(cols)}, stub) "
                                 f"VALUES ({marks})", (str(rec.id), *values, int(stub)))
                conn.executemany(
                    "INSERT OR REPLACE INTO parameter VALUES (?, ?, ?, ?)",
                    [(str(p.activity), p.name, p.value, p.value_type.value) for p in param_rows])
                for rel in rel_rows:
                    table, cols = _RELATION_TABLES[type(rel)]
                    values = [str(rel.key[0]), str(rel.key[1]), rel.role or "", *[getattr(rel, c) for c in cols[3:]]]
                    marks = ", ".join("?" * len(cols))
                    conn.execute(f"INSERT OR REPLACE INTO {table} VALUES ({marks})", values)
                conn.execute("UPDATE meta SET value=? WHERE key='generation'", (str(index.generation),))
                conn.execute("COMMIT")
            except BaseException:
                if conn.in_transaction:
                    conn.execute("ROLLBACK")
                raise

    # -- reading --

    def get_record(self, record_id: QualifiedId) -> Record:
        rec = self._current().records.get(record_id)
        if rec is None:
            raise NotFound(record_id)
        return rec

    def is_stub(self, record_id: QualifiedId) -> bool:
        return record_id in self._current().stubs

    def ids(self) -> list[QualifiedId]:
        return sorted(self._current().records)

    def document(self) -> ProvenanceDocument:
        """The whole store as one document."""
        index = self._current()
        doc = ProvenanceDocument(namespaces=dict(index.namespaces))
        for rec in index.records.values():
            doc.add(clone_record(rec), stub=rec.id in index.stubs)
        for params in index.params.values():
            doc.parameters.extend(params.values())
        for rel in index.all_relations():
            doc.add(rel)
        return doc

    def traverse(self, start: QualifiedId, depth: int | None = ALL,
                 direction: Direction | str = Direction.BACKWARD) -> ProvenanceDocument:
        """Subgraph reached from ``start`` in ``depth`` activity hops (``ALL`` = fixpoint)."""
        direction = Direction(direction)
        if depth is not None and depth < 0:
            raise ValueError("depth must be >= 0")
        index = self._current()
        start_rec = index.records.get(start)
        if start_rec is None:
            raise NotFound(start)

        entities: set[QualifiedId] = set()
        activities: set[QualifiedId] = set()
        if isinstance(start_rec, Entity):
            entities.add(start)
        elif isinstance(start_rec, Activity):
            activities.add(start)
        if depth == 0 or not (entities or activities):
            return self._materialize(index, {start}, set(), set(), expand=False)

        backward = direction is Direction.BACKWARD
        expanded: set[QualifiedId] = set()
        reached: set[QualifiedId] = set(entities)

        def expand(act_id: QualifiedId) -> set[QualifiedId]:
            expanded.add(act_id)
            activities.add(act_id)
            produced = {g.entity for g in index.generated_by_activity.get(act_id, {}).values()}
            entities.update(produced)
            if backward:
                consumed = {u.entity for u in index.used_by_activity.get(act_id, {}).values()}
                entities.update(consumed)
                return consumed
            return produced

        steps = 0
        if isinstance(start_rec, Activity):
            frontier = expand(start) - reached
            steps = 1
        else:
            frontier = {start}
        reached |= frontier
        while frontier and (depth is None or steps < depth):
            nxt: set[QualifiedId] = set()
            for ent_id in frontier:
                if backward:
                    acts = [g.activity for g in index.generated_of_entity.get(ent_id, {}).values()]
                else:
                    acts = [u.activity for u in index.users_of_entity.get(ent_id, {}).values()]
                for act_id in acts:
                    if act_id not in expanded:
                        nxt |= expand(act_id)
            frontier = nxt - reached
            reached |= frontier
            steps += 1
        return self._materialize(index, entities | activities, entities, activities, expand=True)

    def _materialize(self, index: _Index, ids: set[QualifiedId], entities: set[QualifiedId],
                     activities: set[QualifiedId], *, expand: bool) -> ProvenanceDocument:
        doc = ProvenanceDocument(namespaces=dict(index.namespaces))
        agents: set[QualifiedId] = set()
        descriptions: set[QualifiedId] = set()
        if expand:
            for act_id in activities:
                agents.update(r.agent for r in index.agents_of_activity.get(act_id, {}).values())
                act = index.records.get(act_id)
                if isinstance(act, Activity) and act.description_ref in index.records:
                    descriptions.add(act.description_ref)
            for ent_id in entities:
                agents.update(r.agent for r in index.agents_of_entity.get(ent_id, {}).values())

        def add(rec_id: QualifiedId, stub_cls) -> None:
            rec = index.records.get(rec_id)
            if rec is None:
                doc.add(stub_cls(rec_id), stub=True)
            else:
                doc.add(clone_record(rec), stub=rec_id in index.stubs)

        for rec_id in sorted(ids):
            add(rec_id, Entity if rec_id in entities else Activity)
        for rec_id in sorted(agents):
            add(rec_id, Agent)
        for rec_id in sorted(descriptions):
            add(rec_id, ActivityDescription)
        if not expand:
            return doc

        for act_id in sorted(activities):
            doc.parameters.extend(index.params.get(act_id, {}).values())
            for rel in index.used_by_activity.get(act_id, {}).values():
                if rel.entity in entities:
                    doc.used.append(rel)
            for rel in index.agents_of_activity.get(act_id, {}).values():
                doc.associations.append(rel)
        for ent_id in sorted(entities):
            for rel in index.generated_of_entity.get(ent_id, {}).values():
                if rel.activity in activities:
                    doc.generated.append(rel)
            for rel in index.agents_of_entity.get(ent_id, {}).values():
                doc.attributions.append(rel)
        return doc


def open_store(root: str | Path, *, create: bool = True) -> ProvenanceStore:
    return ProvenanceStore(root, create=create)


def ingest_all(store: ProvenanceStore, docs: Iterable[ProvenanceDocument]) -> IngestStats:
    total = IngestStats()
    for doc in docs:
        stats = store.ingest_document(doc)
        total.inserted += stats.inserted
        total.updated += stats.updated
        total.unchanged += stats.unchanged
    return total
