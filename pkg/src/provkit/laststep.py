"""Last-step provenance: the flat keyword record embeddable in a file header.

A :class:`LastStepRecord` holds an entity, its contact agent, the activity
that generated it and the ids of that activity's other inputs and outputs.
Records are written as FITS 80-character header cards (``PRV_*`` keywords,
long strings continued with ``CONTINUE`` cards) and a set of records can be
stitched back into a provenance graph with :func:`reconstruct`.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

from provkit.errors import (
    DuplicateKeyword,
    InvalidRecord,
    MalformedCard,
    NoProvenance,
    NotFound,
    TooManyIndexed,
)
from provkit.model import (
    DEFAULT_NAMESPACES,
    DEFAULT_PREFIX,
    Activity,
    Agent,
    Entity,
    Parameter,
    ProvenanceDocument,
    QualifiedId,
    Used,
    WasAttributedTo,
    WasGeneratedBy,
    merge_documents,
    parse_qualified_id,
)
from provkit.store import Direction, ProvenanceStore

log = logging.getLogger(__name__)

CARD_LENGTH = 80
BLOCK_SIZE = 2880
MAX_INDEX = 999
CONTACT_ROLE = "contact"

# field name, keyword, card comment
SCALAR_KEYWORDS = (
    ("entity_id", "PRV_ID", "entity identifier"),
    ("entity_name", "PRV_NAME", "entity name"),
    ("generated_at", "PRV_GENT", "generation time (UTC)"),
    ("location", "PRV_LOC", "entity location"),
    ("contact_id", "PRV_CTID", "contact agent identifier"),
    ("contact_name", "PRV_CTC", "contact agent name"),
    ("contact_email", "PRV_CTCE", "contact agent email"),
    ("activity_id", "PRV_ACT", "generating activity"),
    ("activity_name", "PRV_ACTN", "activity name"),
    ("activity_start", "PRV_TSTR", "activity start (UTC)"),
    ("activity_end", "PRV_TEND", "activity end (UTC)"),
    ("description_name", "PRV_DESC", "activity description name"),
    ("description_version", "PRV_VER", "activity description version"),
)
INDEXED_KEYWORDS = (
    ("used_ids", "PRV_USD", "used entity"),
    ("sibling_generated_ids", "PRV_GEN", "co-generated entity"),
    ("parameters", "PRV_PAR", "parameter name=value"),
)
_ACTIVITY_FIELDS = ("activity_name", "activity_start", "activity_end",
                    "description_name", "description_version")

_KEYWORD_RE = re.compile(r"^[A-Z0-9_-]{1,8}$")
_INDEXED_RE = re.compile(r"^PRV_[A-Z_]*?(\d+)$")
_PRINTABLE_RE = re.compile(r"^[ -~]*$")


@dataclass
class LastStepRecord:
    entity_id: str
    entity_name: str | None = None
    generated_at: str | None = None
    location: str | None = None
    contact_id: str | None = None
    contact_name: str | None = None
    contact_email: str | None = None
    activity_id: str | None = None
    activity_name: str | None = None
    activity_start: str | None = None
    activity_end: str | None = None
    description_name: str | None = None
    description_version: str | None = None
    used_ids: list[str] = field(default_factory=list)
    sibling_generated_ids: list[str] = field(default_factory=list)
    parameters: list[tuple[str, str]] = field(default_factory=list)


def check_record(record: LastStepRecord) -> None:
    """Raise :class:`InvalidRecord` unless ``record`` can be written as cards."""
    if not record.entity_id:
        raise InvalidRecord("entity_id is mandatory")
    if record.activity_id is None:
        present = [f for f in _ACTIVITY_FIELDS if getattr(record, f) is not None]
        if present or record.used_ids or record.sibling_generated_ids or record.parameters:
            raise InvalidRecord("activity details given without an activity_id")
    if record.entity_id in record.used_ids or record.entity_id in record.sibling_generated_ids:
        raise InvalidRecord("used/sibling lists must not contain the entity itself")
    values: list[str] = []
    for f in fields(record):
        value = getattr(record, f.name)
        if isinstance(value, str):
            values.append(value)
        elif f.name == "parameters":
            for name, pval in value:
                if not name or "=" in name:
                    raise InvalidRecord(f"bad parameter name {name!r}")
                values.append(f"{name}={pval}")
        elif isinstance(value, list):
            values.extend(value)
    for value in values:
        if not value or not _PRINTABLE_RE.match(value) or value != value.rstrip(" "):
            raise InvalidRecord(f"value {value!r} is not a non-empty printable ASCII string "
                                "without trailing blanks")


# -- building ---------------------------------------------------------------

def build_laststep(store: ProvenanceStore, entity_id: QualifiedId,
                   include_parameters: bool = True) -> LastStepRecord:
    """Project the entity's depth-1 backward closure onto a last-step record."""
    if not isinstance(store.get_record(entity_id), Entity):
        raise NotFound(entity_id)
    doc = store.traverse(entity_id, 1, Direction.BACKWARD)
    ent = doc.entities[entity_id]
    record = LastStepRecord(str(entity_id), entity_name=ent.name, generated_at=ent.generated_at,
                            location=ent.location)

    attributions = [a for a in doc.attributions if a.entity == entity_id]
    contacts = [a for a in attributions if a.role == CONTACT_ROLE] or attributions
    if contacts:
        agent_id = min(a.agent for a in contacts)
        agent = doc.agents.get(agent_id)
        record.contact_id = str(agent_id)
        if agent is not None:
            record.contact_name = agent.name or None
            record.contact_email = agent.email

    generators = sorted(g.activity for g in doc.generated if g.entity == entity_id)
    if generators:
        act = doc.activities[generators[0]]
        record.activity_id = str(act.id)
        record.activity_name = act.name
        record.activity_start = act.start_time
        record.activity_end = act.end_time
        desc = doc.descriptions.get(act.description_ref) if act.description_ref else None
        if desc is not None:
            record.description_name = desc.name or None
            record.description_version = desc.version
        record.used_ids = sorted({str(u.entity) for u in doc.used
                                  if u.activity == act.id and u.entity != entity_id})
        record.sibling_generated_ids = sorted({str(g.entity) for g in doc.generated
                                               if g.activity == act.id and g.entity != entity_id})
        if include_parameters:
            record.parameters = sorted((p.name, p.value) for p in doc.parameters if p.activity == act.id)
    return record


# -- header cards -----------------------------------------------------------

def indexed_keyword(root: str, n: int) -> str:
    """``PRV_USD`` + 7 -> ``PRV_USD7``; the root is shortened to keep 8 characters."""
    if not 1 <= n <= MAX_INDEX:
        raise TooManyIndexed(f"{root} index {n} outside 1..{MAX_INDEX}")
    digits = str(n)
    return root[:8 - len(digits)] + digits


def _escape_chunks(value: str, size: int) -> list[str]:
    """Split the quote-escaped value into pieces of at most ``size`` characters."""
    tokens = ["''" if ch == "'" else ch for ch in value]
    chunks, current = [], ""
    for tok in tokens:
        if len(current) + len(tok) > size:
            chunks.append(current)
            current = ""
        current += tok
    chunks.append(current)
    return chunks


def format_cards(keyword: str, value: str, comment: str | None = None) -> list[str]:
    if not _KEYWORD_RE.match(keyword):
        raise InvalidRecord(f"invalid FITS keyword {keyword!r}")
    escaped = value.replace("'", "''")
    if len(escaped) <= CARD_LENGTH - 12:
        body = "'" + escaped.ljust(8) + "'"
        card = f"{keyword:<8}= {body}"
        if comment and len(card) + 3 + len(comment) <= CARD_LENGTH:
            card += f" / {comment}"
        return [card.ljust(CARD_LENGTH)]
    chunks = _escape_chunks(value, CARD_LENGTH - 13)
    cards = []
    for i, chunk in enumerate(chunks):
        tail = "&" if i < len(chunks) - 1 else ""
        head = f"{keyword:<8}= " if i == 0 else "CONTINUE  "
        cards.append(f"{head}'{chunk}{tail}'".ljust(CARD_LENGTH))
    return cards


def emit_header_cards(record: LastStepRecord) -> list[str]:
    check_record(record)
    cards: list[str] = []
    for attr, keyword, comment in SCALAR_KEYWORDS:
        value = getattr(record, attr)
        if value is not None:
            cards.extend(format_cards(keyword, value, comment))
    for attr, root, comment in INDEXED_KEYWORDS:
        items = getattr(record, attr)
        if len(items) > MAX_INDEX:
            raise TooManyIndexed(f"{len(items)} {attr} exceed {MAX_INDEX}")
        for n, item in enumerate(items, 1):
            value = f"{item[0]}={item[1]}" if attr == "parameters" else item
            cards.extend(format_cards(indexed_keyword(root, n), value, comment))
    return cards


def _parse_string(text: str, index: int) -> str:
    """Parse a quoted FITS string value at the start of ``text``."""
    stripped = text.lstrip(" ")
    if not stripped.startswith("'"):
        raise MalformedCard(index, "value is not a quoted string")
    out = []
    i = 1
    while True:
        if i >= len(stripped):
            raise MalformedCard(index, "unterminated string")
        ch = stripped[i]
        if ch == "'":
            if stripped[i + 1:i + 2] == "'":
                out.append("'")
                i += 2
                continue
            break
        out.append(ch)
        i += 1
    rest = stripped[i + 1:].strip(" ")
    if rest and not rest.startswith("/"):
        raise MalformedCard(index, f"unexpected text after value: {rest!r}")
    return "".join(out).rstrip(" ")


def _classify(keyword: str) -> tuple[str, int | None]:
    for attr, kw, _ in SCALAR_KEYWORDS:
        if kw == keyword:
            return attr, None
    m = _INDEXED_RE.match(keyword)
    if m:
        n = int(m.group(1))
        for attr, root, _ in INDEXED_KEYWORDS:
            if 1 <= n <= MAX_INDEX and indexed_keyword(root, n) == keyword:
                return attr, n
    raise KeyError(keyword)


def parse_header_cards(cards: Iterable[str]) -> LastStepRecord:
    """Read PRV_* cards back into a record; other cards are ignored."""
    cards = [c.rstrip("\r\n") for c in cards]
    raw: dict[str, tuple[str, int | None, str]] = {}
    i = 0
    while i < len(cards):
        card = cards[i]
        if len(card) > CARD_LENGTH:
            raise MalformedCard(i, f"card is {len(card)} characters long")
        card = card.ljust(CARD_LENGTH)
        keyword = card[:8].rstrip(" ")
        i += 1
        if keyword == "END":
            break
        if not keyword.startswith("PRV_"):
            continue
        if not _KEYWORD_RE.match(keyword) or card[8:10] != "= ":
            raise MalformedCard(i - 1, f"bad keyword field {card[:10]!r}")
        try:
            attr, n = _classify(keyword)
        except KeyError:
            raise MalformedCard(i - 1, f"unknown provenance keyword {keyword}") from None
        if keyword in raw:
            raise DuplicateKeyword(keyword)
        value = _parse_string(card[10:], i - 1)
        while value.endswith("&") and i < len(cards) and cards[i][:8] == "CONTINUE":
            nxt = cards[i]
            if len(nxt) > CARD_LENGTH:
                raise MalformedCard(i, f"card is {len(nxt)} characters long")
            value = value[:-1] + _parse_string(nxt.ljust(CARD_LENGTH)[10:], i)
            i += 1
        raw[keyword] = (attr, n, value)

    if not raw:
        raise NoProvenance("no PRV_* keywords in header")
    if "PRV_ID" not in raw:
        raise MalformedCard(0, "PRV_ID card missing")
    values: dict[str, object] = {}
    indexed: dict[str, list[tuple[int, str]]] = {attr: [] for attr, _, _ in INDEXED_KEYWORDS}
    for attr, n, value in raw.values():
        if n is None:
            values[attr] = value
        else:
            indexed[attr].append((n, value))
    record = LastStepRecord(**values)
    for attr, items in indexed.items():
        ordered = [v for _, v in sorted(items)]
        if attr == "parameters":
            pairs = []
            for item in ordered:
                name, sep, pval = item.partition("=")
                if not sep:
                    raise MalformedCard(0, f"parameter card without '=': {item!r}")
                pairs.append((name, pval))
            record.parameters = pairs
        else:
            setattr(record, attr, ordered)
    return record


# -- files ------------------------------------------------------------------

FITS_SUFFIXES = {".fits", ".fit", ".fts"}
CARD_SUFFIXES = {".hdr", ".cards", ".txt"}


def read_fits_header(path: str | Path) -> list[str]:
    """Cards of the primary header of a FITS file, up to and including END."""
    cards: list[str] = []
    with open(path, "rb") as fh:
        while True:
            block = fh.read(BLOCK_SIZE)
            if len(block) < BLOCK_SIZE:
                raise MalformedCard(len(cards), "file ends before the END card")
            text = block.decode("ascii", errors="replace")
            for start in range(0, BLOCK_SIZE, CARD_LENGTH):
                card = text[start:start + CARD_LENGTH]
                cards.append(card)
                if card[:8].rstrip(" ") == "END":
                    return cards


def pack_header(cards: Iterable[str]) -> bytes:
    """Minimal FITS primary header block(s) wrapping ``cards``."""
    lines = [
        "SIMPLE  =                    T".ljust(CARD_LENGTH),
        "BITPIX  =                    8".ljust(CARD_LENGTH),
        "NAXIS   =                    0".ljust(CARD_LENGTH),
        *(c.ljust(CARD_LENGTH) for c in cards),
        "END".ljust(CARD_LENGTH),
    ]
    data = "".join(lines).encode("ascii")
    return data + b" " * (-len(data) % BLOCK_SIZE)


def read_card_file(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="ascii").splitlines()


def write_card_file(path: str | Path, cards: Iterable[str]) -> None:
    Path(path).write_text("".join(c + "\n" for c in cards), encoding="ascii")


def read_header_file(path: str | Path) -> LastStepRecord:
    path = Path(path)
    if path.suffix.lower() in FITS_SUFFIXES:
        return parse_header_cards(read_fits_header(path))
    return parse_header_cards(read_card_file(path))


def scan_directory(root: str | Path) -> list[LastStepRecord]:
    """Parse every header-bearing file below ``root``; files without PRV cards are skipped."""
    records = []
    for path in sorted(Path(root).rglob("*")):
        if not path.is_file() or path.suffix.lower() not in FITS_SUFFIXES | CARD_SUFFIXES:
            continue
        try:
            records.append(read_header_file(path))
        except NoProvenance:
            log.info("no provenance keywords in %s", path)
    return records


# -- reconstruction ---------------------------------------------------------

def expand_record(record: LastStepRecord, namespaces: dict[str, str],
                  default_prefix: str = DEFAULT_PREFIX) -> ProvenanceDocument:
    """One-step document described by a single record."""
    def q(text: str) -> QualifiedId:
        return parse_qualified_id(text, namespaces, default_prefix)

    doc = ProvenanceDocument(namespaces=dict(namespaces))
    ent_id = q(record.entity_id)
    doc.add(Entity(ent_id, name=record.entity_name, location=record.location,
                   generated_at=record.generated_at))
    if record.contact_id is not None:
        agent_id = q(record.contact_id)
        doc.add(Agent(agent_id, name=record.contact_name or "", email=record.contact_email),
                stub=not record.contact_name)
        doc.add(WasAttributedTo(ent_id, agent_id, CONTACT_ROLE))
    if record.activity_id is None:
        return doc

    act_id = q(record.activity_id)
    attrs = {}
    if record.description_name:
        attrs["voprov:desc_name"] = record.description_name
    if record.description_version:
        attrs["voprov:desc_version"] = record.description_version
    doc.add(Activity(act_id, name=record.activity_name, start_time=record.activity_start,
                     end_time=record.activity_end, attributes=attrs))
    doc.add(WasGeneratedBy(ent_id, act_id))
    for text in dict.fromkeys(record.used_ids):
        used_id = q(text)
        if used_id not in doc.entities:
            doc.add(Entity(used_id), stub=True)
        doc.add(Used(act_id, used_id))
    for text in dict.fromkeys(record.sibling_generated_ids):
        sib_id = q(text)
        if sib_id not in doc.entities:
            doc.add(Entity(sib_id), stub=True)
        doc.add(WasGeneratedBy(sib_id, act_id))
    for name, value in record.parameters:
        doc.add(Parameter(act_id, name, value))
    return doc


def reconstruct(records: Iterable[LastStepRecord], namespaces: dict[str, str] | None = None,
                default_prefix: str = DEFAULT_PREFIX) -> ProvenanceDocument:
    """Merge the one-step documents of all records into one graph.

    Ids referenced but described by no record remain stubs.
    """
    ns = dict(namespaces or DEFAULT_NAMESPACES)
    parts = [expand_record(r, ns, default_prefix) for r in records]
    if not parts:
        return ProvenanceDocument(namespaces=ns)
    # pairwise tree merge keeps the total cost near n log n
    while len(parts) > 1:
        parts = [merge_documents(parts[i], parts[i + 1]) if i + 1 < len(parts) else parts[i]
                 for i in range(0, len(parts), 2)]
    return parts[0]
