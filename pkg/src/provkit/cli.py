"""Command line: ``provkit [--store DIR] <command> ...``.

Exit status is 0 on success, 1 for usage errors and 2 when the input data
(or the store) is at fault.  Diagnostics are one line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from provkit.capture import fold_events, read_events
from provkit.errors import ProvError
from provkit.laststep import FITS_SUFFIXES, build_laststep, emit_header_cards, pack_header, reconstruct, \
    scan_directory, write_card_file
from provkit.model import DEFAULT_PREFIX, has_errors, parse_qualified_id, validate_document
from provkit.provsap import ProvSapRequest, handle_provsap, serve
from provkit.serializers import Model, SerializationFormat, from_prov_json
from provkit.store import Direction, ProvenanceStore

STORE_ENV = "PROVKIT_STORE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _depth(text: str) -> int | None:
    if text.upper() == "ALL":
        return None
    if not text.isdigit():
        raise argparse.ArgumentTypeError(f"expected ALL or an integer >= 0, got {text!r}")
    return int(text)


def _flag(text: str) -> bool:
    if text not in ("0", "1"):
        raise argparse.ArgumentTypeError("expected 0 or 1")
    return text == "1"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="provkit", description="Capture, store and serve provenance records.")
    p.add_argument("--store", help=f"store directory (default: ${STORE_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="fold a capture event file into the store")
    s.add_argument("events")

    s = sub.add_parser("import", help="load a PROV-JSON document into the store")
    s.add_argument("document")

    s = sub.add_parser("export", help="write a serialization of a record's provenance")
    s.add_argument("--id", required=True)
    s.add_argument("--depth", type=_depth, default=None, help="ALL or an integer (default ALL)")
    s.add_argument("--direction", type=str.upper, choices=[d.value for d in Direction], default="BACKWARD")
    s.add_argument("--format", type=str.upper, choices=[f.value for f in SerializationFormat],
                   default="PROV-JSON")
    s.add_argument("--model", type=str.upper, choices=[m.value for m in Model], default="IVOA")
    s.add_argument("--agents", type=_flag, default=True)
    s.add_argument("--configuration", type=_flag, default=True)
    s.add_argument("--descriptions", type=int, choices=[0, 1, 2], default=1)
    s.add_argument("--attributes", type=_flag, default=True)
    s.add_argument("--out", help="output file (default stdout)")

    header = sub.add_parser("header", help="last-step header cards")
    hsub = header.add_subparsers(dest="header_command", required=True, parser_class=_Parser)
    s = hsub.add_parser("emit", help="write the header cards of one entity")
    s.add_argument("--id", required=True)
    s.add_argument("--out", help="card file, or a minimal FITS header if the name ends in .fits")
    s.add_argument("--no-parameters", action="store_true")
    s = hsub.add_parser("scan", help="rebuild provenance from headers below a directory and ingest it")
    s.add_argument("directory")

    s = sub.add_parser("validate", help="check a PROV-JSON document")
    s.add_argument("document")

    s = sub.add_parser("serve", help="run the ProvSAP HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    return p


def _open_store(args: argparse.Namespace) -> ProvenanceStore:
    root = args.store or os.environ.get(STORE_ENV)
    if not root:
        raise UsageError(f"no store given; use --store or set {STORE_ENV}")
    return ProvenanceStore(root)


def _print_stats(stats) -> None:
    print(json.dumps(stats.as_dict(), sort_keys=True))


def _cmd_ingest(args: argparse.Namespace) -> int:
    with _open_store(args) as store:
        doc, warnings = fold_events(read_events(args.events, store.namespaces or None),
                                    store.namespaces or None)
        for w in warnings:
            print(f"warning: {w.code} {w.subject}", file=sys.stderr)
        _print_stats(store.ingest_document(doc))
    return 0


def _cmd_import(args: argparse.Namespace) -> int:
    text = Path(args.document).read_text(encoding="utf-8")
    with _open_store(args) as store:
        _print_stats(store.ingest_document(from_prov_json(text)))
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    if not args.id:
        raise UsageError("--id must not be empty")
    request = ProvSapRequest(id=args.id, depth=args.depth, direction=args.direction, format=args.format,
                             model=args.model, agents=args.agents, configuration=args.configuration,
                             descriptions=args.descriptions, attributes=args.attributes)
    with _open_store(args) as store:
        response = handle_provsap(store, request)
    if response.status != 200:
        err = json.loads(response.body)
        print(f"error: {err['error']}: {err['detail']}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_bytes(response.body)
    else:
        sys.stdout.buffer.write(response.body)
        sys.stdout.flush()
    return 0


def _cmd_header(args: argparse.Namespace) -> int:
    with _open_store(args) as store:
        if args.header_command == "emit":
            entity_id = parse_qualified_id(args.id, store.namespaces, DEFAULT_PREFIX)
            cards = emit_header_cards(build_laststep(store, entity_id, not args.no_parameters))
            if not args.out:
                sys.stdout.write("".join(c + "\n" for c in cards))
            elif Path(args.out).suffix.lower() in FITS_SUFFIXES:
                Path(args.out).write_bytes(pack_header(cards))
            else:
                write_card_file(args.out, cards)
            return 0
        if not Path(args.directory).is_dir():
            raise UsageError(f"not a directory: {args.directory}")
        doc = reconstruct(scan_directory(args.directory), store.namespaces or None)
        _print_stats(store.ingest_document(doc))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    doc = from_prov_json(Path(args.document).read_text(encoding="utf-8"))
    findings = validate_document(doc)
    for f in findings:
        print(f"{f.severity} {f.code} {f.subject}")
    return 2 if has_errors(findings) else 0


def _cmd_serve(args: argparse.Namespace) -> int:
    with _open_store(args) as store:
        serve(store, args.host, args.port)
    return 0


COMMANDS = {
    "ingest": _cmd_ingest,
    "import": _cmd_import,
    "export": _cmd_export,
    "header": _cmd_header,
    "validate": _cmd_validate,
    "serve": _cmd_serve,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ProvError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
