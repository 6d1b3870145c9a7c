"""Headless driver: propose a mapping, finalize an (optionally hand-edited)
proposal into a BIDS tree, validate either form, or serve the web API.

Exit codes: 0 success, 2 configuration, 3 parse, 4 validation, 5 filesystem.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import emitter, pipeline
from .config import Config
from .errors import (
    ConfigurationError,
    DocumentIntegrityError,
    EmissionRefusedError,
    EventsParseError,
    ExtractionError,
    FormatError,
    SidecarParseError,
    UnsafeArchiveError,
)
from .ingest import unpack_upload
from .model import parse_document, serialize_document
from .validation import validate_document, validate_tree

EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_FILESYSTEM = 5

_PARSE_ERRORS = (
    SidecarParseError,
    EventsParseError,
    DocumentIntegrityError,
    FormatError,
    ExtractionError,
    UnsafeArchiveError,
)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _print_items(items) -> None:
    for item in items:
        click.echo(f"  [{item.severity.upper()}] {item.code}: {item.message}")


@click.group()
def main() -> None:
    """Propose-and-revise conversion of raw neuroimaging data to BIDS."""


@main.command()
@click.argument("input_path", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path),
              help="Where to write the proposal document (core.json).")
@click.option("--keyphrases", type=click.Path(exists=True, path_type=Path),
              help="Override the keyphrase classification table.")
@click.option("--converter", help="External DICOM-to-NIfTI converter executable.")
@click.option("--thumbnails", type=click.Path(path_type=Path),
              help="Directory to render per-image thumbnails into.")
@click.option("--workdir", type=click.Path(path_type=Path),
              help="Extraction directory when INPUT_PATH is an archive.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary on stdout.")
def propose(input_path: Path, out_path: Path, keyphrases: Path | None,
            converter: str | None, thumbnails: Path | None,
            workdir: Path | None, as_json: bool) -> None:
    """Run ingest and inference over INPUT_PATH; write the proposal document."""
    config = Config.from_env(keyphrase_file=keyphrases, converter_path=converter)
    try:
        if input_path.is_dir():
            tree = input_path
        else:
            if workdir is None:
                workdir = out_path.with_suffix("").with_name(out_path.stem + "-data")
            tree = unpack_upload(input_path, workdir=workdir)
            click.echo(f"extracted upload into {tree}")
        doc, report = pipeline.analyze_tree(tree, config, thumbnails_dir=thumbnails)
    except ConfigurationError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except _PARSE_ERRORS as exc:
        _fail(str(exc), EXIT_PARSE)
    except OSError as exc:
        _fail(str(exc), EXIT_FILESYSTEM)

    if not doc.objects:
        _fail("no images found", EXIT_PARSE)

    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_bytes(serialize_document(doc))
    except OSError as exc:
        _fail(str(exc), EXIT_FILESYSTEM)

    items = validate_document(doc)
    if as_json:
        click.echo(json.dumps({
            "document": str(out_path),
            "subjects": [s.label for s in doc.subjects],
            "series": [
                {"seriesId": s.series_id, "datatype": s.datatype, "suffix": s.suffix,
                 "heuristic": s.heuristic, "entities": s.entities}
                for s in doc.series
            ],
            "objects": len(doc.objects),
            "errors": sum(1 for i in items if i.severity == "error"),
            "warnings": sum(1 for i in items if i.severity == "warning"),
        }))
        return

    click.echo(f"wrote {out_path}")
    click.echo(f"subjects: {', '.join('sub-' + s.label for s in doc.subjects) or '(none)'}")
    click.echo("series:")
    for s in doc.series:
        members = sum(1 for o in doc.objects if o.series_id == s.series_id)
        label = f"{s.datatype}/{s.suffix}" if s.suffix else s.datatype
        entities = " ".join(f"{k}-{v}" for k, v in sorted(s.entities.items()))
        click.echo(
            f"  #{s.series_id} {label:<16} {entities:<24} "
            f"[{s.heuristic}] ({members} file(s))"
        )
    if items:
        click.echo("validation:")
        _print_items(items)


@main.command()
@click.argument("document_path", type=click.Path(exists=True, path_type=Path))
@click.option("--data", "data_root", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Root directory the document's file paths are relative to.")
@click.option("--out", "out_root", required=True, type=click.Path(path_type=Path),
              help="Output directory for the BIDS tree (must be empty or absent).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary on stdout.")
def finalize(document_path: Path, data_root: Path, out_root: Path, as_json: bool) -> None:
    """Emit the BIDS tree for a (possibly hand-edited) proposal document."""
    try:
        doc = parse_document(document_path.read_bytes())
    except _PARSE_ERRORS as exc:
        _fail(str(exc), EXIT_PARSE)

    items = validate_document(doc)
    errors = [i for i in items if i.severity == "error"]
    if errors:
        click.echo("validation errors; nothing written:", err=True)
        _print_items(errors)
        sys.exit(EXIT_VALIDATION)

    try:
        report = emitter.emit(doc, data_root, out_root)
    except EmissionRefusedError as exc:
        click.echo("emission refused:", err=True)
        _print_items(exc.items)
        sys.exit(EXIT_VALIDATION)
    except OSError as exc:
        _fail(str(exc), EXIT_FILESYSTEM)

    if report.failed:
        _fail(f"write failed at {report.failed[0]}: {report.failed[1]}", EXIT_FILESYSTEM)

    if as_json:
        click.echo(json.dumps({
            "out": str(out_root),
            "written": report.written,
            "notes": report.notes,
            "postValidationErrors": sum(
                1 for i in report.post_validation if i.severity == "error"
            ),
        }))
        return

    click.echo(f"wrote {len(report.written)} file(s) under {out_root}")
    for note in report.notes:
        click.echo(f"  note: {note}")
    if report.post_validation:
        click.echo("post-emission validation:")
        _print_items(report.post_validation)
    else:
        click.echo("post-emission validation: clean")


@main.command()
@click.argument("target", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable summary on stdout.")
def validate(target: Path, as_json: bool) -> None:
    """Validate a proposal document (file) or an emitted BIDS tree (directory)."""
    try:
        if target.is_dir():
            items = validate_tree(target)
        else:
            items = validate_document(parse_document(target.read_bytes()))
    except _PARSE_ERRORS as exc:
        _fail(str(exc), EXIT_PARSE)

    errors = sum(1 for i in items if i.severity == "error")
    if as_json:
        click.echo(json.dumps({
            "items": [i.to_dict() for i in items],
            "errors": errors,
            "warnings": sum(1 for i in items if i.severity == "warning"),
        }))
    else:
        if items:
            _print_items(items)
        click.echo(f"{errors} error(s), {len(items) - errors} warning(s)")
    sys.exit(EXIT_VALIDATION if errors else 0)


@main.command()
@click.option("--port", type=int, help="Listen port (default from EZB_PORT).")
@click.option("--data-dir", type=click.Path(path_type=Path),
              help="Session storage root (default from EZB_DATA_DIR).")
@click.option("--retention-days", type=float,
              help="Idle days before a session is purged (default from EZB_RETENTION_DAYS).")
@click.option("--converter", help="External converter executable (default from EZB_CONVERTER_PATH).")
@click.option("--keyphrases", type=click.Path(exists=True, path_type=Path),
              help="Keyphrase table (default from EZB_KEYPHRASE_FILE).")
@click.option("--ui", "ui_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Built web bundle to serve at /.")
def serve(port: int | None, data_dir: Path | None, retention_days: float | None,
          converter: str | None, keyphrases: Path | None, ui_dir: Path | None) -> None:
    """Run the session service (binds 127.0.0.1)."""
    from .service import run_server

    config = Config.from_env(
        port=port,
        data_dir=data_dir,
        retention_days=retention_days,
        converter_path=converter,
        keyphrase_file=keyphrases,
        ui_dir=ui_dir,
    )
    try:
        run_server(config)
    except ConfigurationError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except OSError as exc:
        _fail(f"could not start server: {exc}", EXIT_CONFIG)


if __name__ == "__main__":
    main()
