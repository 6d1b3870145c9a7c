"""Materialize the finalized BIDS tree: planned copy/write actions first,
then execution plus a re-validation of what landed on disk.
"""

from __future__ import annotations

import json
import shutil
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from . import events as events_mod
from .config import Config
from .errors import EmissionRefusedError, EventsParseError
from .model import ProposalDocument, ValidationItem
from .validation import (
    SchemaTable,
    build_filename,
    effective_extension,
    has_errors,
    load_schema,
    validate_document,
    validate_tree,
)

_PARTICIPANT_DESCRIPTIONS = {
    "age": "age of the participant at the time of acquisition",
    "sex": "sex of the participant as recorded by the scanner console",
}


@dataclass
class EmissionPlan:
    copies: list[tuple[str, str]] = field(default_factory=list)  # (source rel, dest rel)
    writes: list[tuple[str, bytes]] = field(default_factory=list)  # (dest rel, content)
    notes: list[str] = field(default_factory=list)  # e.g. overwritten sidecar fields

    def destinations(self) -> list[str]:
        return [dest for _, dest in self.copies] + [dest for dest, _ in self.writes]


@dataclass
class EmissionReport:
    written: list[tuple[str, int]] = field(default_factory=list)  # (dest rel, bytes)
    failed: tuple[str, str] | None = None
    post_validation: list[ValidationItem] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    external_validator_output: str | None = None  # informational only


def write_dataset_description(fields: dict, bids_version: str | None = None) -> bytes:
    """dataset_description.json bytes; Name and BIDSVersion always present."""
    out = {k: v for k, v in fields.items() if v not in (None, "", [])}
    out.setdefault("Name", "Untitled")
    out.setdefault("BIDSVersion", bids_version or Config().bids_version)
    if not out["Name"]:
        out["Name"] = "Untitled"
    return (json.dumps(out, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode()


def write_participants(
    subjects: list[tuple[str, dict[str, str]]], columns: list[str]
) -> tuple[bytes, bytes]:
    """participants.tsv + participants.json for the included subjects.

    ``subjects`` is (label, phenotype) per included subject; missing cells
    become n/a; the column list is exactly what the user kept.
    """
    header = ["participant_id"] + list(columns)
    lines = ["\t".join(header)]
    for label, phenotype in subjects:
        row = [f"sub-{label}"] + [phenotype.get(c, "n/a") or "n/a" for c in columns]
        lines.append("\t".join(row))
    tsv = ("\n".join(lines) + "\n").encode()

    described = {
        c: {"Description": _PARTICIPANT_DESCRIPTIONS.get(c, f"user-provided column {c!r}")}
        for c in columns
    }
    js = (json.dumps(described, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode()
    return tsv, js


def _sidecar_bytes(doc: ProposalDocument, obj, entities: dict[str, str], series, notes: list[str], dest: str) -> bytes:
    merged = dict(obj.sidecar)
    if (series.datatype, series.suffix) in (("func", "bold"), ("func", "sbref")):
        task = entities.get("task")
        if task:
            if "TaskName" in merged and merged["TaskName"] != task:
                notes.append(
                    f"{dest}: TaskName {merged['TaskName']!r} overwritten with {task!r}"
                )
            merged["TaskName"] = task
    return (json.dumps(merged, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode()


def plan_emission(
    doc: ProposalDocument,
    data_root: str | Path,
    config: Config | None = None,
    schema: SchemaTable | None = None,
) -> EmissionPlan:
    """Compute every copy and write before touching the filesystem.

    Refuses (listing the blocking items) when the document still has
    validation errors or when destinations collide.
    """
    config = config or Config()
    schema = schema or load_schema()
    data_root = Path(data_root)

    items = validate_document(doc, schema)
    errors = [i for i in items if i.severity == "error"]
    if errors:
        raise EmissionRefusedError(errors, "document has validation errors")

    plan = EmissionPlan()
    plan.writes.append(
        (
            "dataset_description.json",
            write_dataset_description(doc.dataset_description, config.bids_version),
        )
    )

    included_subjects = [
        (s.label, s.phenotype)
        for idx, s in enumerate(doc.subjects)
        if any(doc.is_emittable(o) for o in doc.objects if o.subject_idx == idx)
    ]
    if included_subjects:
        tsv, js = write_participants(included_subjects, doc.participants_columns)
        plan.writes.append(("participants.tsv", tsv))
        plan.writes.append(("participants.json", js))

    mapping = (
        events_mod.ColumnMapping.from_dict(doc.events_mapping)
        if doc.events_mapping
        else None
    )

    for obj in doc.objects:
        if not doc.is_emittable(obj):
            continue
        series = doc.series_by_id(obj.series_id)
        entities = doc.effective_entities(obj)
        if obj.kind == "image":
            extension = effective_extension(doc, obj)
            dest = build_filename(entities, series.datatype, series.suffix, extension, schema)
            plan.copies.append((obj.paths[0], dest))
            sidecar_dest = build_filename(entities, series.datatype, series.suffix, ".json", schema)
            plan.writes.append(
                (sidecar_dest, _sidecar_bytes(doc, obj, entities, series, plan.notes, sidecar_dest))
            )
        else:
            if mapping is None:
                raise EmissionRefusedError(
                    [
                        ValidationItem(
                            "error",
                            "events-mapping-missing",
                            f"events file {obj.paths[0]} is linked but no column "
                            "mapping has been chosen",
                            {"type": "object", "objectId": obj.object_id},
                        )
                    ]
                )
            try:
                table = events_mod.parse_events_table(data_root / obj.paths[0])
            except EventsParseError as exc:
                raise EmissionRefusedError(
                    [
                        ValidationItem(
                            "error", "events-parse-error", str(exc),
                            {"type": "object", "objectId": obj.object_id},
                        )
                    ]
                ) from exc
            converted, warnings = events_mod.apply_column_mapping(table, mapping)
            plan.notes.extend(f"{obj.paths[0]}: {w}" for w in warnings)
            dest = build_filename(entities, "func", "events", ".tsv", schema)
            plan.writes.append((dest, events_mod.events_tsv_bytes(converted)))
            sidecar = events_mod.events_json_dict(mapping)
            if sidecar:
                json_dest = build_filename(entities, "func", "events", ".json", schema)
                plan.writes.append(
                    (json_dest, (json.dumps(sidecar, indent=2, sort_keys=True) + "\n").encode())
                )

    destinations = plan.destinations()
    collisions = sorted({d for d in destinations if destinations.count(d) > 1})
    if collisions:
        raise EmissionRefusedError(
            [
                ValidationItem(
                    "error", "duplicate-filename", f"destination {d} written twice"
                )
                for d in collisions
            ],
            "destination collision",
        )
    return plan


def execute_emission(
    plan: EmissionPlan,
    data_root: str | Path,
    output_root: str | Path,
    schema: SchemaTable | None = None,
) -> EmissionReport:
    """Write the planned tree and re-validate it.

    The output root must be empty or absent. Filesystem failures stop the
    run and are named in the report; residual validation items are reported
    but never retract written files.
    """
    data_root = Path(data_root)
    output_root = Path(output_root)
    if output_root.exists() and any(output_root.iterdir()):
        raise EmissionRefusedError([], f"output directory {output_root} is not empty")
    output_root.mkdir(parents=True, exist_ok=True)

    report = EmissionReport(notes=list(plan.notes))
    try:
        for source_rel, dest_rel in plan.copies:
            dest = output_root / dest_rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(data_root / source_rel, dest)
            report.written.append((dest_rel, dest.stat().st_size))
        for dest_rel, content in plan.writes:
            dest = output_root / dest_rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(content)
            report.written.append((dest_rel, len(content)))
    except OSError as exc:
        report.failed = (dest_rel, str(exc))
        return report

    report.post_validation = validate_tree(output_root, schema)
    return report


def emit(
    doc: ProposalDocument,
    data_root: str | Path,
    output_root: str | Path,
    config: Config | None = None,
) -> EmissionReport:
    """plan + execute in one call (the finalize operation)."""
    config = config or Config()
    schema = load_schema()
    plan = plan_emission(doc, data_root, config, schema)
    report = execute_emission(plan, data_root, output_root, schema)
    if config.external_validator and report.failed is None:
        report.external_validator_output = _run_external_validator(
            config.external_validator, Path(output_root)
        )
    return report


def _run_external_validator(executable: str, tree: Path) -> str:
    """Belt-and-suspenders check: run a third-party validator on the emitted
    tree and surface its output informationally; never fails the emission."""
    import subprocess

    try:
        proc = subprocess.run(
            [executable, str(tree)], capture_output=True, text=True, timeout=600
        )
        output = (proc.stdout + proc.stderr).strip()
        return f"exit {proc.returncode}\n{output}" if output else f"exit {proc.returncode}"
    except OSError as exc:
        return f"external validator could not run: {exc}"


def archive_tree(root: str | Path, destination: str | Path) -> Path:
    """Zip a finalized tree for download; returns the archive path."""
    root = Path(root)
    destination = Path(destination)
    with zipfile.ZipFile(destination, "w", zipfile.ZIP_DEFLATED) as zf:
        for path in sorted(root.rglob("*")):
            if path.is_file():
                zf.write(path, path.relative_to(root).as_posix())
    return destination


def finalization_blockers(doc: ProposalDocument) -> list[ValidationItem]:
    """The error-severity items currently gating finalization."""
    return [i for i in validate_document(doc) if i.severity == "error"]


__all__ = [
    "EmissionPlan",
    "EmissionReport",
    "archive_tree",
    "emit",
    "execute_emission",
    "finalization_blockers",
    "has_errors",
    "plan_emission",
    "write_dataset_description",
    "write_participants",
]
