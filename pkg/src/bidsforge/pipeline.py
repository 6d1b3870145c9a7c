"""Assembly of the proposal document from an unpacked upload, plus the
document revision operations shared by the HTTP service and the CLI.

Assembly is deterministic: discovery is lexicographic, grouping and object
ordering use (acquisition time, series number, path), so the same tree
always serializes to the same bytes.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import events as events_mod
from . import ingest, series as series_mod, subjects as subjects_mod
from .config import Config
from .errors import ConfigurationError, EntityError, EventsParseError
from .ingest import ConversionReport, DiscoveryReport, ImageRecord
from .model import (
    ENTITY_KEYS,
    ENTITY_LONG_NAMES,
    ObjectDescriptor,
    ProposalDocument,
    SeriesDescriptor,
    SubjectRecord,
    ValidationItem,
    is_valid_entity_value,
)
from .validation import load_schema

log = logging.getLogger(__name__)


@dataclass
class AnalysisReport:
    conversion: ConversionReport = field(default_factory=ConversionReport)
    discovery: DiscoveryReport = field(default_factory=DiscoveryReport)
    events_errors: list[tuple[str, str]] = field(default_factory=list)


def _sort_key(record: ImageRecord, root: Path) -> tuple:
    ts = record.sidecar.timestamp()
    return (
        ts.isoformat() if ts else "9999-12-31T23:59:59",
        record.sidecar.series_number if record.sidecar.series_number is not None else 10**9,
        record.nifti_path.relative_to(root).as_posix(),
    )


def analyze_tree(
    root: str | Path,
    config: Config | None = None,
    thumbnails_dir: str | Path | None = None,
) -> tuple[ProposalDocument, AnalysisReport]:
    """Run ingest and inference over an unpacked tree; returns the proposal."""
    root = Path(root)
    config = config or Config()
    schema = load_schema()
    rules = series_mod.load_keyphrase_rules(config.keyphrase_file)
    report = AnalysisReport()

    if config.converter_path:
        report.conversion = ingest.run_external_converter(root, config)
    elif ingest.find_dicom_dirs(root):
        report.conversion.errors.append(
            ("", "DICOM directories found but no converter executable is configured")
        )

    records, report.discovery = ingest.discover_images(root)

    doc = ProposalDocument(
        dataset_description={"Name": "Untitled", "BIDSVersion": config.bids_version},
    )

    # ---- subjects and sessions -------------------------------------------
    guesses = [
        subjects_mod.infer_subject_session(
            r.nifti_path.relative_to(root).as_posix(), r.sidecar
        )
        for r in records
    ]
    buckets: dict[str, list[int]] = {}
    for i, guess in enumerate(guesses):
        buckets.setdefault(guess.subject_label, []).append(i)

    def earliest(indices: list[int]) -> str:
        keys = [_sort_key(records[i], root) for i in indices]
        return min(keys)[0] if keys else "9999"

    ordered_labels = sorted(buckets, key=lambda lbl: (earliest(buckets[lbl]), lbl))
    # the anonymous bucket gets the first free numeric label
    taken = {lbl for lbl in ordered_labels if lbl}
    final_labels: dict[str, str] = {}
    for lbl in ordered_labels:
        if lbl:
            final_labels[lbl] = lbl
            continue
        n = 1
        while subjects_mod.numeric_label(n) in taken:
            n += 1
        final_labels[lbl] = subjects_mod.numeric_label(n)
        taken.add(final_labels[lbl])

    subject_of_record: dict[int, int] = {}
    session_of_record: dict[int, int | None] = {}
    for subject_idx, lbl in enumerate(ordered_labels):
        indices = sorted(buckets[lbl], key=lambda i: _sort_key(records[i], root))
        members = [
            subjects_mod.SessionMember(
                index=i,
                timestamp=records[i].sidecar.timestamp(),
                series_number=records[i].sidecar.series_number,
                explicit_session=guesses[i].session_label,
            )
            for i in indices
        ]
        sessions, assignment = subjects_mod.split_sessions(
            members, gap_hours=config.session_gap_hours
        )
        source = guesses[indices[0]].subject_source if indices else "numericalFallback"
        phenotype = {}
        for i in indices:
            if "age" not in phenotype and records[i].sidecar.patient_age:
                phenotype["age"] = records[i].sidecar.patient_age
            if "sex" not in phenotype and records[i].sidecar.patient_sex:
                phenotype["sex"] = records[i].sidecar.patient_sex
        doc.subjects.append(
            SubjectRecord(final_labels[lbl], source, sessions, phenotype)
        )
        for pos, i in enumerate(indices):
            subject_of_record[i] = subject_idx
            session_of_record[i] = assignment[pos]

    # ---- series inference -------------------------------------------------
    items = [(r.sidecar, _sort_key(r, root)) for r in records]
    doc.series, series_assignment = series_mod.build_series(items, rules, schema)

    # ---- image objects ------------------------------------------------------
    order = sorted(
        range(len(records)),
        key=lambda i: (
            subject_of_record[i],
            session_of_record[i] if session_of_record[i] is not None else -1,
            _sort_key(records[i], root),
        ),
    )
    for object_id, i in enumerate(order):
        r = records[i]
        ts = r.sidecar.timestamp()
        doc.objects.append(
            ObjectDescriptor(
                object_id=object_id,
                kind="image",
                paths=[
                    r.nifti_path.relative_to(root).as_posix(),
                    r.sidecar_path.relative_to(root).as_posix(),
                ],
                series_id=series_assignment[i],
                subject_idx=subject_of_record[i],
                session_idx=session_of_record[i],
                acquisition_order=(
                    ts.isoformat() if ts else None,
                    r.sidecar.series_number,
                ),
                sidecar=r.sidecar.to_dict(),
            )
        )

    series_mod.assign_runs(doc, singleton_run=config.singleton_run)

    # ---- events files -------------------------------------------------------
    events_files = events_mod.find_events_files(root)
    tables: dict[int, events_mod.EventsTable] = {}
    if events_files:
        events_series_id = len(doc.series)
        doc.series.append(
            SeriesDescriptor(
                series_id=events_series_id,
                grouping_key={
                    "seriesDescription": "task events timing files",
                    "imageType": [],
                    "repetitionTime": None,
                    "echoTime": None,
                },
                datatype="func",
                suffix="events",
                heuristic="none",
                message="uploaded task events timing files",
            )
        )
        next_id = len(doc.objects)
        for path in events_files:
            rel = path.relative_to(root).as_posix()
            obj = ObjectDescriptor(
                object_id=next_id,
                kind="events",
                paths=[rel],
                series_id=events_series_id,
                link={"state": "placeholder", "labels": {}},
            )
            try:
                table = events_mod.parse_events_table(path)
                obj.columns = table.header
                obj.sample_rows = table.rows[:3]
                tables[next_id] = table
            except EventsParseError as exc:
                report.events_errors.append((rel, str(exc)))
                obj.validation_items.append(
                    ValidationItem(
                        "warning", "events-parse-error", str(exc),
                        {"type": "object", "objectId": next_id},
                    )
                )
            doc.objects.append(obj)
            next_id += 1
        doc = events_mod.link_events(doc, tables)

    # ---- carry the ingest report into the document --------------------------
    for path in report.discovery.unpaired:
        doc.validation_items.append(
            ValidationItem("warning", "unpaired-file", f"{path} has no matching pair", {"type": "dataset"})
        )
    for path, reason in report.discovery.skipped:
        doc.validation_items.append(
            ValidationItem("warning", "unreadable-record", f"{path}: {reason}", {"type": "dataset"})
        )
    for directory, message in report.conversion.errors:
        doc.validation_items.append(
            ValidationItem(
                "warning",
                "converter-error",
                f"{directory}: {message}" if directory else message,
                {"type": "dataset"},
            )
        )
    for rel, message in report.events_errors:
        doc.validation_items.append(
            ValidationItem("warning", "events-parse-error", f"{rel}: {message}", {"type": "dataset"})
        )

    if thumbnails_dir is not None:
        thumbnails_dir = Path(thumbnails_dir)
        thumbnails_dir.mkdir(parents=True, exist_ok=True)
        for obj in doc.objects:
            if obj.kind != "image":
                continue
            try:
                png = ingest.render_thumbnail(root / obj.paths[0])
            except Exception as exc:
                obj.validation_items.append(
                    ValidationItem(
                        "warning", "thumbnail-failed", str(exc),
                        {"type": "object", "objectId": obj.object_id},
                    )
                )
                continue
            name = f"obj-{obj.object_id}.png"
            (thumbnails_dir / name).write_bytes(png)
            obj.thumbnail = name

    doc.check_integrity()
    return doc, report


# --------------------------------------------------------------------------
# Revision operations (beyond those owned by subjects/series/events modules)
# --------------------------------------------------------------------------


def _relink(doc: ProposalDocument, root: Path | None) -> ProposalDocument:
    if not any(o.kind == "events" for o in doc.objects):
        return doc
    tables = parse_event_tables(doc, root) if root else None
    return events_mod.link_events(doc, tables)


def parse_event_tables(doc: ProposalDocument, root: str | Path) -> dict[int, events_mod.EventsTable]:
    root = Path(root)
    tables: dict[int, events_mod.EventsTable] = {}
    for obj in doc.objects:
        if obj.kind != "events":
            continue
        try:
            tables[obj.object_id] = events_mod.parse_events_table(root / obj.paths[0])
        except EventsParseError:
            continue
    return tables


def apply_object_edit(
    doc: ProposalDocument,
    object_id: int,
    overrides: dict[str, str | None] | None = None,
    exclude: bool | None = None,
    config: Config | None = None,
    root: Path | None = None,
) -> ProposalDocument:
    """Per-object revision: entity overrides and the exclude flag."""
    config = config or Config()
    target = doc.object_by_id(object_id)

    new_overrides = dict(target.entity_overrides)
    for key, value in (overrides or {}).items():
        if key not in ENTITY_KEYS or key in ("sub", "ses", "run"):
            raise EntityError(
                ValidationItem(
                    "error",
                    "invalid-entity-key",
                    f"{key!r} is not an overridable entity key",
                    {"type": "object", "objectId": object_id},
                )
            )
        if value is None or value == "":
            new_overrides.pop(key, None)
            continue
        if not is_valid_entity_value(value):
            raise EntityError(
                ValidationItem(
                    "error",
                    "non-alphanumeric-entity",
                    f"Entity:{ENTITY_LONG_NAMES[key]} contains non-alphanumeric character",
                    {"type": "object", "objectId": object_id},
                )
            )
        new_overrides[key] = value

    out = copy.deepcopy(doc)
    obj = out.object_by_id(object_id)
    obj.entity_overrides = new_overrides
    if exclude is not None:
        obj.exclude = bool(exclude)
    series_mod.assign_runs(out, singleton_run=config.singleton_run)
    out = _relink(out, root)
    out.bump()
    return out


def apply_dataset_description(doc: ProposalDocument, fields: dict) -> ProposalDocument:
    out = copy.deepcopy(doc)
    for key, value in fields.items():
        if value is None:
            out.dataset_description.pop(key, None)
        else:
            out.dataset_description[key] = value
    out.bump()
    return out


def apply_events_mapping(
    doc: ProposalDocument,
    mapping_dict: dict,
    root: str | Path,
) -> ProposalDocument:
    """Store the column mapping (one mapping for every timing file) and relink.

    Mapped columns must exist in every parseable uploaded table.
    """
    mapping = events_mod.ColumnMapping.from_dict(mapping_dict)
    tables = parse_event_tables(doc, root)
    for table in tables.values():
        events_mod.apply_column_mapping(table, mapping)  # raises MappingError
    out = copy.deepcopy(doc)
    out.events_mapping = mapping.to_dict()
    out = events_mod.link_events(out, tables)
    out.bump()
    return out


def apply_participants_edit(
    doc: ProposalDocument,
    columns: list[str] | None = None,
    values: dict[str, dict[str, str]] | None = None,
) -> ProposalDocument:
    """Add/remove participants columns and set per-subject phenotype cells."""
    out = copy.deepcopy(doc)
    if columns is not None:
        out.participants_columns = list(columns)
    for label, cells in (values or {}).items():
        subject = next((s for s in out.subjects if s.label == label), None)
        if subject is None:
            raise ConfigurationError(f"no subject with label {label!r}")
        for column, value in cells.items():
            if value is None:
                subject.phenotype.pop(column, None)
            else:
                subject.phenotype[column] = str(value)
    out.bump()
    return out


def apply_events_link_edit(
    doc: ProposalDocument,
    object_id: int,
    labels: dict[str, str | None],
    root: str | Path | None = None,
) -> ProposalDocument:
    """Manual relink of one events file: the user edits its sub/ses/task/run
    labels, which take precedence over anything inferred, and linking reruns."""
    target = doc.object_by_id(object_id)
    if target.kind != "events":
        raise ConfigurationError(f"object {object_id} is not an events file")
    manual = dict(((target.link or {}).get("manualLabels")) or {})
    for key, value in labels.items():
        if key not in ("sub", "ses", "task", "run"):
            raise EntityError(
                ValidationItem(
                    "error", "invalid-entity-key",
                    f"{key!r} is not an events linkage entity",
                    {"type": "object", "objectId": object_id},
                )
            )
        if value is None or value == "":
            manual.pop(key, None)
            continue
        if key == "run" and not str(value).isdigit():
            raise EntityError(
                ValidationItem(
                    "error", "non-numeric-run", "Entity:run must be an integer",
                    {"type": "object", "objectId": object_id},
                )
            )
        if not is_valid_entity_value(str(value)):
            raise EntityError(
                ValidationItem(
                    "error", "non-alphanumeric-entity",
                    f"Entity:{ENTITY_LONG_NAMES[key]} contains non-alphanumeric character",
                    {"type": "object", "objectId": object_id},
                )
            )
        manual[key] = str(value)

    out = copy.deepcopy(doc)
    obj = out.object_by_id(object_id)
    link = dict(obj.link or {"state": "placeholder", "labels": {}})
    link["manualLabels"] = manual
    obj.link = link
    tables = parse_event_tables(out, root) if root else None
    out = events_mod.link_events(out, tables)
    out.bump()
    return out


def add_events_objects(
    doc: ProposalDocument, root: str | Path, rel_paths: list[str]
) -> ProposalDocument:
    """Register timing files uploaded after analysis and relink everything."""
    root = Path(root)
    out = copy.deepcopy(doc)
    events_series = next(
        (s for s in out.series if (s.datatype, s.suffix) == ("func", "events")), None
    )
    if events_series is None:
        events_series = SeriesDescriptor(
            series_id=len(out.series),
            grouping_key={
                "seriesDescription": "task events timing files",
                "imageType": [],
                "repetitionTime": None,
                "echoTime": None,
            },
            datatype="func",
            suffix="events",
            heuristic="none",
            message="uploaded task events timing files",
        )
        out.series.append(events_series)

    existing = {o.paths[0]: o for o in out.objects if o.kind == "events"}
    next_id = max((o.object_id for o in out.objects), default=-1) + 1
    for rel in rel_paths:
        obj = existing.get(rel)  # re-upload of the same name replaces it
        if obj is None:
            obj = ObjectDescriptor(
                object_id=next_id,
                kind="events",
                paths=[rel],
                series_id=events_series.series_id,
                link={"state": "placeholder", "labels": {}},
            )
            out.objects.append(obj)
            next_id += 1
        obj.columns = None
        obj.sample_rows = None
        obj.validation_items = [
            v for v in obj.validation_items if v.code != "events-parse-error"
        ]
        try:
            table = events_mod.parse_events_table(root / rel)
            obj.columns = table.header
            obj.sample_rows = table.rows[:3]
        except EventsParseError as exc:
            obj.validation_items.append(
                ValidationItem(
                    "warning", "events-parse-error", str(exc),
                    {"type": "object", "objectId": obj.object_id},
                )
            )
    out = events_mod.link_events(out, parse_event_tables(out, root))
    out.bump()
    return out


def apply_subject_label_edit(doc: ProposalDocument, index: int, label: str) -> ProposalDocument:
    """Manual relabeling of one subject (the userEdit source)."""
    if not 0 <= index < len(doc.subjects):
        raise ConfigurationError(f"no subject at index {index}")
    if not is_valid_entity_value(label):
        raise EntityError(
            ValidationItem(
                "error",
                "non-alphanumeric-entity",
                "Entity:subject contains non-alphanumeric character",
                {"type": "subject", "label": label},
            )
        )
    if any(s.label == label for i, s in enumerate(doc.subjects) if i != index):
        raise EntityError(
            ValidationItem(
                "error",
                "duplicate-subject",
                f"subject label {label!r} is already in use",
                {"type": "subject", "label": label},
            )
        )
    out = copy.deepcopy(doc)
    out.subjects[index].label = label
    out.subjects[index].source = "userEdit"
    out.bump()
    return out
