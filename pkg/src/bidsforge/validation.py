"""Entity/filename rules and the document- and tree-level validators.

Errors block finalization; warnings never do. The schema table is an
embedded MRI subset of the BIDS filename rules, shipped as a versioned
data file.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import EntityError
from .model import (
    ENTITY_LONG_NAMES,
    ObjectDescriptor,
    ProposalDocument,
    ValidationItem,
    is_valid_entity_value,
)


class SchemaTable:
    """Allowed/required entities and extensions per (datatype, suffix)."""

    def __init__(self, raw: dict):
        self.bids_version: str = raw["bidsVersion"]
        self.entity_order: list[str] = list(raw["entityOrder"])
        self._table: dict[tuple[str, str], dict] = {}
        for datatype, suffixes in raw["datatypes"].items():
            for suffix, spec in suffixes.items():
                self._table[(datatype, suffix)] = {
                    "required": list(spec["required"]),
                    "allowed": list(spec["allowed"]),
                    "extensions": list(spec["extensions"]),
                }

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self._table)

    def has_pair(self, datatype: str, suffix: str) -> bool:
        return (datatype, suffix) in self._table

    def required(self, datatype: str, suffix: str) -> list[str]:
        return self._table[(datatype, suffix)]["required"]

    def allowed(self, datatype: str, suffix: str) -> list[str]:
        return self._table[(datatype, suffix)]["allowed"]

    def extensions(self, datatype: str, suffix: str) -> list[str]:
        return self._table[(datatype, suffix)]["extensions"]

    def suffixes(self, datatype: str) -> list[str]:
        return sorted(s for d, s in self._table if d == datatype)

    def sort_entities(self, entities: dict[str, str]) -> list[tuple[str, str]]:
        return sorted(entities.items(), key=lambda kv: self.entity_order.index(kv[0]))


@lru_cache(maxsize=1)
def load_schema(path: str | None = None) -> SchemaTable:
    if path is None:
        text = resources.files("bidsforge").joinpath("data/schema.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return SchemaTable(json.loads(text))


def validate_entity_value(key: str, value: str) -> ValidationItem | None:
    """None when the value is acceptable, otherwise the error item."""
    long_name = ENTITY_LONG_NAMES.get(key, key)
    if value == "":
        return ValidationItem(
            "error", "empty-entity", f"Entity:{long_name} is empty", {"type": "dataset"}
        )
    if not is_valid_entity_value(value):
        return ValidationItem(
            "error",
            "non-alphanumeric-entity",
            f"Entity:{long_name} contains non-alphanumeric character",
            {"type": "dataset"},
        )
    return None


def build_filename(
    entities: dict[str, str],
    datatype: str,
    suffix: str,
    extension: str,
    schema: SchemaTable | None = None,
) -> str:
    """Canonical relative path for one file; entity map order is irrelevant."""
    schema = schema or load_schema()
    if not schema.has_pair(datatype, suffix):
        raise EntityError(
            ValidationItem(
                "error",
                "unknown-classification",
                f"{datatype}/{suffix} is not in the schema table",
            )
        )
    allowed = schema.allowed(datatype, suffix)
    for key, value in entities.items():
        if key not in allowed:
            raise EntityError(
                ValidationItem(
                    "error",
                    "entity-not-allowed",
                    f"entity {key!r} is not allowed for {datatype}/{suffix}",
                )
            )
        item = validate_entity_value(key, value)
        if item is not None:
            raise EntityError(item)
    if "sub" not in entities:
        raise EntityError(
            ValidationItem("error", "missing-entity", "entity 'sub' is required in every filename")
        )
    ordered = schema.sort_entities(entities)
    name = "_".join(f"{k}-{v}" for k, v in ordered) + f"_{suffix}{extension}"
    folder = f"sub-{entities['sub']}"
    if "ses" in entities:
        folder += f"/ses-{entities['ses']}"
    return f"{folder}/{datatype}/{name}"


_KNOWN_EXTENSIONS = (".nii.gz", ".nii", ".json", ".tsv", ".bval", ".bvec")


def parse_filename(relpath: str, schema: SchemaTable | None = None) -> dict:
    """Invert build_filename; raises ValueError on malformed paths."""
    schema = schema or load_schema()
    parts = relpath.replace("\\", "/").split("/")
    if len(parts) not in (3, 4):
        raise ValueError(f"{relpath}: expected sub[/ses]/<datatype>/<file>")
    filename = parts[-1]
    datatype = parts[-2]

    extension = next((e for e in _KNOWN_EXTENSIONS if filename.endswith(e)), None)
    if extension is None:
        raise ValueError(f"{relpath}: unknown extension")
    stem = filename[: -len(extension)]
    tokens = stem.split("_")
    if len(tokens) < 2:
        raise ValueError(f"{relpath}: no suffix in {filename!r}")
    suffix = tokens[-1]
    entities: dict[str, str] = {}
    for token in tokens[:-1]:
        m = re.fullmatch(r"([a-z]+)-([A-Za-z0-9]+)", token)
        if not m:
            raise ValueError(f"{relpath}: malformed entity token {token!r}")
        key, value = m.group(1), m.group(2)
        if key in entities:
            raise ValueError(f"{relpath}: entity {key!r} repeated")
        entities[key] = value
    if not schema.has_pair(datatype, suffix):
        raise ValueError(f"{relpath}: unknown datatype/suffix {datatype}/{suffix}")
    if parts[0] != f"sub-{entities.get('sub')}":
        raise ValueError(f"{relpath}: folder {parts[0]!r} does not match the sub entity")
    if len(parts) == 4 and parts[1] != f"ses-{entities.get('ses')}":
        raise ValueError(f"{relpath}: folder {parts[1]!r} does not match the ses entity")
    if len(parts) == 3 and "ses" in entities:
        raise ValueError(f"{relpath}: ses entity without a session folder")
    ordered = [k for k, _ in schema.sort_entities(entities)]
    if list(entities) != ordered:
        raise ValueError(f"{relpath}: entities out of canonical order")
    return {"entities": entities, "datatype": datatype, "suffix": suffix, "extension": extension}


# --------------------------------------------------------------------------
# Document validation
# --------------------------------------------------------------------------


def _series_target(series_id: int) -> dict:
    return {"type": "series", "seriesId": series_id}


def _object_target(object_id: int) -> dict:
    return {"type": "object", "objectId": object_id}


def effective_extension(doc: ProposalDocument, obj: ObjectDescriptor) -> str:
    if obj.kind == "events":
        return ".tsv"
    return ".nii.gz" if obj.paths and obj.paths[0].endswith(".nii.gz") else ".nii"


def validate_document(doc: ProposalDocument, schema: SchemaTable | None = None) -> list[ValidationItem]:
    """All errors and warnings for the current proposal.

    Errors gate finalization: bad entity values, missing required entities,
    keys the schema does not allow, duplicate destination filenames.
    Warnings flag curation concerns (orphaned sbref/events, placeholder
    events, empty subjects) and never gate.
    """
    schema = schema or load_schema()
    items: list[ValidationItem] = []

    for series in doc.series:
        if series.datatype == "exclude":
            continue
        if not schema.has_pair(series.datatype, series.suffix):
            items.append(
                ValidationItem(
                    "error",
                    "unknown-classification",
                    f"series {series.series_id}: {series.datatype}/{series.suffix} "
                    "is not in the schema table",
                    _series_target(series.series_id),
                )
            )
            continue
        allowed = schema.allowed(series.datatype, series.suffix)
        for key, value in series.entities.items():
            item = validate_entity_value(key, value)
            if item is not None:
                item.target = _series_target(series.series_id)
                items.append(item)
            elif key not in allowed:
                items.append(
                    ValidationItem(
                        "error",
                        "entity-not-allowed",
                        f"entity {key!r} is not allowed for "
                        f"{series.datatype}/{series.suffix}",
                        _series_target(series.series_id),
                    )
                )

    for subject in doc.subjects:
        item = validate_entity_value("sub", subject.label)
        if item is not None:
            item.target = {"type": "subject", "label": subject.label}
            items.append(item)
        for session in subject.sessions:
            s_item = validate_entity_value("ses", session.label)
            if s_item is not None:
                s_item.target = {"type": "subject", "label": subject.label}
                items.append(s_item)

    filenames: dict[str, list[int]] = {}
    for obj in doc.objects:
        if not doc.is_emittable(obj):
            continue
        series = doc.series_by_id(obj.series_id)
        entities = doc.effective_entities(obj)
        if not schema.has_pair(series.datatype, series.suffix):
            continue  # already reported at series level
        allowed = schema.allowed(series.datatype, series.suffix)
        bad_value = False
        for key, value in entities.items():
            item = validate_entity_value(key, value)
            if item is not None:
                item.target = _object_target(obj.object_id)
                items.append(item)
                bad_value = True
            elif key not in allowed:
                items.append(
                    ValidationItem(
                        "error",
                        "entity-not-allowed",
                        f"entity {key!r} is not allowed for "
                        f"{series.datatype}/{series.suffix}",
                        _object_target(obj.object_id),
                    )
                )
                bad_value = True
        for key in schema.required(series.datatype, series.suffix):
            if key not in entities:
                items.append(
                    ValidationItem(
                        "error",
                        "missing-entity",
                        f"{series.datatype}/{series.suffix} requires the "
                        f"{ENTITY_LONG_NAMES.get(key, key)} ({key}) entity",
                        _object_target(obj.object_id),
                    )
                )
                bad_value = True
        if not bad_value:
            path = build_filename(
                entities, series.datatype, series.suffix,
                effective_extension(doc, obj), schema,
            )
            filenames.setdefault(path, []).append(obj.object_id)

    for path, ids in sorted(filenames.items()):
        if len(ids) > 1:
            items.append(
                ValidationItem(
                    "error",
                    "duplicate-filename",
                    f"objects {ids} all resolve to {path}",
                    {"type": "dataset"},
                )
            )

    items.extend(_orphan_warnings(doc))

    if doc.events_mapping is None and any(
        obj.kind == "events" and doc.is_emittable(obj) for obj in doc.objects
    ):
        items.append(
            ValidationItem(
                "error",
                "events-mapping-missing",
                "timing files are linked but no column mapping has been chosen; "
                "pick the onset/duration columns before finalizing",
                {"type": "dataset"},
            )
        )

    for obj in doc.objects:
        if obj.kind == "events" and not obj.exclude:
            if not obj.link or obj.link.get("state") != "linked":
                labels = (obj.link or {}).get("labels", {})
                items.append(
                    ValidationItem(
                        "warning",
                        "events-placeholder",
                        f"events file {obj.paths[0]} could not be matched to a "
                        f"functional BOLD image; placeholder labels {labels} need review",
                        _object_target(obj.object_id),
                    )
                )

    for idx, subject in enumerate(doc.subjects):
        if not any(
            doc.is_emittable(o) for o in doc.objects if o.subject_idx == idx
        ):
            items.append(
                ValidationItem(
                    "warning",
                    "empty-subject",
                    f"subject {subject.label!r} has no included files",
                    {"type": "subject", "label": subject.label},
                )
            )
    return items


def _orphan_warnings(doc: ProposalDocument) -> list[ValidationItem]:
    """sbref/events kept while every matching bold is excluded."""
    items: list[ValidationItem] = []
    bolds: list[tuple[ObjectDescriptor, dict]] = []
    for obj in doc.objects:
        if obj.kind != "image":
            continue
        series = doc.series_by_id(obj.series_id)
        if (series.datatype, series.suffix) == ("func", "bold"):
            bolds.append((obj, doc.effective_entities(obj)))

    for obj in doc.objects:
        if not doc.is_emittable(obj):
            continue
        series = doc.series_by_id(obj.series_id)
        if series.datatype != "func" or series.suffix not in ("sbref", "events"):
            continue
        entities = doc.effective_entities(obj)
        matching = [
            (b, be)
            for b, be in bolds
            if b.subject_idx == obj.subject_idx
            and b.session_idx == obj.session_idx
            and be.get("task") == entities.get("task")
        ]
        excluded = [b for b, _ in matching if b.exclude]
        if matching and excluded and not any(doc.is_emittable(b) for b, _ in matching):
            ref = excluded[0]
            items.append(
                ValidationItem(
                    "warning",
                    "orphaned-" + series.suffix,
                    f"The corresponding func/bold #{ref.object_id} is currently set "
                    f"to exclude from BIDS conversion. We recommend this "
                    f"func/{series.suffix} also be excluded unless there is a "
                    "reason for keeping it.",
                    _object_target(obj.object_id),
                )
            )
    return items


def has_errors(items: list[ValidationItem]) -> bool:
    return any(i.severity == "error" for i in items)


# --------------------------------------------------------------------------
# Emitted-tree validation
# --------------------------------------------------------------------------

_TREE_IGNORE = {
    "dataset_description.json",
    "participants.tsv",
    "participants.json",
    "README",
    "CHANGES",
    ".bidsignore",
}


def validate_tree(root: str | Path, schema: SchemaTable | None = None) -> list[ValidationItem]:
    """Re-validate an emitted dataset directory from its filenames alone."""
    schema = schema or load_schema()
    root = Path(root)
    items: list[ValidationItem] = []
    if not root.is_dir():
        return [
            ValidationItem("error", "not-a-directory", f"{root} is not a directory")
        ]
    if not (root / "dataset_description.json").is_file():
        items.append(
            ValidationItem("error", "missing-dataset-description",
                           "dataset_description.json is missing")
        )
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        if path.name in _TREE_IGNORE and "/" not in rel:
            continue
        target = {"type": "file", "path": rel}
        try:
            parsed = parse_filename(rel, schema)
        except ValueError as exc:
            items.append(ValidationItem("error", "bad-filename", str(exc), target))
            continue
        datatype, suffix = parsed["datatype"], parsed["suffix"]
        entities = parsed["entities"]
        allowed = schema.allowed(datatype, suffix)
        for key in entities:
            if key not in allowed:
                items.append(
                    ValidationItem(
                        "error",
                        "entity-not-allowed",
                        f"{rel}: entity {key!r} is not allowed for {datatype}/{suffix}",
                        target,
                    )
                )
        for key in schema.required(datatype, suffix):
            if key not in entities:
                items.append(
                    ValidationItem(
                        "error",
                        "missing-entity",
                        f"{rel}: {datatype}/{suffix} requires the {key} entity",
                        target,
                    )
                )
        if parsed["extension"] not in schema.extensions(datatype, suffix):
            items.append(
                ValidationItem(
                    "error",
                    "bad-extension",
                    f"{rel}: extension {parsed['extension']!r} is not allowed "
                    f"for {datatype}/{suffix}",
                    target,
                )
            )
    return items
