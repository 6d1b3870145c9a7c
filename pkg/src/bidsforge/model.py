"""Shared document model: sidecar metadata, BIDS vocabulary, and the
proposal document that every other module reads and rewrites.

The proposal document is the on-disk interchange format (``core.json``):
a single JSON object with canonical key ordering, so serialize -> parse ->
serialize is byte-identical and diffs between edits are meaningful.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Mapping

from .errors import DocumentIntegrityError, SidecarFieldError, SidecarParseError

SCHEMA_VERSION = "1"

# Canonical entity ordering; filename assembly and key validation both use it.
ENTITY_KEYS = (
    "sub", "ses", "task", "acq", "ce", "rec", "dir",
    "run", "mod", "echo", "flip", "inv", "mt", "part",
)

ENTITY_LONG_NAMES = {
    "sub": "subject",
    "ses": "session",
    "task": "task",
    "acq": "acquisition",
    "ce": "ceagent",
    "rec": "reconstruction",
    "dir": "direction",
    "run": "run",
    "mod": "modality",
    "echo": "echo",
    "flip": "flip",
    "inv": "inversion",
    "mt": "mtransfer",
    "part": "part",
}

DATATYPES = ("anat", "func", "fmap", "dwi", "perf", "exclude")

_ALNUM_RE = re.compile(r"[A-Za-z0-9]+")


def is_valid_entity_value(value: str) -> bool:
    """True iff value is non-empty and contains only letters and digits."""
    return bool(value) and _ALNUM_RE.fullmatch(value) is not None


def sanitize_label(value: str) -> str:
    """Strip every non-alphanumeric character, preserving case."""
    return re.sub(r"[^A-Za-z0-9]", "", value)


@dataclass(frozen=True)
class BidsEntity:
    """One hyphenated key-value filename attribute (e.g. task-bart)."""

    key: str
    value: str

    def __post_init__(self):
        if self.key not in ENTITY_KEYS:
            raise ValueError(f"unknown entity key {self.key!r}")
        if not is_valid_entity_value(self.value):
            raise ValueError(
                f"entity {self.key!r} value {self.value!r} is empty or "
                "contains non-alphanumeric characters"
            )


@dataclass(frozen=True)
class DatatypeSuffix:
    """A (datatype, suffix) classification; exclude carries no suffix."""

    datatype: str
    suffix: str = ""

    def __post_init__(self):
        if self.datatype not in DATATYPES:
            raise ValueError(f"unknown datatype {self.datatype!r}")
        if self.datatype == "exclude" and self.suffix:
            raise ValueError("exclude datatype must have an empty suffix")


def merge_entities(*maps: Mapping[str, str]) -> dict[str, str]:
    """Overlay entity maps left to right; later maps win on shared keys."""
    merged: dict[str, str] = {}
    for m in maps:
        merged.update(m)
    return merged


# --------------------------------------------------------------------------
# Sidecar metadata
# --------------------------------------------------------------------------

_SIDECAR_FIELDS = {
    "SeriesDescription": "series_description",
    "ImageType": "image_type",
    "RepetitionTime": "repetition_time",
    "EchoTime": "echo_time",
    "EchoNumber": "echo_number",
    "PatientName": "patient_name",
    "PatientID": "patient_id",
    "PatientBirthDate": "patient_birth_date",
    "AcquisitionDateTime": "acquisition_date_time",
    "AcquisitionDate": "acquisition_date",
    "AcquisitionTime": "acquisition_time",
    "SeriesNumber": "series_number",
    "PatientSex": "patient_sex",
    "PatientAge": "patient_age",
    "PhaseEncodingDirection": "phase_encoding_direction",
}

_ATTR_TO_SIDECAR = {attr: name for name, attr in _SIDECAR_FIELDS.items()}


def _as_string(name: str, value: Any) -> str:
    if isinstance(value, bool):
        raise SidecarFieldError(name, f"expected a string, got {value!r}")
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return str(value)
    raise SidecarFieldError(name, f"expected a string, got {type(value).__name__}")


def _as_seconds(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SidecarFieldError(name, f"expected a number of seconds, got {value!r}")
    if value < 0:
        raise SidecarFieldError(name, f"must be >= 0, got {value}")
    return float(value)


def _as_int(name: str, value: Any) -> int:
    if isinstance(value, bool):
        raise SidecarFieldError(name, f"expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise SidecarFieldError(name, f"expected an integer, got {value!r}")


@dataclass
class SidecarMetadata:
    """Typed view of one per-image JSON sidecar.

    Unknown keys are kept verbatim in ``extra`` so nothing is lost between
    the source sidecar and the files emitted at the end of the pipeline.
    """

    series_description: str | None = None
    image_type: tuple[str, ...] | None = None
    repetition_time: float | None = None
    echo_time: float | None = None
    echo_number: int | None = None
    patient_name: str | None = None
    patient_id: str | None = None
    patient_birth_date: str | None = None
    acquisition_date_time: str | None = None
    acquisition_date: str | None = None
    acquisition_time: str | None = None
    series_number: int | None = None
    patient_sex: str | None = None
    patient_age: str | None = None
    phase_encoding_direction: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def description(self) -> str:
        return self.series_description or ""

    def timestamp(self) -> datetime | None:
        """Best-effort acquisition timestamp (AcquisitionDateTime first)."""
        if self.acquisition_date_time:
            dt = _parse_datetime(self.acquisition_date_time)
            if dt is not None:
                return dt
        if self.acquisition_date:
            date = _parse_date(self.acquisition_date)
            if date is None:
                return None
            if self.acquisition_time:
                time = _parse_time(self.acquisition_time)
                if time is not None:
                    return datetime.combine(date.date(), time)
            return date
        return None

    @classmethod
    def from_mapping(cls, obj: Mapping[str, Any]) -> "SidecarMetadata":
        meta = cls()
        for name, value in obj.items():
            attr = _SIDECAR_FIELDS.get(name)
            if attr is None:
                meta.extra[name] = value
                continue
            if attr == "image_type":
                if not isinstance(value, list) or not all(
                    isinstance(v, str) for v in value
                ):
                    raise SidecarFieldError(name, "expected a list of strings")
                meta.image_type = tuple(value)
            elif attr in ("repetition_time", "echo_time"):
                setattr(meta, attr, _as_seconds(name, value))
            elif attr == "echo_number":
                n = _as_int(name, value)
                if n < 1:
                    raise SidecarFieldError(name, f"must be positive, got {n}")
                meta.echo_number = n
            elif attr == "series_number":
                meta.series_number = _as_int(name, value)
            else:
                setattr(meta, attr, _as_string(name, value))
        return meta

    def to_dict(self) -> dict[str, Any]:
        """Rebuild the source key set: known fields that were present, plus extra."""
        out: dict[str, Any] = {}
        for attr, name in _ATTR_TO_SIDECAR.items():
            value = getattr(self, attr)
            if value is None:
                continue
            out[name] = list(value) if attr == "image_type" else value
        out.update(self.extra)
        return out


def parse_sidecar(data: bytes | str) -> SidecarMetadata:
    """Parse sidecar JSON bytes into typed metadata.

    Raises SidecarParseError (with byte offset) on malformed JSON and
    SidecarFieldError when a known field has the wrong type.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SidecarParseError(exc.msg, offset=exc.pos) from exc
    if not isinstance(obj, dict):
        raise SidecarParseError("sidecar must be a JSON object")
    return SidecarMetadata.from_mapping(obj)


def _parse_datetime(text: str) -> datetime | None:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    for fmt in ("%Y%m%d%H%M%S.%f", "%Y%m%d%H%M%S"):
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    return None


def _parse_date(text: str) -> datetime | None:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    try:
        return datetime.strptime(text, "%Y%m%d")
    except ValueError:
        return None


def _parse_time(text: str):
    from datetime import time

    try:
        return time.fromisoformat(text)
    except ValueError:
        pass
    for fmt in ("%H%M%S.%f", "%H%M%S"):
        try:
            return datetime.strptime(text, fmt).time()
        except ValueError:
            continue
    return None


# --------------------------------------------------------------------------
# Document records
# --------------------------------------------------------------------------


@dataclass
class ValidationItem:
    severity: str  # "error" | "warning"
    code: str
    message: str
    target: dict[str, Any] = field(default_factory=lambda: {"type": "dataset"})

    def to_dict(self) -> dict[str, Any]:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ValidationItem":
        return cls(d["severity"], d["code"], d["message"], dict(d.get("target") or {"type": "dataset"}))


@dataclass
class SessionRecord:
    label: str
    acquisition_date_time: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "acquisitionDateTime": self.acquisition_date_time}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SessionRecord":
        return cls(d["label"], d.get("acquisitionDateTime"))


@dataclass
class SubjectRecord:
    label: str
    source: str = "numericalFallback"
    sessions: list[SessionRecord] = field(default_factory=list)
    phenotype: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "source": self.source,
            "sessions": [s.to_dict() for s in self.sessions],
            "phenotype": self.phenotype,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SubjectRecord":
        return cls(
            d["label"],
            d.get("source", "numericalFallback"),
            [SessionRecord.from_dict(s) for s in d.get("sessions", [])],
            dict(d.get("phenotype", {})),
        )


@dataclass
class SeriesDescriptor:
    series_id: int
    grouping_key: dict[str, Any]  # seriesDescription, imageType, repetitionTime, echoTime
    datatype: str = "exclude"
    suffix: str = ""
    entities: dict[str, str] = field(default_factory=dict)
    heuristic: str = "none"  # explicit | keyphrase | metadata | none
    message: str = ""

    @property
    def proposal(self) -> DatatypeSuffix:
        return DatatypeSuffix(self.datatype, self.suffix)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seriesId": self.series_id,
            "groupingKey": self.grouping_key,
            "datatype": self.datatype,
            "suffix": self.suffix,
            "entities": self.entities,
            "heuristic": self.heuristic,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SeriesDescriptor":
        return cls(
            d["seriesId"],
            dict(d["groupingKey"]),
            d.get("datatype", "exclude"),
            d.get("suffix", ""),
            dict(d.get("entities", {})),
            d.get("heuristic", "none"),
            d.get("message", ""),
        )


@dataclass
class ObjectDescriptor:
    object_id: int
    kind: str  # "image" | "events"
    paths: list[str]
    series_id: int
    subject_idx: int | None = None
    session_idx: int | None = None
    entity_overrides: dict[str, str] = field(default_factory=dict)
    exclude: bool = False
    acquisition_order: tuple[str | None, int | None] = (None, None)
    run: str | None = None
    sidecar: dict[str, Any] = field(default_factory=dict)
    link: dict[str, Any] | None = None  # events only
    columns: list[str] | None = None  # events only: detected source headers
    sample_rows: list[list[str]] | None = None  # events only: preview rows
    validation_items: list[ValidationItem] = field(default_factory=list)
    thumbnail: str | None = None

    def sort_key(self) -> tuple:
        dt, sn = self.acquisition_order
        return (
            dt if dt is not None else "9999-12-31T23:59:59",
            sn if sn is not None else 10**9,
            self.paths[0] if self.paths else "",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "objectId": self.object_id,
            "kind": self.kind,
            "paths": self.paths,
            "seriesId": self.series_id,
            "subjectIdx": self.subject_idx,
            "sessionIdx": self.session_idx,
            "entityOverrides": self.entity_overrides,
            "exclude": self.exclude,
            "acquisitionOrder": list(self.acquisition_order),
            "run": self.run,
            "sidecar": self.sidecar,
            "link": self.link,
            "columns": self.columns,
            "sampleRows": self.sample_rows,
            "validationItems": [v.to_dict() for v in self.validation_items],
            "thumbnail": self.thumbnail,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ObjectDescriptor":
        order = d.get("acquisitionOrder") or [None, None]
        return cls(
            d["objectId"],
            d.get("kind", "image"),
            list(d["paths"]),
            d["seriesId"],
            d.get("subjectIdx"),
            d.get("sessionIdx"),
            dict(d.get("entityOverrides", {})),
            bool(d.get("exclude", False)),
            (order[0], order[1]),
            d.get("run"),
            dict(d.get("sidecar", {})),
            d.get("link"),
            list(d["columns"]) if d.get("columns") is not None else None,
            [list(r) for r in d["sampleRows"]] if d.get("sampleRows") is not None else None,
            [ValidationItem.from_dict(v) for v in d.get("validationItems", [])],
            d.get("thumbnail"),
        )


@dataclass
class ProposalDocument:
    """The whole mapping proposal: everything the revise phase can edit."""

    dataset_description: dict[str, Any] = field(default_factory=dict)
    participants_columns: list[str] = field(default_factory=lambda: ["age", "sex"])
    subjects: list[SubjectRecord] = field(default_factory=list)
    series: list[SeriesDescriptor] = field(default_factory=list)
    objects: list[ObjectDescriptor] = field(default_factory=list)
    events_mapping: dict[str, Any] | None = None
    validation_items: list[ValidationItem] = field(default_factory=list)
    version: int = 0
    schema_version: str = SCHEMA_VERSION

    def series_by_id(self, series_id: int) -> SeriesDescriptor:
        for s in self.series:
            if s.series_id == series_id:
                return s
        raise KeyError(f"no series with id {series_id}")

    def object_by_id(self, object_id: int) -> ObjectDescriptor:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(f"no object with id {object_id}")

    def assignments(self, obj: ObjectDescriptor) -> dict[str, str]:
        """The {sub, ses, run} entity assignments for one object."""
        out: dict[str, str] = {}
        if obj.subject_idx is not None:
            out["sub"] = self.subjects[obj.subject_idx].label
            if obj.session_idx is not None:
                out["ses"] = self.subjects[obj.subject_idx].sessions[obj.session_idx].label
        if obj.run is not None:
            out["run"] = obj.run
        return out

    def effective_entities(self, obj: ObjectDescriptor) -> dict[str, str]:
        """series entities, overlaid by per-object overrides, overlaid by
        the sub/ses/run assignments."""
        series = self.series_by_id(obj.series_id)
        return merge_entities(series.entities, obj.entity_overrides, self.assignments(obj))

    def is_emittable(self, obj: ObjectDescriptor) -> bool:
        """Included in emission: not excluded, not an exclude-series member,
        and (for events) actually linked."""
        if obj.exclude:
            return False
        series = self.series_by_id(obj.series_id)
        if series.datatype == "exclude":
            return False
        if obj.kind == "events":
            return bool(obj.link) and obj.link.get("state") == "linked"
        return True

    def bump(self) -> None:
        self.version += 1

    def check_integrity(self) -> None:
        """Raise DocumentIntegrityError listing every dangling reference."""
        offenders: list[str] = []
        series_ids = [s.series_id for s in self.series]
        if series_ids != list(range(len(series_ids))):
            offenders.append(f"series ids are not dense/consecutive: {series_ids}")
        known = set(series_ids)
        object_ids = set()
        for obj in self.objects:
            tag = f"object {obj.object_id}"
            if obj.object_id in object_ids:
                offenders.append(f"{tag}: duplicate objectId")
            object_ids.add(obj.object_id)
            if obj.series_id not in known:
                offenders.append(f"{tag}: dangling seriesId {obj.series_id}")
            if obj.subject_idx is None:
                if obj.kind != "events":
                    offenders.append(f"{tag}: image object without subjectIdx")
            elif not 0 <= obj.subject_idx < len(self.subjects):
                offenders.append(f"{tag}: dangling subjectIdx {obj.subject_idx}")
            elif obj.session_idx is not None and not (
                0 <= obj.session_idx < len(self.subjects[obj.subject_idx].sessions)
            ):
                offenders.append(f"{tag}: dangling sessionIdx {obj.session_idx}")
            if obj.link and obj.link.get("state") == "linked":
                target = obj.link.get("objectId")
                if not any(o.object_id == target and o.kind == "image" for o in self.objects):
                    offenders.append(f"{tag}: link targets missing image object {target}")
        labels = [s.label for s in self.subjects]
        if len(labels) != len(set(labels)):
            offenders.append(f"duplicate subject labels: {sorted(labels)}")
        if offenders:
            raise DocumentIntegrityError(offenders)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schemaVersion": self.schema_version,
            "version": self.version,
            "datasetDescription": self.dataset_description,
            "participantsColumns": self.participants_columns,
            "subjects": [s.to_dict() for s in self.subjects],
            "series": [s.to_dict() for s in self.series],
            "objects": [o.to_dict() for o in self.objects],
            "eventsMapping": self.events_mapping,
            "validationItems": [v.to_dict() for v in self.validation_items],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProposalDocument":
        return cls(
            dataset_description=dict(d.get("datasetDescription", {})),
            participants_columns=list(d.get("participantsColumns", ["age", "sex"])),
            subjects=[SubjectRecord.from_dict(s) for s in d.get("subjects", [])],
            series=[SeriesDescriptor.from_dict(s) for s in d.get("series", [])],
            objects=[ObjectDescriptor.from_dict(o) for o in d.get("objects", [])],
            events_mapping=d.get("eventsMapping"),
            validation_items=[ValidationItem.from_dict(v) for v in d.get("validationItems", [])],
            version=int(d.get("version", 0)),
            schema_version=str(d.get("schemaVersion", SCHEMA_VERSION)),
        )


def serialize_document(doc: ProposalDocument) -> bytes:
    """Canonical byte encoding: sorted keys, two-space indent, trailing newline."""
    doc.check_integrity()
    text = json.dumps(doc.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def parse_document(data: bytes | str) -> ProposalDocument:
    """Exact inverse of serialize_document; verifies referential integrity."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SidecarParseError(f"document is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    doc = ProposalDocument.from_dict(obj)
    doc.check_integrity()
    return doc


def sort_objects(objects: Iterable[ObjectDescriptor]) -> list[ObjectDescriptor]:
    """Chronological ordering used everywhere a stable object order matters."""
    return sorted(objects, key=lambda o: o.sort_key())
