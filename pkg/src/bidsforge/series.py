"""Unique-series grouping, datatype/suffix classification, entity extraction,
and run numbering.

Grouping key: (SeriesDescription with a trailing _RR token stripped,
ImageType exactly, RepetitionTime and EchoTime within +/-0.0005 s).
Classification cascades through three heuristics: an explicit
``<datatype>_<suffix>`` token, a keyphrase table, then metadata rules;
series that defeat all three are proposed as ``exclude`` for the user to
decide.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError, EntityError
from .model import (
    ENTITY_KEYS,
    ENTITY_LONG_NAMES,
    ProposalDocument,
    SeriesDescriptor,
    SidecarMetadata,
    ValidationItem,
    is_valid_entity_value,
    merge_entities,
    sort_objects,
)
from .validation import SchemaTable, load_schema

# EchoTime/RepetitionTime equality tolerance, in seconds (closed ball).
TOLERANCE_SECONDS = 0.0005
_TOL_EPS = 1e-12

_RR_SUFFIX = re.compile(r"(?:_RR)+$")

# PhaseEncodingDirection axis/sign -> BIDS dir entity value
PHASE_ENCODING_DIRS = {"j": "PA", "j-": "AP", "i": "LR", "i-": "RL"}

# entity keys extracted from SeriesDescription tokens
_TOKEN_KEYS = ("task", "acq", "ce", "rec", "dir", "run")


def normalize_description(description: str) -> str:
    """Strip the retro-reconstruction marker so _RR variants group together."""
    return _RR_SUFFIX.sub("", description)


def _tolerance_equal(a: float | None, b: float | None) -> bool:
    if a is None or b is None:
        return a is None and b is None  # absent is a distinct value, not a wildcard
    return abs(a - b) <= TOLERANCE_SECONDS + _TOL_EPS


@dataclass(frozen=True)
class GroupingKey:
    description: str
    image_type: tuple[str, ...]
    repetition_time: float | None
    echo_time: float | None

    @classmethod
    def of(cls, sidecar: SidecarMetadata) -> "GroupingKey":
        return cls(
            normalize_description(sidecar.description),
            sidecar.image_type or (),
            sidecar.repetition_time,
            sidecar.echo_time,
        )

    def matches(self, other: "GroupingKey") -> bool:
        return (
            self.description == other.description
            and self.image_type == other.image_type
            and _tolerance_equal(self.repetition_time, other.repetition_time)
            and _tolerance_equal(self.echo_time, other.echo_time)
        )

    def to_dict(self) -> dict:
        return {
            "seriesDescription": self.description,
            "imageType": list(self.image_type),
            "repetitionTime": self.repetition_time,
            "echoTime": self.echo_time,
        }


def group_records(items: list[tuple[SidecarMetadata, tuple]]) -> list[int]:
    """Partition records into unique series.

    ``items`` is a list of (sidecar, sort_key); the result maps each input
    position to a dense series id. Records are visited in sort-key order so
    the outcome is independent of input order, and each record joins the
    first group whose representative key it matches within tolerance.
    """
    order = sorted(range(len(items)), key=lambda i: items[i][1])
    representatives: list[GroupingKey] = []
    assignment = [0] * len(items)
    for i in order:
        key = GroupingKey.of(items[i][0])
        for sid, rep in enumerate(representatives):
            if rep.matches(key):
                assignment[i] = sid
                break
        else:
            assignment[i] = len(representatives)
            representatives.append(key)
    return assignment


# --------------------------------------------------------------------------
# Keyphrase rules
# --------------------------------------------------------------------------


@dataclass
class KeyphraseRule:
    pattern: str
    field: str  # SeriesDescription | ImageType
    datatype: str
    suffix: str
    entities: dict[str, str] = field(default_factory=dict)
    regex: re.Pattern | None = None

    def matches(self, sidecar: SidecarMetadata) -> bool:
        if self.field == "ImageType":
            haystacks = list(sidecar.image_type or ())
        else:
            haystacks = [sidecar.description]
        for text in haystacks:
            if self.regex is not None:
                if self.regex.search(text):
                    return True
            elif self.pattern.lower() in text.lower():
                return True
        return False


def default_keyphrase_path() -> Path:
    return Path(str(resources.files("bidsforge").joinpath("data/keyphrases.tsv")))


def load_keyphrase_rules(path: str | Path | None = None) -> list[KeyphraseRule]:
    """Read the ordered keyphrase table; first matching rule wins.

    Raises ConfigurationError naming the offending line on bad syntax.
    """
    path = Path(path) if path is not None else default_keyphrase_path()
    if not path.is_file():
        raise ConfigurationError(f"keyphrase file not found: {path}")
    rules: list[KeyphraseRule] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 5:
            raise ConfigurationError(
                f"{path.name}:{lineno}: expected 5 tab-separated fields, got {len(parts)}"
            )
        pattern, fieldname, datatype, suffix, entity_spec = (p.strip() for p in parts)
        if fieldname not in ("SeriesDescription", "ImageType"):
            raise ConfigurationError(
                f"{path.name}:{lineno}: field must be SeriesDescription or ImageType"
            )
        if datatype not in ("anat", "func", "fmap", "dwi", "perf", "exclude"):
            raise ConfigurationError(f"{path.name}:{lineno}: unknown datatype {datatype!r}")
        entities: dict[str, str] = {}
        if entity_spec and entity_spec != "-":
            for assignment in entity_spec.split(";"):
                if "=" not in assignment:
                    raise ConfigurationError(
                        f"{path.name}:{lineno}: bad entity assignment {assignment!r}"
                    )
                k, v = assignment.split("=", 1)
                if k not in ENTITY_KEYS or not is_valid_entity_value(v):
                    raise ConfigurationError(
                        f"{path.name}:{lineno}: bad entity assignment {assignment!r}"
                    )
                entities[k] = v
        regex = None
        if len(pattern) > 2 and pattern.startswith("/") and pattern.endswith("/"):
            try:
                regex = re.compile(pattern[1:-1], re.IGNORECASE)
            except re.error as exc:
                raise ConfigurationError(f"{path.name}:{lineno}: bad regex: {exc}") from exc
        rules.append(KeyphraseRule(pattern, fieldname, datatype, suffix if datatype != "exclude" else "", entities, regex))
    return rules


# --------------------------------------------------------------------------
# Classification cascade
# --------------------------------------------------------------------------


@dataclass
class Classification:
    datatype: str
    suffix: str
    heuristic: str  # explicit | keyphrase | metadata | none
    message: str
    entities: dict[str, str] = field(default_factory=dict)


def _explicit_token(description: str, schema: SchemaTable) -> tuple[str, str] | None:
    text = description.lower()
    best: tuple[str, str] | None = None
    for datatype, suffix in schema.pairs():
        if datatype == "exclude":
            continue
        token = f"{datatype}_{suffix}".lower()
        if token in text and (best is None or len(token) > len(f"{best[0]}_{best[1]}")):
            best = (datatype, suffix)
    return best


def classify_series(
    sidecar: SidecarMetadata,
    rules: list[KeyphraseRule],
    schema: SchemaTable,
) -> Classification:
    """Propose (datatype, suffix) for one series from its representative sidecar."""
    explicit = _explicit_token(sidecar.description, schema)
    if explicit:
        datatype, suffix = explicit
        return Classification(
            datatype,
            suffix,
            "explicit",
            f'SeriesDescription contains the explicit identifier "{datatype}_{suffix}"',
        )

    for rule in rules:
        if rule.matches(sidecar):
            result = Classification(
                rule.datatype,
                rule.suffix,
                "keyphrase",
                f'{rule.field} matches keyphrase "{rule.pattern}"'
                + (f" -> {rule.datatype}/{rule.suffix}" if rule.suffix else " -> exclude"),
                dict(rule.entities),
            )
            return _refine_anatomical(result, sidecar)

    image_type = [t.upper() for t in (sidecar.image_type or ())]
    if "DIFFUSION" in image_type:
        return Classification(
            "dwi", "dwi", "metadata", 'ImageType contains "DIFFUSION": diffusion-weighted data'
        )

    return Classification(
        "exclude",
        "",
        "none",
        "no heuristic matched; decide whether this series should be converted "
        "and assign its datatype and suffix if so",
    )


def _refine_anatomical(result: Classification, sidecar: SidecarMetadata) -> Classification:
    # a generic anatomical guess with a long echo time is taken to be T2-weighted
    if (
        result.datatype == "anat"
        and result.suffix == "T1w"
        and sidecar.echo_time is not None
        and sidecar.echo_time > 0.1
    ):
        return Classification(
            "anat",
            "T2w",
            "metadata",
            result.message + f"; EchoTime {sidecar.echo_time} s exceeds 0.1 s, assuming T2w",
            result.entities,
        )
    return result


# --------------------------------------------------------------------------
# Entity extraction
# --------------------------------------------------------------------------


def infer_entities(sidecar: SidecarMetadata, classification: Classification) -> dict[str, str]:
    """Extract entity labels from SeriesDescription tokens and metadata.

    Two passes over the description (hyphenated tokens, then underscore
    variants), then metadata-derived entities: EchoNumber feeds echo, and a
    field-map PhaseEncodingDirection feeds dir via a fixed axis lookup.
    May include a run token; callers keep run at the object level.
    """
    description = sidecar.description
    entities: dict[str, str] = dict(classification.entities)
    for separator in ("-", "_"):
        for key in _TOKEN_KEYS:
            if key in entities:
                continue
            value_class = r"[0-9]+" if key == "run" else r"[A-Za-z0-9]+"
            m = re.search(
                rf"(?:^|[^A-Za-z0-9]){key}{separator}({value_class})",
                description,
                re.IGNORECASE,
            )
            if m:
                entities[key] = m.group(1)

    if sidecar.echo_number is not None:
        entities.setdefault("echo", str(sidecar.echo_number))

    if (
        classification.datatype == "fmap"
        and classification.suffix == "epi"
        and sidecar.phase_encoding_direction in PHASE_ENCODING_DIRS
    ):
        entities.setdefault("dir", PHASE_ENCODING_DIRS[sidecar.phase_encoding_direction])

    return entities


# --------------------------------------------------------------------------
# Run numbering and series edits
# --------------------------------------------------------------------------


def assign_runs(doc: ProposalDocument, singleton_run: bool = False) -> None:
    """Recompute run labels for every image object, in place.

    Objects sharing (subject, session, datatype, suffix, entities-minus-run)
    are numbered 1..N in acquisition order when N >= 2; singletons carry no
    run entity unless ``singleton_run`` is set. Excluded objects and
    exclude-datatype series take no part.
    """
    groups: dict[tuple, list] = {}
    for obj in doc.objects:
        if obj.kind != "image":
            continue  # events objects take their run from the linked bold
        obj.run = None
        if not doc.is_emittable(obj):
            continue
        series = doc.series_by_id(obj.series_id)
        entities = merge_entities(series.entities, obj.entity_overrides)
        entities.pop("run", None)
        key = (
            obj.subject_idx,
            obj.session_idx,
            series.datatype,
            series.suffix,
            tuple(sorted(entities.items())),
        )
        groups.setdefault(key, []).append(obj)

    for members in groups.values():
        members.sort(key=lambda o: o.sort_key())
        if len(members) == 1 and not singleton_run:
            continue
        for n, obj in enumerate(members, start=1):
            obj.run = str(n)


def propagate_series_edit(
    doc: ProposalDocument,
    series_id: int,
    datatype: str | None = None,
    suffix: str | None = None,
    entities: dict[str, str | None] | None = None,
    schema: SchemaTable | None = None,
    singleton_run: bool = False,
) -> ProposalDocument:
    """Apply a series-level edit; every group member reflects it.

    Entity values must be alphanumeric (a None/empty value removes the key);
    an invalid value raises EntityError and leaves the document untouched.
    Run labels are reassigned afterwards.
    """
    schema = schema or load_schema()
    target = doc.series_by_id(series_id)

    new_datatype = datatype if datatype is not None else target.datatype
    new_suffix = suffix if suffix is not None else target.suffix
    if new_datatype == "exclude":
        new_suffix = ""
    elif not schema.has_pair(new_datatype, new_suffix):
        raise EntityError(
            ValidationItem(
                "error",
                "unknown-classification",
                f"{new_datatype}/{new_suffix} is not a known datatype/suffix pair",
                {"type": "series", "seriesId": series_id},
            )
        )

    new_entities = dict(target.entities)
    for key, value in (entities or {}).items():
        if key not in ENTITY_KEYS or key in ("sub", "ses", "run"):
            raise EntityError(
                ValidationItem(
                    "error",
                    "invalid-entity-key",
                    f"{key!r} is not an editable series-level entity key",
                    {"type": "series", "seriesId": series_id},
                )
            )
        if value is None or value == "":
            new_entities.pop(key, None)
            continue
        if not is_valid_entity_value(value):
            raise EntityError(
                ValidationItem(
                    "error",
                    "non-alphanumeric-entity",
                    f"Entity:{ENTITY_LONG_NAMES[key]} contains non-alphanumeric character",
                    {"type": "series", "seriesId": series_id},
                )
            )
        new_entities[key] = value

    out = copy.deepcopy(doc)
    series = out.series_by_id(series_id)
    series.datatype = new_datatype
    series.suffix = new_suffix
    series.entities = new_entities
    assign_runs(out, singleton_run=singleton_run)
    out.bump()
    return out


def build_series(
    items: list[tuple[SidecarMetadata, tuple]],
    rules: list[KeyphraseRule],
    schema: SchemaTable,
) -> tuple[list[SeriesDescriptor], list[int]]:
    """Group, classify, and annotate: the full series-inference pass."""
    assignment = group_records(items)
    count = max(assignment) + 1 if assignment else 0

    representatives: list[SidecarMetadata | None] = [None] * count
    for pos in sorted(range(len(items)), key=lambda i: items[i][1]):
        sid = assignment[pos]
        if representatives[sid] is None:
            representatives[sid] = items[pos][0]

    series: list[SeriesDescriptor] = []
    for sid in range(count):
        rep = representatives[sid]
        classification = classify_series(rep, rules, schema)
        entities = infer_entities(rep, classification)
        for reserved in ("sub", "ses", "run"):  # object-level keys never sit on a series
            entities.pop(reserved, None)
        series.append(
            SeriesDescriptor(
                series_id=sid,
                grouping_key=GroupingKey.of(rep).to_dict(),
                datatype=classification.datatype,
                suffix=classification.suffix,
                entities=entities,
                heuristic=classification.heuristic,
                message=classification.message,
            )
        )
    return series, assignment
