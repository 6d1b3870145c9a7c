"""Subject and session labeling: path patterns first, then patient metadata,
then a numerical fallback; plus the three whole-document remap strategies.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass
from datetime import datetime

from .model import (
    ProposalDocument,
    SessionRecord,
    SidecarMetadata,
    ValidationItem,
    sanitize_label,
    sort_objects,
)

SUB_PATTERN = re.compile(r"sub[-_]([A-Za-z0-9]+)", re.IGNORECASE)
SES_PATTERN = re.compile(r"ses[-_]([A-Za-z0-9]+)", re.IGNORECASE)

# (sidecar attribute, source tag) in precedence order
_FIELD_PRECEDENCE = (
    ("patient_name", "PatientName"),
    ("patient_id", "PatientID"),
    ("patient_birth_date", "PatientBirthDate"),
)

REMAP_STRATEGIES = ("PatientName", "PatientID", "Numerical")


@dataclass
class SubjectSessionGuess:
    subject_label: str
    subject_source: str
    session_label: str | None = None
    session_source: str | None = None


def infer_subject_session(path: str, sidecar: SidecarMetadata) -> SubjectSessionGuess:
    """Guess subject/session labels for one image.

    The file path wins over all metadata; metadata fields are searched in
    the PatientName, PatientID, PatientBirthDate order; with nothing usable
    the guess is a numerical-fallback placeholder filled in at group level.
    """
    sub = SUB_PATTERN.search(path)
    if sub:
        ses = SES_PATTERN.search(path)
        return SubjectSessionGuess(
            subject_label=sub.group(1),
            subject_source="pathPattern",
            session_label=ses.group(1) if ses else None,
            session_source="pathPattern" if ses else None,
        )

    for attr, source in _FIELD_PRECEDENCE:
        value = getattr(sidecar, attr)
        if not value:
            continue
        inner_sub = SUB_PATTERN.search(value)
        inner_ses = SES_PATTERN.search(value)
        label = inner_sub.group(1) if inner_sub else sanitize_label(value)
        if not label:
            continue
        return SubjectSessionGuess(
            subject_label=label,
            subject_source=source,
            session_label=inner_ses.group(1) if inner_ses else None,
            session_source="pathPattern" if inner_ses else None,
        )

    return SubjectSessionGuess(subject_label="", subject_source="numericalFallback")


@dataclass
class SessionMember:
    """One image of a subject, as seen by the session splitter."""

    index: int
    timestamp: datetime | None
    series_number: int | None
    explicit_session: str | None = None


def split_sessions(
    members: list[SessionMember], gap_hours: float = 4.0
) -> tuple[list[SessionRecord], list[int | None]]:
    """Partition one subject's images into sessions.

    Explicit (path-pattern) session labels are kept as-is. The rest are
    clustered by acquisition timestamp: a new calendar date, or a gap larger
    than ``gap_hours`` within one date, starts a new session. A single
    cluster with no explicit labels yields no sessions at all.
    """
    explicit = [m for m in members if m.explicit_session]
    implicit = [m for m in members if not m.explicit_session]

    timed = sorted(
        (m for m in implicit if m.timestamp is not None), key=lambda m: m.timestamp
    )
    clusters: list[list[SessionMember]] = []
    for m in timed:
        if clusters:
            prev = clusters[-1][-1].timestamp
            same_visit = (
                m.timestamp.date() == prev.date()
                and (m.timestamp - prev).total_seconds() <= gap_hours * 3600
            )
            if same_visit:
                clusters[-1].append(m)
                continue
        clusters.append([m])

    untimed = [m for m in implicit if m.timestamp is None]
    if untimed and not clusters:
        clusters.append([])
    for m in untimed:
        # nearest cluster by SeriesNumber distance to any timed member
        def distance(cluster: list[SessionMember]) -> int:
            numbers = [c.series_number for c in cluster if c.series_number is not None]
            if not numbers or m.series_number is None:
                return 10**9
            return min(abs(m.series_number - n) for n in numbers)

        target = min(range(len(clusters)), key=lambda i: (distance(clusters[i]), i))
        clusters[target].append(m)

    assignment: list[int | None] = [None] * len(members)
    index_of = {m.index: pos for pos, m in enumerate(members)}

    sessions: list[SessionRecord] = []
    label_to_idx: dict[str, int] = {}

    # explicit labels first, ordered chronologically by first appearance
    def first_time(label: str) -> tuple:
        times = [m.timestamp for m in explicit if m.explicit_session == label and m.timestamp]
        return (min(times).isoformat(), label) if times else ("9999", label)

    for label in sorted({m.explicit_session for m in explicit}, key=first_time):
        label_to_idx[label] = len(sessions)
        times = [m.timestamp for m in explicit if m.explicit_session == label and m.timestamp]
        sessions.append(
            SessionRecord(label, min(times).isoformat() if times else None)
        )
    for m in explicit:
        assignment[index_of[m.index]] = label_to_idx[m.explicit_session]

    # single implicit cluster and nothing explicit: no session entity at all
    if not explicit and len(clusters) <= 1:
        return sessions, assignment

    used = set(label_to_idx)
    counter = 1
    for cluster in clusters:
        label = f"{counter:02d}"
        while label in used:
            counter += 1
            label = f"{counter:02d}"
        used.add(label)
        counter += 1
        times = [m.timestamp for m in cluster if m.timestamp is not None]
        idx = len(sessions)
        sessions.append(SessionRecord(label, min(times).isoformat() if times else None))
        for m in cluster:
            assignment[index_of[m.index]] = idx
    return sessions, assignment


def numeric_label(n: int) -> str:
    # values below 10 are zero-padded: 01..09, then 10, 11, ...
    return f"{n:02d}" if n < 10 else str(n)


def _resolve_collision(label: str, taken: set[str]) -> str:
    if label not in taken:
        return label
    suffix = 2
    while f"{label}{suffix}" in taken:
        suffix += 1
    return f"{label}{suffix}"


def remap_subjects(doc: ProposalDocument, strategy: str) -> ProposalDocument:
    """Relabel every subject with one of the three reset strategies.

    PatientName/PatientID take the sanitized metadata value; Numerical
    renumbers chronologically by earliest acquisition. Collisions get the
    next free integer suffix; a subject whose strategy field is missing
    keeps its label and gains a warning. Idempotent: a remap that changes
    nothing returns the document unchanged.
    """
    if strategy not in REMAP_STRATEGIES:
        raise ValueError(f"unknown remap strategy {strategy!r}; options: {REMAP_STRATEGIES}")

    per_subject_objects = {
        i: sort_objects(
            o for o in doc.objects if o.subject_idx == i and o.kind == "image"
        )
        for i in range(len(doc.subjects))
    }

    def earliest(i: int) -> str:
        times = [
            o.acquisition_order[0]
            for o in per_subject_objects[i]
            if o.acquisition_order[0] is not None
        ]
        return min(times) if times else "9999"

    order = list(range(len(doc.subjects)))
    if strategy == "Numerical":
        order.sort(key=lambda i: (earliest(i), doc.subjects[i].label))

    new_labels: dict[int, str] = {}
    warnings: list[ValidationItem] = []
    taken: set[str] = set()
    for rank, i in enumerate(order):
        subject = doc.subjects[i]
        if strategy == "Numerical":
            label = numeric_label(rank + 1)
            source = "numericalFallback"
        else:
            field = "PatientName" if strategy == "PatientName" else "PatientID"
            value = next(
                (o.sidecar.get(field) for o in per_subject_objects[i] if o.sidecar.get(field)),
                None,
            )
            label = sanitize_label(str(value)) if value else ""
            source = field
            if not label:
                warnings.append(
                    ValidationItem(
                        "warning",
                        "remap-missing-field",
                        f"subject {subject.label!r} has no usable {field}; label kept",
                        {"type": "subject", "label": subject.label},
                    )
                )
                label = subject.label
                source = subject.source
        resolved = _resolve_collision(label, taken)
        if resolved != label:
            warnings.append(
                ValidationItem(
                    "warning",
                    "remap-collision",
                    f"subject label {label!r} already taken; using {resolved!r}",
                    {"type": "subject", "label": resolved},
                )
            )
        taken.add(resolved)
        new_labels[i] = (resolved, source)

    if all(new_labels[i][0] == doc.subjects[i].label for i in range(len(doc.subjects))):
        return doc

    out = copy.deepcopy(doc)
    for i, (label, source) in new_labels.items():
        out.subjects[i].label = label
        out.subjects[i].source = source
    out.validation_items = [
        v for v in out.validation_items if v.code not in ("remap-missing-field", "remap-collision")
    ]
    out.validation_items.extend(warnings)
    out.bump()
    return out
