"""Task-events timing files: tolerant tabular parsing, the user's column
mapping, exact millisecond-to-second conversion, and linkage of each file
to its functional BOLD image.

Unit conversion is string-decimal arithmetic (a pure decimal-point shift),
so values with any reasonable precision convert without binary-float drift.
"""

from __future__ import annotations

import copy
import csv
import io
import re
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from xml.etree import ElementTree

from .errors import EventsParseError, MappingError
from .model import ProposalDocument, sanitize_label

EVENTS_EXTENSIONS = (".csv", ".tsv", ".txt", ".out", ".xlsx")

_SNIFF_WINDOW = 10  # lines inspected when hunting for the tabular block

_NUMERIC = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")

# fuzzy source-column names for entity extraction, normalized to lowercase
# alphanumerics ("Subject", "Sub", "Subj", ...)
_FUZZY_HEADERS = {
    "sub": ("subject", "sub", "subj", "participant", "participantid", "subjectid"),
    "ses": ("session", "sess", "ses"),
    "task": ("task", "taskname"),
    "run": ("run", "runnumber", "runno", "runid"),
}

_PATH_TOKENS = {
    "sub": re.compile(r"sub[-_]([A-Za-z0-9]+)", re.IGNORECASE),
    "ses": re.compile(r"ses[-_]([A-Za-z0-9]+)", re.IGNORECASE),
    "task": re.compile(r"task[-_]([A-Za-z0-9]+)", re.IGNORECASE),
    "run": re.compile(r"run[-_]([0-9]+)", re.IGNORECASE),
}


@dataclass
class EventsTable:
    header: list[str]
    rows: list[list[str]]


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


def _split(line: str, delimiter: str | None) -> list[str]:
    if delimiter is None:
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def _find_table(lines: list[str]) -> tuple[int, str | None, int]:
    """Locate (header line index, delimiter, column count).

    Delimiters are tried in priority order (tab, comma, whitespace); within
    one delimiter the earliest line starting a consistent block wins. A
    strict pass requires equal column counts; a relaxed pass tolerates
    ragged data rows (padded/truncated later).
    """
    for strict in (True, False):
        for delimiter in ("\t", ",", None):
            for start in range(len(lines)):
                if not lines[start].strip():
                    continue
                try:
                    k = len(_split(lines[start], delimiter))
                except csv.Error:
                    continue
                if k < 2:
                    continue
                window = [
                    l for l in lines[start + 1 : start + _SNIFF_WINDOW] if l.strip()
                ]
                if not window and start > 0:
                    continue  # a lone trailing line is not a header
                try:
                    counts = [len(_split(l, delimiter)) for l in window]
                except csv.Error:
                    continue
                if not strict or all(c == k for c in counts):
                    return start, delimiter, k
    raise EventsParseError("no consistent delimiter pattern found")


def parse_events_table(path: str | Path) -> EventsTable:
    """Parse one timing file into a rectangular header+rows table.

    Text files may be tab-, comma-, or whitespace-delimited; leading
    non-tabular preamble lines (stimulus-software exports) are skipped.
    Ragged rows are padded with "n/a". Raises EventsParseError when no
    table can be found.
    """
    path = Path(path)
    if path.suffix.lower() not in EVENTS_EXTENSIONS:
        raise EventsParseError(
            f"{path.name}: unsupported extension; accepted: {', '.join(EVENTS_EXTENSIONS)}"
        )
    if path.suffix.lower() == ".xlsx":
        rows = _read_xlsx(path)
        if not rows:
            raise EventsParseError(f"{path.name}: workbook has no rows")
        header, data = rows[0], rows[1:]
    else:
        raw = path.read_bytes()
        if not raw.strip():
            raise EventsParseError(f"{path.name}: file is empty")
        if b"\x00" in raw:
            raise EventsParseError(f"{path.name}: not a text file")
        try:
            text = raw.decode("utf-8-sig")
        except UnicodeDecodeError:
            try:
                text = raw.decode("latin-1")
            except UnicodeDecodeError as exc:  # pragma: no cover - latin-1 total
                raise EventsParseError(f"{path.name}: undecodable bytes") from exc
        lines = text.splitlines()
        try:
            start, delimiter, _ = _find_table(lines)
        except EventsParseError as exc:
            raise EventsParseError(f"{path.name}: {exc}") from exc
        header = [h.strip() for h in _split(lines[start], delimiter)]
        data = [
            _split(line, delimiter)
            for line in lines[start + 1 :]
            if line.strip()
        ]

    width = len(header)
    rect = [
        [cell.strip() for cell in row[:width]] + ["n/a"] * max(0, width - len(row))
        for row in data
    ]
    return EventsTable(header, rect)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _column_index(ref: str) -> int:
    index = 0
    for ch in ref:
        if ch.isalpha():
            index = index * 26 + (ord(ch.upper()) - ord("A") + 1)
        else:
            break
    return index - 1


def _read_xlsx(path: Path) -> list[list[str]]:
    """First worksheet of an OOXML workbook, every cell as a string."""
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            shared: list[str] = []
            if "xl/sharedStrings.xml" in names:
                root = ElementTree.fromstring(zf.read("xl/sharedStrings.xml"))
                for si in root:
                    shared.append(
                        "".join(t.text or "" for t in si.iter() if _local(t.tag) == "t")
                    )
            sheet_name = next(
                (n for n in sorted(names) if n.startswith("xl/worksheets/sheet")), None
            )
            if sheet_name is None:
                raise EventsParseError(f"{path.name}: workbook has no worksheets")
            root = ElementTree.fromstring(zf.read(sheet_name))
    except zipfile.BadZipFile as exc:
        raise EventsParseError(f"{path.name}: not a valid workbook") from exc

    rows: list[list[str]] = []
    for row in root.iter():
        if _local(row.tag) != "row":
            continue
        cells: list[str] = []
        for cell in row:
            if _local(cell.tag) != "c":
                continue
            ref = cell.get("r", "")
            idx = _column_index(ref) if ref else len(cells)
            while len(cells) < idx:
                cells.append("")
            ctype = cell.get("t", "n")
            value = ""
            if ctype == "s":
                v = next((c for c in cell if _local(c.tag) == "v"), None)
                if v is not None and v.text is not None:
                    value = shared[int(v.text)]
            elif ctype == "inlineStr":
                value = "".join(
                    t.text or "" for t in cell.iter() if _local(t.tag) == "t"
                )
            else:
                v = next((c for c in cell if _local(c.tag) == "v"), None)
                value = v.text or "" if v is not None else ""
            cells.append(value)
        rows.append(cells)
    return rows


# --------------------------------------------------------------------------
# Column mapping and unit conversion
# --------------------------------------------------------------------------


@dataclass
class ColumnMapping:
    """User-selected source-column mapping, applied to every timing file."""

    onset_column: str
    onset_unit: str = "seconds"  # seconds | milliseconds
    duration_column: str | None = None
    duration_value: str | None = None
    duration_unit: str = "seconds"
    trial_type_column: str | None = None
    response_time_column: str | None = None
    response_time_unit: str = "seconds"
    passthrough: list[str] = field(default_factory=list)
    entity_columns: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.onset_column:
            raise MappingError("an onset column is mandatory")
        if not self.duration_column and self.duration_value is None:
            raise MappingError("duration is mandatory: map a column or give a fixed value")
        for unit in (self.onset_unit, self.duration_unit, self.response_time_unit):
            if unit not in ("seconds", "milliseconds"):
                raise MappingError(f"unknown time unit {unit!r}")

    def to_dict(self) -> dict:
        return {
            "onsetColumn": self.onset_column,
            "onsetUnit": self.onset_unit,
            "durationColumn": self.duration_column,
            "durationValue": self.duration_value,
            "durationUnit": self.duration_unit,
            "trialTypeColumn": self.trial_type_column,
            "responseTimeColumn": self.response_time_column,
            "responseTimeUnit": self.response_time_unit,
            "passthrough": self.passthrough,
            "entityColumns": self.entity_columns,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMapping":
        return cls(
            onset_column=d.get("onsetColumn", ""),
            onset_unit=d.get("onsetUnit", "seconds"),
            duration_column=d.get("durationColumn"),
            duration_value=d.get("durationValue"),
            duration_unit=d.get("durationUnit", "seconds"),
            trial_type_column=d.get("trialTypeColumn"),
            response_time_column=d.get("responseTimeColumn"),
            response_time_unit=d.get("responseTimeUnit", "seconds"),
            passthrough=list(d.get("passthrough", [])),
            entity_columns=dict(d.get("entityColumns", {})),
        )


def divide_by_1000(text: str) -> str:
    """Exact decimal division by 1000: shift the point three places left."""
    sign = ""
    if text and text[0] in "+-":
        sign = "-" if text[0] == "-" else ""
        text = text[1:]
    int_part, _, frac_part = text.partition(".")
    int_part = int_part or "0"
    if len(int_part) > 3:
        new_int, new_frac = int_part[:-3], int_part[-3:] + frac_part
    else:
        new_int, new_frac = "0", int_part.rjust(3, "0") + frac_part
    new_int = new_int.lstrip("0") or "0"
    new_frac = new_frac.rstrip("0")
    out = new_int + ("." + new_frac if new_frac else "")
    return sign + out if out != "0" else "0"


def _convert_cell(value: str, unit: str, column: str, warnings: list[str]) -> str:
    if not _NUMERIC.match(value):
        warnings.append(f"non-numeric value {value!r} in column {column!r} became n/a")
        return "n/a"
    if unit == "milliseconds":
        return divide_by_1000(value)
    return value


def apply_column_mapping(
    table: EventsTable, mapping: ColumnMapping
) -> tuple[EventsTable, list[str]]:
    """Produce the standard events table: onset, duration, then the optional
    and passthrough columns, with millisecond columns divided by exactly 1000.

    Raises MappingError when a mapped column is absent; returns the table
    plus warnings for cells that became n/a.
    """
    index: dict[str, int] = {name: i for i, name in enumerate(table.header)}

    wanted = [mapping.onset_column]
    if mapping.duration_column:
        wanted.append(mapping.duration_column)
    if mapping.trial_type_column:
        wanted.append(mapping.trial_type_column)
    if mapping.response_time_column:
        wanted.append(mapping.response_time_column)
    wanted.extend(mapping.passthrough)
    for column in wanted:
        if column not in index:
            raise MappingError(
                f"mapped column {column!r} not found; available: {table.header}"
            )

    header = ["onset", "duration"]
    if mapping.trial_type_column:
        header.append("trial_type")
    if mapping.response_time_column:
        header.append("response_time")
    header.extend(mapping.passthrough)

    warnings: list[str] = []
    fixed_duration = None
    if not mapping.duration_column:
        fixed_duration = _convert_cell(
            mapping.duration_value, mapping.duration_unit, "duration", warnings
        )
    rows: list[list[str]] = []
    for row in table.rows:
        out = [
            _convert_cell(row[index[mapping.onset_column]], mapping.onset_unit,
                          mapping.onset_column, warnings)
        ]
        if mapping.duration_column:
            out.append(
                _convert_cell(row[index[mapping.duration_column]], mapping.duration_unit,
                              mapping.duration_column, warnings)
            )
        else:
            out.append(fixed_duration)
        if mapping.trial_type_column:
            cell = row[index[mapping.trial_type_column]]
            out.append(cell if cell else "n/a")
        if mapping.response_time_column:
            out.append(
                _convert_cell(row[index[mapping.response_time_column]],
                              mapping.response_time_unit,
                              mapping.response_time_column, warnings)
            )
        for column in mapping.passthrough:
            cell = row[index[column]]
            out.append(cell if cell else "n/a")
        rows.append(out)
    return EventsTable(header, rows), warnings


def events_tsv_bytes(table: EventsTable) -> bytes:
    lines = ["\t".join(table.header)]
    lines.extend("\t".join(row) for row in table.rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def events_json_dict(mapping: ColumnMapping) -> dict | None:
    """Optional sidecar describing the columns carried through unmapped."""
    if not mapping.passthrough:
        return None
    return {
        column: {"Description": f"carried through from source column {column!r}"}
        for column in mapping.passthrough
    }


# --------------------------------------------------------------------------
# Discovery and linkage
# --------------------------------------------------------------------------


def find_events_files(tree: str | Path) -> list[Path]:
    tree = Path(tree)
    return sorted(
        p
        for p in tree.rglob("*")
        if p.is_file() and p.suffix.lower() in EVENTS_EXTENSIONS
    )


def _normalize_header(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


def extract_events_entities(
    rel_path: str,
    table: EventsTable | None,
    mapping: ColumnMapping | None,
) -> dict[str, str]:
    """Entity labels for one timing file.

    Per entity: a mapped entity column wins, then path tokens, then fuzzy
    source-header names ("Subject", "Sub", "Subj", ...).
    """
    entities: dict[str, str] = {}
    first_row = table.rows[0] if table and table.rows else None

    def from_column(column: str) -> str | None:
        if table is None or column not in table.header:
            return None
        i = table.header.index(column)
        for row in table.rows:
            if row[i] and row[i] != "n/a":
                return sanitize_label(row[i])
        return None

    for key in ("sub", "ses", "task", "run"):
        if mapping and key in mapping.entity_columns:
            value = from_column(mapping.entity_columns[key])
            if value:
                entities[key] = value
                continue
        m = _PATH_TOKENS[key].search(rel_path)
        if m:
            entities[key] = m.group(1)
            continue
        if table is not None and first_row is not None:
            for i, name in enumerate(table.header):
                if _normalize_header(name) in _FUZZY_HEADERS[key]:
                    cell = sanitize_label(first_row[i])
                    if cell and cell != "na":
                        entities[key] = cell
                    break
    return entities


def _runs_match(record_run: str | None, bold_run: str | None) -> bool:
    if record_run is None:
        return True  # unconstrained; the exactly-one rule disambiguates
    want = int(record_run)
    have = int(bold_run) if bold_run is not None else 1  # singleton counts as run 1
    return want == have


def link_events(doc: ProposalDocument, tables: dict[int, EventsTable] | None = None) -> ProposalDocument:
    """(Re)link every events object to its functional BOLD image.

    A record links when exactly one included func/bold matches its sub,
    ses (when present), task, and run; everything else - no entities, no
    match, several matches, or two records claiming one bold - falls back
    to placeholder labels sub-XX1, sub-XX2, ...
    """
    out = copy.deepcopy(doc)
    mapping = ColumnMapping.from_dict(out.events_mapping) if out.events_mapping else None

    bolds = []
    for obj in out.objects:
        if obj.kind != "image" or not out.is_emittable(obj):
            continue
        series = out.series_by_id(obj.series_id)
        if (series.datatype, series.suffix) == ("func", "bold"):
            bolds.append((obj, out.effective_entities(obj)))

    events = [o for o in out.objects if o.kind == "events"]
    proposals: dict[int, int] = {}  # events object id -> bold object id
    extracted: dict[int, dict[str, str]] = {}
    manual_labels: dict[int, dict[str, str]] = {}
    for obj in events:
        table = (tables or {}).get(obj.object_id)
        if table is None and obj.columns is not None:
            table = EventsTable(list(obj.columns), [])
        entities = extract_events_entities(obj.paths[0], table, mapping)
        manual = {
            k: v
            for k, v in ((obj.link or {}).get("manualLabels") or {}).items()
            if k in ("sub", "ses", "task", "run") and v
        }
        manual_labels[obj.object_id] = manual
        entities = {**entities, **manual}  # user-edited labels win
        extracted[obj.object_id] = entities
        if not entities:
            continue
        matches = []
        for bold, bold_entities in bolds:
            if "sub" in entities and entities["sub"] != bold_entities.get("sub"):
                continue
            if "ses" in entities and entities["ses"] != bold_entities.get("ses"):
                continue
            if "task" in entities and entities["task"] != bold_entities.get("task"):
                continue
            if not _runs_match(entities.get("run"), bold_entities.get("run")):
                continue
            matches.append(bold)
        if len(matches) == 1:
            proposals[obj.object_id] = matches[0].object_id

    claimed: dict[int, list[int]] = {}
    for events_id, bold_id in proposals.items():
        claimed.setdefault(bold_id, []).append(events_id)
    # two records claiming the same bold both fall back to placeholder
    winners = {
        events_ids[0]: bold_id
        for bold_id, events_ids in claimed.items()
        if len(events_ids) == 1
    }

    placeholder = 0
    for obj in events:
        manual = manual_labels.get(obj.object_id) or {}
        if obj.object_id in winners:
            bold = out.object_by_id(winners[obj.object_id])
            bold_entities = out.effective_entities(bold)
            obj.link = {"state": "linked", "objectId": bold.object_id}
            obj.subject_idx = bold.subject_idx
            obj.session_idx = bold.session_idx
            overrides = {}
            if "task" in bold_entities:
                overrides["task"] = bold_entities["task"]
            obj.entity_overrides = overrides
            obj.run = bold.run
            # same SeriesNumber as the bold, so the two sort side by side
            obj.acquisition_order = bold.acquisition_order
        else:
            placeholder += 1
            labels = {"sub": f"XX{placeholder}"}
            labels.update(extracted.get(obj.object_id, {}))
            obj.link = {"state": "placeholder", "labels": labels}
            obj.subject_idx = None
            obj.session_idx = None
            obj.entity_overrides = {}
            obj.run = None
        if manual:
            obj.link["manualLabels"] = manual
    return out
