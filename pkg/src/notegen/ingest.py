"""Parse delimiter-separated chart-event and clinical-note exports into domain records.

Column names, delimiter, and timestamp format differ between EHR exports, so
every parse goes through a SchemaMap that binds logical field names to the
columns of one concrete file. Timestamps are normalized to naive UTC at
second precision.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import ConfigError, RowParseError, SchemaError

logger = logging.getLogger(__name__)

CHART_EVENT_FIELDS = ("subject_id", "hadm_id", "charttime", "item_label", "value_text")
CHART_EVENT_OPTIONAL_FIELDS = ("value_num", "unit")
NOTE_FIELDS = ("note_id", "subject_id", "hadm_id", "charttime", "text")
NOTE_OPTIONAL_FIELDS = ("category", "description")

#: Special date_format value meaning "parse with datetime.fromisoformat".
ISO_FORMAT = "iso"


@dataclass(frozen=True)
class ChartEvent:
    """One timestamped structured observation for a patient admission."""

    subject_id: str
    hadm_id: str
    charttime: datetime
    item_label: str
    value_text: str = ""
    value_num: float | None = None
    unit: str | None = None


@dataclass(frozen=True)
class ClinicalNote:
    """One clinical note with its free text and typing metadata."""

    note_id: str
    subject_id: str
    hadm_id: str
    charttime: datetime
    category: str
    description: str
    text: str


@dataclass(frozen=True)
class SchemaMap:
    """Binds logical field names to the columns of one input file.

    ``columns`` maps logical names (see CHART_EVENT_FIELDS / NOTE_FIELDS) to
    header names in the file. ``date_format`` is a strptime pattern, or the
    string "iso" for ISO-8601 parsing.
    """

    columns: dict[str, str]
    date_format: str = ISO_FORMAT
    delimiter: str = ","

    def require(self, logical_fields: Iterable[str]) -> None:
        missing = [f for f in logical_fields if f not in self.columns]
        if missing:
            raise SchemaError(f"schema map missing logical fields: {', '.join(missing)}")

    def parse_timestamp(self, raw: str) -> datetime:
        if self.date_format == ISO_FORMAT:
            ts = datetime.fromisoformat(raw.strip())
        else:
            ts = datetime.strptime(raw.strip(), self.date_format)
        if ts.tzinfo is not None:
            ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
        return ts.replace(microsecond=0)

    def format_timestamp(self, ts: datetime) -> str:
        if self.date_format == ISO_FORMAT:
            return ts.isoformat(sep=" ")
        return ts.strftime(self.date_format)


@dataclass(frozen=True)
class RowError:
    """One skipped input row: 1-based data-row index plus the reason."""

    row: int
    reason: str


def _open_source(source: str | Path | IO[str]) -> tuple[IO[str], bool]:
    if isinstance(source, (str, Path)):
        return open(source, encoding="utf-8", newline=""), True
    return source, False


def _header_index(header: list[str], schema: SchemaMap, fields: Iterable[str]) -> dict[str, int]:
    """Resolve mapped logical fields to column positions, failing on absent columns."""
    index: dict[str, int] = {}
    for logical in fields:
        column = schema.columns.get(logical)
        if column is None:
            continue
        try:
            index[logical] = header.index(column)
        except ValueError:
            raise SchemaError(f"input file has no column {column!r} (mapped to {logical})") from None
    return index


def _cell(row: list[str], index: dict[str, int], logical: str, default: str = "") -> str:
    pos = index.get(logical)
    if pos is None or pos >= len(row):
        return default
    return row[pos]


def _iter_rows(reader: Iterator[list[str]]) -> Iterator[tuple[int, list[str]]]:
    """Yield (1-based data-row index, row), ignoring blank lines entirely."""
    row_number = 0
    for row in reader:
        if not row:
            continue
        row_number += 1
        yield row_number, row


def parse_chart_events(
    source: str | Path | IO[str],
    schema: SchemaMap,
    mode: str = "strict",
) -> tuple[list[ChartEvent], list[RowError]]:
    """Parse a delimited chart-event export.

    In strict mode the first malformed row raises RowParseError. In lenient
    mode malformed rows are skipped and reported as RowErrors, so the number
    of events plus the number of row errors always equals the number of data
    rows. Output order follows input order either way.
    """
    _check_mode(mode)
    schema.require(CHART_EVENT_FIELDS)
    stream, owned = _open_source(source)
    events: list[ChartEvent] = []
    errors: list[RowError] = []
    try:
        reader = csv.reader(stream, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError("input file is empty (no header row)")
        index = _header_index(header, schema, CHART_EVENT_FIELDS + CHART_EVENT_OPTIONAL_FIELDS)
        for row_number, row in _iter_rows(reader):
            try:
                events.append(_chart_event_from_row(row, index, schema))
            except ValueError as exc:
                if mode == "strict":
                    raise RowParseError(row_number, str(exc)) from exc
                errors.append(RowError(row_number, str(exc)))
    finally:
        if owned:
            stream.close()
    return events, errors


def _chart_event_from_row(row: list[str], index: dict[str, int], schema: SchemaMap) -> ChartEvent:
    subject_id = _cell(row, index, "subject_id").strip()
    hadm_id = _cell(row, index, "hadm_id").strip()
    if not subject_id or not hadm_id:
        raise ValueError("empty subject_id or hadm_id")
    item_label = _cell(row, index, "item_label").strip()
    if not item_label:
        raise ValueError("empty item_label")
    raw_time = _cell(row, index, "charttime")
    try:
        charttime = schema.parse_timestamp(raw_time)
    except ValueError:
        raise ValueError(f"unparseable timestamp {raw_time!r}") from None
    raw_num = _cell(row, index, "value_num").strip()
    value_num: float | None = None
    if raw_num:
        try:
            value_num = float(raw_num)
        except ValueError:
            raise ValueError(f"unparseable decimal {raw_num!r}") from None
    unit = _cell(row, index, "unit").strip() or None
    return ChartEvent(
        subject_id=subject_id,
        hadm_id=hadm_id,
        charttime=charttime,
        item_label=item_label,
        value_text=_cell(row, index, "value_text").strip(),
        value_num=value_num,
        unit=unit,
    )


def parse_notes(
    source: str | Path | IO[str],
    schema: SchemaMap,
    mode: str = "strict",
) -> tuple[list[ClinicalNote], list[RowError]]:
    """Parse a delimited clinical-note export.

    Note text may span multiple lines inside quotes (RFC-4180 quoting) and
    round-trips byte-exact. Duplicate note_id values are retained with a
    warning.
    """
    _check_mode(mode)
    schema.require(NOTE_FIELDS)
    stream, owned = _open_source(source)
    notes: list[ClinicalNote] = []
    errors: list[RowError] = []
    seen_ids: set[str] = set()
    try:
        reader = csv.reader(stream, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError("input file is empty (no header row)")
        index = _header_index(header, schema, NOTE_FIELDS + NOTE_OPTIONAL_FIELDS)
        for row_number, row in _iter_rows(reader):
            try:
                note = _note_from_row(row, index, schema)
            except ValueError as exc:
                if mode == "strict":
                    raise RowParseError(row_number, str(exc)) from exc
                errors.append(RowError(row_number, str(exc)))
                continue
            if note.note_id in seen_ids:
                logger.warning("duplicate note_id %s at row %d (both retained)", note.note_id, row_number)
            seen_ids.add(note.note_id)
            notes.append(note)
    finally:
        if owned:
            stream.close()
    return notes, errors


def _note_from_row(row: list[str], index: dict[str, int], schema: SchemaMap) -> ClinicalNote:
    note_id = _cell(row, index, "note_id").strip()
    subject_id = _cell(row, index, "subject_id").strip()
    hadm_id = _cell(row, index, "hadm_id").strip()
    if not note_id:
        raise ValueError("empty note_id")
    if not subject_id or not hadm_id:
        raise ValueError("empty subject_id or hadm_id")
    raw_time = _cell(row, index, "charttime")
    try:
        charttime = schema.parse_timestamp(raw_time)
    except ValueError:
        raise ValueError(f"unparseable timestamp {raw_time!r}") from None
    text = _cell(row, index, "text")
    if not text:
        raise ValueError("empty note text")
    return ClinicalNote(
        note_id=note_id,
        subject_id=subject_id,
        hadm_id=hadm_id,
        charttime=charttime,
        category=_cell(row, index, "category").strip(),
        description=_cell(row, index, "description").strip(),
        text=text,
    )


def _check_mode(mode: str) -> None:
    if mode not in ("strict", "lenient"):
        raise ConfigError(f"unknown parse mode {mode!r} (expected strict or lenient)")


def filter_attending_progress_notes(notes: list[ClinicalNote], patterns: list[str]) -> list[ClinicalNote]:
    """Keep notes whose category+description matches any pattern.

    Patterns are case-insensitive substrings tested against the concatenation
    of category and description. Input order is preserved; the operation is
    idempotent.
    """
    if not patterns:
        raise ConfigError("attending note pattern list is empty")
    needles = [p.lower() for p in patterns]
    kept = []
    for note in notes:
        haystack = f"{note.category} {note.description}".lower()
        if any(needle in haystack for needle in needles):
            kept.append(note)
    return kept


def dump_chart_events(target: str | Path | IO[str], events: list[ChartEvent], schema: SchemaMap) -> None:
    """Serialize events back to delimited text under the same schema map.

    Re-parsing the output with the same schema yields identical records.
    """
    schema.require(CHART_EVENT_FIELDS)
    stream, owned = _open_target(target)
    try:
        fields = [f for f in CHART_EVENT_FIELDS + CHART_EVENT_OPTIONAL_FIELDS if f in schema.columns]
        writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
        writer.writerow([schema.columns[f] for f in fields])
        for event in events:
            writer.writerow([_event_cell(event, f, schema) for f in fields])
    finally:
        if owned:
            stream.close()


def _event_cell(event: ChartEvent, logical: str, schema: SchemaMap) -> str:
    if logical == "charttime":
        return schema.format_timestamp(event.charttime)
    if logical == "value_num":
        return "" if event.value_num is None else repr(event.value_num)
    if logical == "unit":
        return event.unit or ""
    return getattr(event, logical)


def dump_notes(target: str | Path | IO[str], notes: list[ClinicalNote], schema: SchemaMap) -> None:
    """Serialize notes back to delimited text under the same schema map."""
    schema.require(NOTE_FIELDS)
    stream, owned = _open_target(target)
    try:
        fields = [f for f in NOTE_FIELDS + NOTE_OPTIONAL_FIELDS if f in schema.columns]
        writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
        writer.writerow([schema.columns[f] for f in fields])
        for note in notes:
            writer.writerow(
                [schema.format_timestamp(note.charttime) if f == "charttime" else getattr(note, f) for f in fields]
            )
    finally:
        if owned:
            stream.close()


def _open_target(target: str | Path | IO[str]) -> tuple[IO[str], bool]:
    if isinstance(target, (str, Path)):
        return open(target, "w", encoding="utf-8", newline=""), True
    return target, False
