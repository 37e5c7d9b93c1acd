"""Assessment-and-plan extraction, annotation-instance construction, and dataset statistics.

An annotation instance pairs two consecutive eligible notes from one
admission with the structured chart events recorded between them. Eligible
means the note survived the attending-note filter upstream and carries a
detectable assessment-and-plan section.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, field
from datetime import datetime

from .ingest import ChartEvent, ClinicalNote

logger = logging.getLogger(__name__)

#: Header substrings that open an assessment-and-plan section, matched
#: case-insensitively at the start of a line.
DEFAULT_AANDP_HEADER_PATTERNS = [
    "assessment and plan",
    "assessment & plan",
    "a/p",
    "a&p",
    "assessment:",
    "impression and plan",
]

#: Top-level section headers that terminate an assessment-and-plan section
#: when they open a later line. Subsection headers inside the plan (problem
#: names, organ systems) deliberately do not appear here.
DEFAULT_SECTION_STOP_PATTERNS = [
    "subjective:",
    "objective:",
    "chief complaint:",
    "history of present illness",
    "review of systems",
    "physical exam",
    "medications:",
    "allergies:",
    "labs:",
    "vitals:",
    "code status:",
    "disposition:",
    "addendum:",
]


@dataclass(frozen=True)
class AAndPSection:
    """The assessment-and-plan span of one note; text == note.text[span_start:span_end]."""

    note_id: str
    span_start: int
    span_end: int
    text: str


@dataclass(frozen=True)
class AnnotationInstance:
    """A (prior note, next note, interim chart events) triple.

    The prior note and the events are model input; the next note is gold.
    Interim events fall in the half-open window (prior.charttime,
    next.charttime].
    """

    instance_id: str
    subject_id: str
    hadm_id: str
    prior_note: ClinicalNote
    prior_aandp: AAndPSection
    next_note: ClinicalNote
    next_aandp: AAndPSection
    interim_events: tuple[ChartEvent, ...]


@dataclass(frozen=True)
class SummaryStats:
    mean: float = 0.0
    median: float = 0.0
    sd: float = 0.0


@dataclass(frozen=True)
class DatasetStats:
    """Descriptive statistics over a set of annotation instances."""

    patient_count: int = 0
    instance_count: int = 0
    instances_per_patient_mean: float = 0.0
    instances_per_patient_median: float = 0.0
    interim_rows: SummaryStats = field(default_factory=SummaryStats)
    prior_words: SummaryStats = field(default_factory=SummaryStats)
    next_words: SummaryStats = field(default_factory=SummaryStats)
    added_count: int = 0
    added_next_words: SummaryStats = field(default_factory=SummaryStats)
    reduced_count: int = 0
    reduced_next_words: SummaryStats = field(default_factory=SummaryStats)


def _compile_line_patterns(patterns: list[str]) -> list[re.Pattern[str]]:
    return [re.compile(r"^[ \t]*" + re.escape(p), re.IGNORECASE | re.MULTILINE) for p in patterns]


def extract_aandp(
    note: ClinicalNote,
    header_patterns: list[str] | None = None,
    stop_patterns: list[str] | None = None,
) -> AAndPSection | None:
    """Locate the assessment-and-plan section of a note, if any.

    The section opens at the first line starting with one of the header
    patterns (case-insensitive). Its text runs from just after the matched
    header (a separating colon or dash on the header line is skipped, so
    content on the header line itself is kept) to the next top-level section
    header or the end of the note, trimmed of surrounding whitespace. Returns
    None when no header matches or the section body is empty.
    """
    headers = _compile_line_patterns(header_patterns or DEFAULT_AANDP_HEADER_PATTERNS)
    stops = _compile_line_patterns(stop_patterns or DEFAULT_SECTION_STOP_PATTERNS)
    text = note.text

    first: re.Match[str] | None = None
    for pattern in headers:
        m = pattern.search(text)
        if m is not None and (first is None or m.start() < first.start()):
            first = m
    if first is None:
        return None

    start = first.end()
    # Skip a separator after the header word plus surrounding spaces.
    while start < len(text) and text[start] in " \t":
        start += 1
    if start < len(text) and text[start] in ":-":
        start += 1

    # End of the current line; stop headers only count from the next line on.
    line_end = text.find("\n", first.start())
    search_from = len(text) if line_end == -1 else line_end + 1
    end = len(text)
    for pattern in stops:
        m = pattern.search(text, search_from)
        if m is not None and m.start() < end:
            end = m.start()

    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    if start >= end:
        return None
    return AAndPSection(note_id=note.note_id, span_start=start, span_end=end, text=text[start:end])


def make_instance_id(subject_id: str, hadm_id: str, prior_note_id: str, next_note_id: str) -> str:
    return f"{subject_id}/{hadm_id}/{prior_note_id}>{next_note_id}"


def build_instances(
    notes: list[ClinicalNote],
    events: list[ChartEvent],
    header_patterns: list[str] | None = None,
) -> list[AnnotationInstance]:
    """Pair consecutive eligible notes per admission and attach interim events.

    Notes without a detectable assessment-and-plan section are dropped from
    eligibility before pairing. Within an admission the eligible notes are
    ordered by charttime (ties broken by note_id, with a warning); each
    consecutive pair with at least one chart event in (prior, next] becomes
    an instance. Pairs with no interim events are dropped.
    """
    sections: dict[str, AAndPSection] = {}
    eligible_by_adm: dict[str, list[ClinicalNote]] = {}
    for note in notes:
        section = extract_aandp(note, header_patterns)
        if section is None:
            continue
        sections[note.note_id] = section
        eligible_by_adm.setdefault(note.hadm_id, []).append(note)

    events_by_adm: dict[str, list[ChartEvent]] = {}
    for event in events:
        events_by_adm.setdefault(event.hadm_id, []).append(event)
    for adm_events in events_by_adm.values():
        adm_events.sort(key=lambda e: e.charttime)

    instances: list[AnnotationInstance] = []
    for hadm_id in eligible_by_adm:
        adm_notes = eligible_by_adm[hadm_id]
        times = {n.charttime for n in adm_notes}
        if len(times) < len(adm_notes):
            logger.warning("admission %s has eligible notes sharing a charttime; breaking ties by note_id", hadm_id)
        adm_notes.sort(key=lambda n: (n.charttime, n.note_id))
        adm_events = events_by_adm.get(hadm_id, [])
        for prior, nxt in zip(adm_notes, adm_notes[1:]):
            interim = _events_between(adm_events, prior.charttime, nxt.charttime)
            if not interim:
                continue
            instances.append(
                AnnotationInstance(
                    instance_id=make_instance_id(prior.subject_id, hadm_id, prior.note_id, nxt.note_id),
                    subject_id=prior.subject_id,
                    hadm_id=hadm_id,
                    prior_note=prior,
                    prior_aandp=sections[prior.note_id],
                    next_note=nxt,
                    next_aandp=sections[nxt.note_id],
                    interim_events=tuple(interim),
                )
            )
    return instances


def _events_between(sorted_events: list[ChartEvent], start: datetime, end: datetime) -> list[ChartEvent]:
    """Events with charttime in the half-open window (start, end], input order preserved within ties."""
    return [e for e in sorted_events if start < e.charttime <= end]


def word_count(text: str) -> int:
    """Count maximal whitespace-delimited tokens."""
    return len(text.split())


def _summarize(values: list[int] | list[float], sample_sd: bool = False) -> SummaryStats:
    if not values:
        return SummaryStats()
    mean = statistics.fmean(values)
    median = float(statistics.median(values))
    if sample_sd:
        sd = statistics.stdev(values) if len(values) > 1 else 0.0
    else:
        sd = statistics.pstdev(values)
    return SummaryStats(mean=mean, median=median, sd=sd)


def compute_stats(instances: list[AnnotationInstance], sample_sd: bool = False) -> DatasetStats:
    """Compute descriptive statistics over instances.

    Standard deviations are population SDs unless sample_sd is set. The
    "added" subset holds instances whose next section is strictly longer in
    words than the prior one; length ties count as "reduced".
    """
    if not instances:
        return DatasetStats()

    per_patient: dict[str, int] = {}
    for inst in instances:
        per_patient[inst.subject_id] = per_patient.get(inst.subject_id, 0) + 1

    prior_words = [word_count(i.prior_aandp.text) for i in instances]
    next_words = [word_count(i.next_aandp.text) for i in instances]
    added = [n for p, n in zip(prior_words, next_words) if n > p]
    reduced = [n for p, n in zip(prior_words, next_words) if n <= p]

    per_patient_counts = list(per_patient.values())
    return DatasetStats(
        patient_count=len(per_patient),
        instance_count=len(instances),
        instances_per_patient_mean=statistics.fmean(per_patient_counts),
        instances_per_patient_median=float(statistics.median(per_patient_counts)),
        interim_rows=_summarize([len(i.interim_events) for i in instances], sample_sd),
        prior_words=_summarize(prior_words, sample_sd),
        next_words=_summarize(next_words, sample_sd),
        added_count=len(added),
        added_next_words=_summarize(added, sample_sd),
        reduced_count=len(reduced),
        reduced_next_words=_summarize(reduced, sample_sd),
    )
