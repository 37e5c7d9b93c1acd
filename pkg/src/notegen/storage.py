"""Disk formats: atomic file writes, JSONL, manifests, config hashing.

Every artifact is written to a temp file in the target directory and moved
into place with os.replace, so a crashed command never leaves a truncated
file behind.
"""

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

from .corpus import AAndPSection, AnnotationInstance, DatasetStats, SummaryStats
from .ingest import ChartEvent, ClinicalNote

ISO = "%Y-%m-%dT%H:%M:%S"


def _parse_ts(text: str) -> datetime:
    return datetime.strptime(text, ISO)


def _format_ts(value: datetime) -> str:
    return value.strftime(ISO)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        # mkstemp creates 0600; widen to the umask-derived mode a plain
        # open() would use, or outputs are unreadable to other users.
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    atomic_write_text(path, text)


def read_jsonl(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def config_hash(resolved: dict) -> str:
    """Stable digest of the resolved configuration; auth material is
    excluded so rotating a token does not invalidate --resume."""
    scrubbed = {}
    for section, values in resolved.items():
        scrubbed[section] = {
            k: v for k, v in values.items() if k not in ("auth_token", "token")
        }
    canonical = json.dumps(scrubbed, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime(ISO) + "Z"


# ---------------------------------------------------------------------------
# Instance serialization

def _event_to_dict(event: ChartEvent) -> dict:
    return {
        "subject_id": event.subject_id,
        "hadm_id": event.hadm_id,
        "charttime": _format_ts(event.charttime),
        "item_label": event.item_label,
        "value_text": event.value_text,
        "value_num": event.value_num,
        "unit": event.unit,
    }


def _event_from_dict(raw: dict) -> ChartEvent:
    return ChartEvent(
        subject_id=raw["subject_id"],
        hadm_id=raw["hadm_id"],
        charttime=_parse_ts(raw["charttime"]),
        item_label=raw["item_label"],
        value_text=raw.get("value_text", ""),
        value_num=raw.get("value_num"),
        unit=raw.get("unit"),
    )


def _note_to_dict(note: ClinicalNote) -> dict:
    return {
        "note_id": note.note_id,
        "subject_id": note.subject_id,
        "hadm_id": note.hadm_id,
        "charttime": _format_ts(note.charttime),
        "category": note.category,
        "description": note.description,
        "text": note.text,
    }


def _note_from_dict(raw: dict) -> ClinicalNote:
    return ClinicalNote(
        note_id=raw["note_id"],
        subject_id=raw["subject_id"],
        hadm_id=raw["hadm_id"],
        charttime=_parse_ts(raw["charttime"]),
        category=raw.get("category", ""),
        description=raw.get("description", ""),
        text=raw["text"],
    )


def _section_to_dict(section: AAndPSection) -> dict:
    return {
        "note_id": section.note_id,
        "span_start": section.span_start,
        "span_end": section.span_end,
        "text": section.text,
    }


def _section_from_dict(raw: dict) -> AAndPSection:
    return AAndPSection(
        note_id=raw["note_id"],
        span_start=raw["span_start"],
        span_end=raw["span_end"],
        text=raw["text"],
    )


def instance_to_dict(instance: AnnotationInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "subject_id": instance.subject_id,
        "hadm_id": instance.hadm_id,
        "prior_note": _note_to_dict(instance.prior_note),
        "prior_aandp": _section_to_dict(instance.prior_aandp),
        "next_note": _note_to_dict(instance.next_note),
        "next_aandp": _section_to_dict(instance.next_aandp),
        "interim_events": [_event_to_dict(e) for e in instance.interim_events],
    }


def instance_from_dict(raw: dict) -> AnnotationInstance:
    return AnnotationInstance(
        instance_id=raw["instance_id"],
        subject_id=raw["subject_id"],
        hadm_id=raw["hadm_id"],
        prior_note=_note_from_dict(raw["prior_note"]),
        prior_aandp=_section_from_dict(raw["prior_aandp"]),
        next_note=_note_from_dict(raw["next_note"]),
        next_aandp=_section_from_dict(raw["next_aandp"]),
        interim_events=tuple(_event_from_dict(e) for e in raw["interim_events"]),
    )


def write_instances(path, instances: Iterable[AnnotationInstance]) -> None:
    write_jsonl(path, (instance_to_dict(i) for i in instances))


def read_instances(path) -> list:
    return [instance_from_dict(raw) for raw in read_jsonl(path)]


def _summary_to_dict(summary: SummaryStats) -> dict:
    return {"mean": summary.mean, "median": summary.median, "sd": summary.sd}


def _summary_from_dict(raw: dict) -> SummaryStats:
    return SummaryStats(mean=raw["mean"], median=raw["median"], sd=raw["sd"])


def stats_to_dict(stats: DatasetStats) -> dict:
    return {
        "patient_count": stats.patient_count,
        "instance_count": stats.instance_count,
        "instances_per_patient_mean": stats.instances_per_patient_mean,
        "instances_per_patient_median": stats.instances_per_patient_median,
        "interim_rows": _summary_to_dict(stats.interim_rows),
        "prior_words": _summary_to_dict(stats.prior_words),
        "next_words": _summary_to_dict(stats.next_words),
        "added_count": stats.added_count,
        "added_next_words": _summary_to_dict(stats.added_next_words),
        "reduced_count": stats.reduced_count,
        "reduced_next_words": _summary_to_dict(stats.reduced_next_words),
    }


def stats_from_dict(raw: dict) -> DatasetStats:
    return DatasetStats(
        patient_count=raw["patient_count"],
        instance_count=raw["instance_count"],
        instances_per_patient_mean=raw["instances_per_patient_mean"],
        instances_per_patient_median=raw["instances_per_patient_median"],
        interim_rows=_summary_from_dict(raw["interim_rows"]),
        prior_words=_summary_from_dict(raw["prior_words"]),
        next_words=_summary_from_dict(raw["next_words"]),
        added_count=raw["added_count"],
        added_next_words=_summary_from_dict(raw["added_next_words"]),
        reduced_count=raw["reduced_count"],
        reduced_next_words=_summary_from_dict(raw["reduced_next_words"]),
    )


def write_manifest(path, config_digest: str, backend_identity: Optional[str] = None, **extra) -> None:
    manifest = {
        "config_hash": config_digest,
        "created_utc": utc_now_iso(),
    }
    if backend_identity is not None:
        manifest["backend"] = backend_identity
    manifest.update(extra)
    write_json(path, manifest)
