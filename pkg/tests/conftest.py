"""Shared fixture machinery: a self-contained CLI workspace on disk.

The workspace carries a two-admission corpus whose next sections equal the
prior sections word for word, a scripted mock backend that reproduces those
sections, a tiny concept lexicon, and an INI config pointing at all of it.
"""

import json
import textwrap
from dataclasses import dataclass, field
from pathlib import Path

import pytest

CHART_HEADER = "SUBJECT_ID,HADM_ID,CHARTTIME,LABEL,VALUE,VALUENUM,VALUEUOM"
NOTES_HEADER = "ROW_ID,SUBJECT_ID,HADM_ID,CHARTTIME,CATEGORY,DESCRIPTION,TEXT"


@dataclass
class Workspace:
    root: Path
    config_path: Path
    out: Path
    chart_csv: Path
    notes_csv: Path
    script_path: Path
    lexicon_path: Path
    instance_ids: list = field(default_factory=list)
    golds: dict = field(default_factory=dict)  # instance_id -> next A&P text


def _body(i: int) -> str:
    return (
        f"marker-{i} sepsis stable on antibiotics, wean pressors.\n"
        f"# monitor renal function"
    )


def build_workspace(root: Path, pairs: int = 2, identity: bool = True,
                    events_per_pair: int = 3, chunk_budget: int = 256) -> Workspace:
    root.mkdir(parents=True, exist_ok=True)
    out = root / "out"

    chart_rows = [CHART_HEADER]
    note_rows = [NOTES_HEADER]
    instance_ids = []
    golds = {}
    script = [
        {"template_id": "chief_complaints", "response": "sepsis; hypotension"},
        {"template_id": "summarize_initial", "response": "initial chart summary"},
        {"template_id": "summarize_refine", "response": "refined chart summary"},
    ]

    for i in range(pairs):
        subject, adm = f"s{i}", f"h{i}"
        day = f"2024-05-{i + 1:02d}"
        prior_body = _body(i)
        next_body = prior_body if identity else f"rewritten plan {i}: transfer to floor."

        def note_row(row_id, hour, category, description, text):
            quoted = '"' + text.replace('"', '""') + '"'
            return f"{row_id},{subject},{adm},{day}T{hour}:00:00,{category},{description},{quoted}"

        note_rows.append(note_row(f"n{i}a", "08", "Physician",
                                  "Physician Attending Progress Note",
                                  f"Subjective: overnight events.\nAssessment and Plan: {prior_body}"))
        note_rows.append(note_row(f"n{i}b", "20", "Physician",
                                  "Physician Attending Progress Note",
                                  f"Subjective: later events.\nAssessment and Plan: {next_body}"))
        # Chaff the pairing must ignore: a nursing note and a physician note
        # without a detectable section.
        note_rows.append(note_row(f"n{i}n", "12", "Nursing", "Nursing Progress Note",
                                  "events: nothing acute"))
        note_rows.append(note_row(f"n{i}x", "13", "Physician",
                                  "Physician Attending Progress Note",
                                  "addendum only, see prior note"))

        for j in range(events_per_pair):
            hour = 9 + 2 * j
            chart_rows.append(
                f"{subject},{adm},{day}T{hour:02d}:00:00,Heart Rate,,{80 + j},bpm"
            )

        instance_id = f"{subject}/{adm}/n{i}a>n{i}b"
        instance_ids.append(instance_id)
        golds[instance_id] = next_body
        script.append(
            {"template_id": "generate_note", "contains": f"marker-{i}", "response": next_body}
        )

    chart_csv = root / "chart.csv"
    chart_csv.write_text("\n".join(chart_rows) + "\n", encoding="utf-8")
    notes_csv = root / "notes.csv"
    notes_csv.write_text("\n".join(note_rows) + "\n", encoding="utf-8")
    script_path = root / "script.json"
    script_path.write_text(json.dumps(script, indent=2), encoding="utf-8")
    lexicon_path = root / "lexicon.tsv"
    lexicon_path.write_text(
        "sepsis\tC0036690\nantibiotics\tC0003232\nrenal function\tC0232804\n",
        encoding="utf-8",
    )

    config_path = root / "run.ini"
    config_path.write_text(
        textwrap.dedent(
            f"""
            [inputs]
            chart_events = {chart_csv}
            notes = {notes_csv}

            [chart_schema]
            subject_id = SUBJECT_ID
            hadm_id = HADM_ID
            charttime = CHARTTIME
            item_label = LABEL
            value_text = VALUE
            value_num = VALUENUM
            unit = VALUEUOM

            [notes_schema]
            note_id = ROW_ID
            subject_id = SUBJECT_ID
            hadm_id = HADM_ID
            charttime = CHARTTIME
            category = CATEGORY
            description = DESCRIPTION
            text = TEXT

            [condense]
            chunk_budget = {chunk_budget}

            [llm]
            mode = mock
            mock_script = {script_path}

            [eval]
            lexicon = {lexicon_path}
            embedder = one-hot

            [output]
            dir = {out}
            """
        ),
        encoding="utf-8",
    )

    return Workspace(
        root=root,
        config_path=config_path,
        out=out,
        chart_csv=chart_csv,
        notes_csv=notes_csv,
        script_path=script_path,
        lexicon_path=lexicon_path,
        instance_ids=instance_ids,
        golds=golds,
    )


@pytest.fixture
def workspace(tmp_path):
    return build_workspace(tmp_path / "ws")
