"""Acceptance gate: one test per shipping criterion.

Each test prints a single "[ACCEPTANCE] <name>: PASS|FAIL" line (visible with
pytest -s) and asserts the criterion at its stated tolerance. Oracles here are
deliberately independent re-derivations: brute-force scoring, hand arithmetic,
and rule-by-rule pairing enumeration.
"""

import json
import random
import time
from collections import Counter
from datetime import datetime, timedelta
from functools import lru_cache

from notegen.cli import main
from notegen.condense import HeuristicTokenizer, condense, plan_chunks, render
from notegen.corpus import build_instances, compute_stats, extract_aandp
from notegen.ingest import ChartEvent, ClinicalNote
from notegen.llm import MockBackend, ScriptEntry
from notegen.metrics import (
    ConceptLexicon,
    OneHotEmbedder,
    PrScore,
    concept_f1,
    extract_concepts,
    rouge_l,
    rouge_n,
    score_instance,
)
from notegen.pipeline import PipelineConfig, prior_baseline, run_batch, run_instance
from notegen.storage import read_json, read_jsonl

from conftest import build_workspace

TOLERANCE = 1e-9


def verdict(name, problems):
    print(f"[ACCEPTANCE] {name}: {'FAIL' if problems else 'PASS'}")
    assert not problems, f"{name}: {problems[:5]}"


# ---------------------------------------------------------------------------
# Fixture construction helpers

def note(note_id, subject, adm, when, body=None, category="Physician",
         description="Physician Attending Progress Note"):
    text = "Subjective: interval events.\n"
    if body is not None:
        text += f"Assessment and Plan: {body}"
    else:
        text += "narrative only, no plan section"
    return ClinicalNote(
        note_id=note_id, subject_id=subject, hadm_id=adm, charttime=when,
        category=category, description=description, text=text,
    )


def event(subject, adm, when, label, num=None, text="", unit=None):
    return ChartEvent(
        subject_id=subject, hadm_id=adm, charttime=when,
        item_label=label, value_text=text, value_num=num, unit=unit,
    )


def single_pair_instance(key, body_prior, body_next, event_count):
    base = datetime(2024, 6, 1, 8, 0, 0)
    notes = [
        note(f"{key}a", f"s{key}", f"h{key}", base, body_prior),
        note(f"{key}b", f"s{key}", f"h{key}", base + timedelta(hours=12), body_next),
    ]
    events = [
        event(f"s{key}", f"h{key}", base + timedelta(hours=1 + j), f"Item {j}", num=float(j))
        for j in range(event_count)
    ]
    built = build_instances(notes, events)
    assert len(built) == 1
    return built[0]


# ---------------------------------------------------------------------------
# 1. ROUGE oracle equivalence

def brute_ngram_score(pred_tokens, gold_tokens, n):
    def grams(tokens):
        return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]

    pred_grams, gold_grams = grams(pred_tokens), grams(gold_tokens)
    overlap = sum(min(pred_grams.count(g), gold_grams.count(g)) for g in set(pred_grams))
    precision = overlap / len(pred_grams) if pred_grams else 0.0
    recall = overlap / len(gold_grams) if gold_grams else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def brute_lcs_score(pred_tokens, gold_tokens):
    pred_t, gold_t = tuple(pred_tokens), tuple(gold_tokens)

    @lru_cache(maxsize=None)
    def lcs(i, j):
        if i == len(pred_t) or j == len(gold_t):
            return 0
        if pred_t[i] == gold_t[j]:
            return 1 + lcs(i + 1, j + 1)
        return max(lcs(i + 1, j), lcs(i, j + 1))

    length = lcs(0, 0)
    precision = length / len(pred_t) if pred_t else 0.0
    recall = length / len(gold_t) if gold_t else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def test_rouge_oracle_equivalence():
    rng = random.Random(20240902)
    vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"]
    problems = []
    started = time.monotonic()
    for trial in range(200):
        pred_tokens = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        gold_tokens = [rng.choice(vocab) for _ in range(rng.randint(0, 12))]
        pred, gold = " ".join(pred_tokens), " ".join(gold_tokens)
        cases = [
            ("rouge1", rouge_n(pred, gold, 1), brute_ngram_score(pred_tokens, gold_tokens, 1)),
            ("rouge2", rouge_n(pred, gold, 2), brute_ngram_score(pred_tokens, gold_tokens, 2)),
            ("rougeL", rouge_l(pred, gold), brute_lcs_score(pred_tokens, gold_tokens)),
        ]
        for name, ours, reference in cases:
            for label, a, b in zip("PRF", (ours.precision, ours.recall, ours.f1), reference):
                if abs(a - b) >= TOLERANCE:
                    problems.append(f"trial {trial} {name} {label}: {a} vs {b}")
    elapsed = time.monotonic() - started
    if elapsed >= 5.0:
        problems.append(f"took {elapsed:.2f}s, limit 5s")
    verdict("rouge-oracle-equivalence", problems)


# ---------------------------------------------------------------------------
# 2. Identity suite

def test_identity_suite():
    lexicon = ConceptLexicon({"sepsis": "C1", "acute kidney injury": "C2", "anemia": "C3"})
    bodies = [
        "sepsis improving on antibiotics.\n# wean pressors as tolerated",
        "acute kidney injury, creatinine trending down. continue fluids.",
        "anemia stable. transfuse if hgb under seven.",
    ]
    problems = []
    for index, body in enumerate(bodies):
        instance = single_pair_instance(f"id{index}", body, body, event_count=3)
        pred = prior_baseline(instance)
        gold = instance.next_aandp.text
        if pred != gold:
            problems.append(f"fixture {index}: baseline is not the identity")
        scores = score_instance(
            instance.instance_id, pred, gold,
            embedder=OneHotEmbedder(), lexicon=lexicon,
        )
        for name in ("rouge1", "rouge2", "rougeL", "rougeLsum", "concept", "embed"):
            value = scores.get(name)
            if value is None or abs(value.f1 - 1.0) >= TOLERANCE:
                problems.append(f"fixture {index} {name}: {value}")
    verdict("identity-suite", problems)


# ---------------------------------------------------------------------------
# 3. Corpus pairing oracle

def brute_force_pairs(notes, events):
    """Rule-by-rule enumeration: same admission, no eligible note strictly
    between, at least one interim event in the half-open window."""
    eligible = [(n, extract_aandp(n)) for n in notes]
    eligible = [(n, section) for n, section in eligible if section is not None]
    order = sorted(eligible, key=lambda pair: (pair[0].subject_id, pair[0].hadm_id,
                                               pair[0].charttime, pair[0].note_id))
    found = {}
    for i, (prior, _) in enumerate(order):
        for j, (nxt, _) in enumerate(order):
            if i == j:
                continue
            if (prior.subject_id, prior.hadm_id) != (nxt.subject_id, nxt.hadm_id):
                continue
            if (prior.charttime, prior.note_id) >= (nxt.charttime, nxt.note_id):
                continue
            between = [
                other for other, _ in order
                if (other.subject_id, other.hadm_id) == (prior.subject_id, prior.hadm_id)
                and (prior.charttime, prior.note_id)
                < (other.charttime, other.note_id)
                < (nxt.charttime, nxt.note_id)
            ]
            if between:
                continue
            interim = [
                e for e in events
                if (e.subject_id, e.hadm_id) == (prior.subject_id, prior.hadm_id)
                and prior.charttime < e.charttime <= nxt.charttime
            ]
            if not interim:
                continue
            key = f"{prior.subject_id}/{prior.hadm_id}/{prior.note_id}>{nxt.note_id}"
            found[key] = (prior.note_id, nxt.note_id, Counter(interim))
    return found


def test_corpus_pairing_oracle():
    rng = random.Random(20240903)
    notes, events = [], []
    for adm_index in range(12):
        subject, adm = f"p{adm_index}", f"v{adm_index}"
        base = datetime(2024, 7, 1 + adm_index, 6, 0, 0)
        for note_index in range(rng.randint(2, 6)):
            when = base + timedelta(hours=rng.randint(0, 70))
            has_section = rng.random() < 0.7
            category = rng.choice(["Physician", "Nursing", "Radiology"])
            notes.append(
                note(
                    f"a{adm_index}n{note_index}", subject, adm, when,
                    body=f"plan for day {note_index}." if has_section else None,
                    category=category,
                )
            )
        for event_index in range(rng.randint(0, 8)):
            when = base + timedelta(hours=rng.randint(0, 70), minutes=30)
            events.append(event(subject, adm, when, f"Obs {event_index}", num=float(event_index)))

    built = build_instances(notes, events)
    expected = brute_force_pairs(notes, events)

    problems = []
    built_ids = sorted(i.instance_id for i in built)
    if built_ids != sorted(expected):
        missing = set(expected) - set(built_ids)
        extra = set(built_ids) - set(expected)
        problems.append(f"id mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for instance in built:
        if instance.instance_id not in expected:
            continue
        prior_id, next_id, interim = expected[instance.instance_id]
        if instance.prior_note.note_id != prior_id or instance.next_note.note_id != next_id:
            problems.append(f"{instance.instance_id}: wrong note pair")
        if Counter(instance.interim_events) != interim:
            problems.append(f"{instance.instance_id}: wrong interim events")
    if len(built) < 5:
        problems.append(f"degenerate fixture: only {len(built)} instances")
    verdict("corpus-pairing-oracle", problems)


# ---------------------------------------------------------------------------
# 4. Statistics oracle

def hand_summary(values):
    mean = sum(values) / len(values)
    ordered = sorted(values)
    mid = len(ordered) // 2
    median = float(ordered[mid]) if len(ordered) % 2 else (ordered[mid - 1] + ordered[mid]) / 2
    sd = (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5
    return mean, median, sd


def test_statistics_oracle():
    prior_words = [10, 20, 30, 40, 50, 60]
    next_words = [12, 18, 33, 40, 55, 48]
    event_counts = [1, 2, 3, 4, 5, 6]
    instances = [
        single_pair_instance(
            f"st{i}",
            " ".join(f"p{j}" for j in range(prior_words[i])),
            " ".join(f"n{j}" for j in range(next_words[i])),
            event_counts[i],
        )
        for i in range(6)
    ]
    stats = compute_stats(instances)

    problems = []

    def check_summary(name, summary, values):
        for label, got, want in zip(
            ("mean", "median", "sd"), (summary.mean, summary.median, summary.sd), hand_summary(values)
        ):
            if abs(got - want) >= TOLERANCE:
                problems.append(f"{name} {label}: {got} vs {want}")

    if stats.patient_count != 6 or stats.instance_count != 6:
        problems.append(f"counts: {stats.patient_count} patients, {stats.instance_count} instances")
    if abs(stats.instances_per_patient_mean - 1.0) >= TOLERANCE:
        problems.append("per-patient mean")
    if abs(stats.instances_per_patient_median - 1.0) >= TOLERANCE:
        problems.append("per-patient median")
    check_summary("interim", stats.interim_rows, event_counts)
    check_summary("prior", stats.prior_words, prior_words)
    check_summary("next", stats.next_words, next_words)
    # Strictly longer counts as added; the 40 == 40 tie lands in reduced.
    if stats.added_count != 3:
        problems.append(f"added_count {stats.added_count}")
    if stats.reduced_count != 3:
        problems.append(f"reduced_count {stats.reduced_count}")
    check_summary("added subset", stats.added_next_words, [12, 33, 55])
    check_summary("reduced subset", stats.reduced_next_words, [18, 40, 48])
    if stats.added_count + stats.reduced_count != stats.instance_count:
        problems.append("added + reduced != instances")
    verdict("statistics-oracle", problems)


# ---------------------------------------------------------------------------
# 5. Condensation conservation

def random_unique_events(rng, count):
    timestamps = [
        datetime(2024, 8, 1, 0, 0, 0) + timedelta(minutes=30 * k)
        for k in range(max(1, count // 6))
    ]
    events = []
    for index in range(count):
        events.append(
            event(
                "s", "h", rng.choice(timestamps), f"lab{index:04d}",
                num=None if index % 2 else float(index),
                text=f"val{index:04d}" if index % 2 else "",
                unit=f"u{index:04d}",
            )
        )
    return events


def test_condensation_conservation():
    rng = random.Random(20240904)
    problems = []
    for count in (1, 37, 250, 500):
        events = random_unique_events(rng, count)
        chart = condense(events)
        rendered = render(chart)
        lines = rendered.split("\n")
        headers = [line for line in lines if line.startswith("[")]
        entries = [line for line in lines if line.startswith("  ")]

        distinct = sorted({e.charttime for e in events})
        if len(headers) != len(distinct):
            problems.append(f"n={count}: {len(headers)} headers, {len(distinct)} timestamps")
        expected_headers = [f"[{ts:%Y-%m-%d %H:%M}]" for ts in distinct]
        if headers != expected_headers:
            problems.append(f"n={count}: headers not ascending or duplicated")
        if len(entries) != count or chart.entry_count != count:
            problems.append(f"n={count}: {len(entries)} entries rendered")

        # Each unique (timestamp, label, value) appears exactly once, inside
        # its own timestamp's block.
        block_of = {}
        current = None
        for line in lines:
            if line.startswith("["):
                current = line
            else:
                block_of[line.strip().split(":")[0]] = current
        for e in events:
            label = e.item_label
            if rendered.count(f"{label}:") != 1:
                problems.append(f"n={count}: {label} not rendered exactly once")
                continue
            if block_of.get(label) != f"[{e.charttime:%Y-%m-%d %H:%M}]":
                problems.append(f"n={count}: {label} in wrong block")
            # The trailing per-event unit delimits the value, so the full
            # entry string is unique in the rendering.
            value = e.value_text or f"{e.value_num:.4g}"
            if rendered.count(f"  {label}: {value} {e.unit}") != 1:
                problems.append(f"n={count}: value for {label} not rendered exactly once")
    verdict("condensation-conservation", problems)


# ---------------------------------------------------------------------------
# 6. Chunking laws

def test_chunking_laws():
    rng = random.Random(20240905)
    tokenizer = HeuristicTokenizer()
    problems = []
    for count in (3, 40, 200):
        rendered = render(condense(random_unique_events(rng, count)))
        lines = rendered.split("\n")
        total = tokenizer.estimate(rendered)
        max_line = max(tokenizer.estimate(line) for line in lines)

        for budget in (max(64, max_line), max(64, max_line * 3), max(64, total)):
            plan = plan_chunks(lines, tokenizer, budget)
            for chunk, recorded in zip(plan.chunks, plan.estimates):
                actual = tokenizer.estimate(chunk)
                if actual > budget or recorded > budget or actual != recorded:
                    problems.append(f"n={count} budget={budget}: estimate {actual}/{recorded}")
            if "\n".join(plan.chunks) != rendered:
                problems.append(f"n={count} budget={budget}: concatenation differs")
            if plan.warnings:
                problems.append(f"n={count} budget={budget}: unexpected truncation")
        one = plan_chunks(lines, tokenizer, max(64, total))
        if len(one.chunks) != 1:
            problems.append(f"n={count}: budget >= total gave {len(one.chunks)} chunks")
    verdict("chunking-laws", problems)


# ---------------------------------------------------------------------------
# 7. Pipeline call-count law

def chained_script(max_refines=90):
    entries = [
        ScriptEntry(response="sepsis; hypotension", template_id="chief_complaints"),
        ScriptEntry(response="SUM-001", template_id="summarize_initial"),
        ScriptEntry(response="predicted next plan.", template_id="generate_note"),
    ]
    for i in range(1, max_refines + 1):
        entries.append(
            ScriptEntry(
                response=f"SUM-{i + 1:03d}",
                template_id="summarize_refine",
                contains=f"SUM-{i:03d}",
            )
        )
    return entries


def test_pipeline_call_count_law():
    rng = random.Random(20240906)
    problems = []
    for trial in range(10):
        event_count = rng.randint(1, 40)
        budget = rng.randint(64, 700)
        instance = single_pair_instance(
            f"cc{trial}", "ongoing sepsis, continue abx.", "improving, wean abx.", event_count
        )
        tokenizer = HeuristicTokenizer()
        rendered = render(condense(instance.interim_events))
        expected_chunks = len(plan_chunks(rendered.split("\n"), tokenizer, budget).chunks)

        backend = MockBackend(chained_script())
        config = PipelineConfig(chunk_budget=budget, tokenizer=tokenizer)
        record = run_instance(instance, config, backend)
        if record.status != "ok":
            problems.append(f"trial {trial}: {record.error}")
            continue
        if record.chunk_count != expected_chunks:
            problems.append(f"trial {trial}: chunk_count {record.chunk_count} != {expected_chunks}")
        if record.llm_call_count != expected_chunks + 2:
            problems.append(
                f"trial {trial}: {record.llm_call_count} calls for {expected_chunks} chunks"
            )
        refines = [
            entry.request for entry in backend.transcript
            if entry.request.template_id == "summarize_refine"
        ]
        if len(refines) != expected_chunks - 1:
            problems.append(f"trial {trial}: {len(refines)} refine calls")
        for index, request in enumerate(refines, start=1):
            if f"SUM-{index:03d}" not in request.prompt_text():
                problems.append(f"trial {trial}: refine {index} lost the previous summary")
    verdict("pipeline-call-count-law", problems)


# ---------------------------------------------------------------------------
# 8. Batch determinism

def test_batch_determinism():
    instances = [
        single_pair_instance(f"b{i}", f"problem {i} stable.", f"problem {i} resolving.", 1 + i % 12)
        for i in range(100)
    ]
    script = [
        ScriptEntry(response="complaint one; complaint two", template_id="chief_complaints"),
        ScriptEntry(response="first summary", template_id="summarize_initial"),
        ScriptEntry(response="revised summary", template_id="summarize_refine"),
        ScriptEntry(response="next plan text.", template_id="generate_note"),
    ]
    config = PipelineConfig(chunk_budget=96, tokenizer=HeuristicTokenizer())

    def run(parallelism):
        backend = MockBackend(script, max_in_flight=8)
        records = run_batch(instances, config, backend, parallelism=parallelism)
        rows = []
        for record in records:
            row = record.to_dict()
            row.pop("wall_time_ms")
            rows.append(row)
        return json.dumps(rows, sort_keys=True)

    problems = []
    started = time.monotonic()
    sequential = run(1)
    parallel = run(8)
    elapsed = time.monotonic() - started
    if sequential != parallel:
        problems.append("records differ between parallelism 1 and 8")
    if '"status": "failed"' in sequential:
        problems.append("batch contains failures")
    if elapsed >= 10.0:
        problems.append(f"took {elapsed:.2f}s, limit 10s")
    verdict("batch-determinism", problems)


# ---------------------------------------------------------------------------
# 9. Concept metric hand trace

def test_concept_metric_hand_trace():
    lexicon = ConceptLexicon(
        {"atrial fibrillation": "C1", "fibrillation": "C2", "sepsis": "C3"}
    )
    problems = []
    traces = [
        ("atrial fibrillation with rvr", {"C1"}),
        ("new fibrillation noted", {"C2"}),
        ("fibrillation persists, atrial fibrillation noted", {"C1", "C2"}),
        ("afebrile, no events", set()),
    ]
    for text, expected in traces:
        got = extract_concepts(text, lexicon)
        if got != expected:
            problems.append(f"{text!r}: {got} != {expected}")

    # {C1, C2} vs {C1, C3}: one concept shared on each side of two.
    score = concept_f1(
        "fibrillation persists, atrial fibrillation noted",
        "atrial fibrillation with sepsis",
        lexicon,
    )
    if score != PrScore(0.5, 0.5, 0.5):
        problems.append(f"set case scored {score}")
    verdict("concept-metric-hand-trace", problems)


# ---------------------------------------------------------------------------
# 10. CLI end to end

def test_cli_end_to_end(tmp_path):
    ws = build_workspace(tmp_path / "accept")
    problems = []

    def run_command(*args, label=""):
        code = main([str(a) for a in args])
        if code != 0:
            problems.append(f"{label or args} exited {code}")
        return code

    run_command("--config", ws.config_path, "build-dataset", label="build-dataset")
    run_command("--config", ws.config_path, "run", "--mode", "prior-baseline", label="run baseline")
    run_command("--config", ws.config_path, "run", "--mode", "generate", label="run generate")

    baseline_code = run_command(
        "--config", ws.config_path, "evaluate",
        "--predictions", ws.out / "records_prior-baseline.jsonl", label="evaluate baseline",
    )
    if baseline_code == 0:
        report = read_json(ws.out / "eval_report.json")
        for name, score in report["macro"].items():
            if abs(score["f1"] - 1.0) >= TOLERANCE:
                problems.append(f"baseline {name} f1 {score['f1']}")

    run_command("--config", ws.config_path, "evaluate", label="evaluate generate")
    run_command("--config", ws.config_path, "report", label="report")

    tsv_path = ws.out / "report" / "scores.tsv"
    if not tsv_path.is_file():
        problems.append("scores.tsv missing")
    else:
        rows = tsv_path.read_text(encoding="utf-8").splitlines()
        if len(rows) != 1 + len(ws.instance_ids):
            problems.append(f"scores.tsv has {len(rows)} rows")
        for row in rows[1:]:
            cells = row.split("\t")
            if cells[1:] != ["100.00"] * 6:
                problems.append(f"non-identity row: {row}")
    generate_records = read_jsonl(ws.out / "records_generate.jsonl")
    if any(r["status"] != "ok" for r in generate_records):
        problems.append("generate run had failures")
    verdict("cli-end-to-end", problems)
