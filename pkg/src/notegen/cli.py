"""Command-line front door: build the dataset, run the pipeline, evaluate.

Every command is driven by one INI config file plus a handful of overrides.
Exit codes: 0 success (even with per-instance failures), 1 usage or config,
2 I/O, 3 backend protocol.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import click

from .condense import condense, render
from .config import (
    RunConfig,
    build_backend,
    build_embedder,
    build_lexicon,
    build_pipeline_config,
    load_config,
    validate,
)
from .corpus import build_instances, compute_stats
from .errors import (
    BudgetError,
    ConfigError,
    ProtocolError,
    RenderError,
    RowParseError,
    SchemaError,
    ScriptError,
    TransportError,
)
from .ingest import filter_attending_progress_notes, parse_chart_events, parse_notes
from .metrics import aggregate, report_from_dict, score_instance
from .pipeline import prior_baseline_record, record_from_dict, run_batch
from .reporting import render_eval_summary, render_figures, render_stats_table, scores_tsv
from .storage import (
    atomic_write_text,
    config_hash,
    read_instances,
    read_json,
    read_jsonl,
    stats_from_dict,
    stats_to_dict,
    write_instances,
    write_json,
    write_jsonl,
    write_manifest,
)

log = logging.getLogger("notegen")

_LOG_LEVELS = ("debug", "info", "warning", "error")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="INI config file.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Override output directory.")
@click.option("--resume", is_flag=True, help="Skip work whose outputs already exist.")
@click.option("--parallelism", type=int, default=None, help="Override worker count.")
@click.option("--log-level", type=click.Choice(_LOG_LEVELS), default="info", show_default=True)
@click.pass_context
def cli(ctx, config_path, out_dir, resume, parallelism, log_level):
    """Generate next progress-note sections from chart data and score them."""
    logging.basicConfig(level=getattr(logging, log_level.upper()), format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj.update(
        config_path=config_path,
        out_dir=out_dir,
        resume=resume,
        parallelism=parallelism,
    )


def _load(ctx, need_inputs: bool = False) -> RunConfig:
    opts = ctx.obj
    if not opts.get("config_path"):
        raise ConfigError("a config file is required (--config PATH)")
    config = load_config(opts["config_path"])
    if opts.get("out_dir"):
        config.out_dir = opts["out_dir"]
    if opts.get("parallelism") is not None:
        config.parallelism = opts["parallelism"]
    validate(config, need_inputs=need_inputs)
    return config


def _refuse_on_config_change(manifest_path: Path, digest: str) -> None:
    if not manifest_path.is_file():
        raise ConfigError(
            f"refusing --resume: no manifest at {manifest_path} to prove the previous config matched"
        )
    recorded = read_json(manifest_path).get("config_hash")
    if recorded != digest:
        raise ConfigError(
            f"refusing --resume: config changed since {manifest_path} was written "
            f"(recorded {recorded}, current {digest})"
        )


def _warn_skipped(label: str, errors) -> None:
    for err in errors[:5]:
        log.warning("skipped %s row %d: %s", label, err.row, err.reason)
    if len(errors) > 5:
        log.warning("skipped %d further %s rows", len(errors) - 5, label)


@cli.command("build-dataset")
@click.pass_context
def cmd_build_dataset(ctx):
    """Parse the raw exports and write annotation instances plus statistics."""
    config = _load(ctx, need_inputs=True)
    out = Path(config.out_dir)
    instances_path = out / "instances.jsonl"
    stats_path = out / "dataset_stats.json"
    manifest_path = out / "build_manifest.json"
    digest = config_hash(config.resolved)

    if ctx.obj["resume"] and instances_path.is_file():
        _refuse_on_config_change(manifest_path, digest)
        click.echo(f"instances already built at {instances_path}; nothing to do")
        return

    events, event_errors = parse_chart_events(config.chart_events_path, config.chart_schema, mode="lenient")
    notes, note_errors = parse_notes(config.notes_path, config.notes_schema, mode="lenient")
    _warn_skipped("chart-event", event_errors)
    _warn_skipped("note", note_errors)

    attending = filter_attending_progress_notes(notes, config.attending_patterns)
    instances = build_instances(attending, events, header_patterns=config.header_patterns)
    if not instances:
        log.warning("no annotation instances found (%d notes, %d attending)", len(notes), len(attending))
    stats = compute_stats(instances)

    out.mkdir(parents=True, exist_ok=True)
    write_instances(instances_path, instances)
    write_json(stats_path, stats_to_dict(stats))
    write_manifest(
        manifest_path,
        digest,
        note_count=len(notes),
        attending_note_count=len(attending),
        event_count=len(events),
        instance_count=len(instances),
        skipped_rows=len(event_errors) + len(note_errors),
    )
    click.echo(render_stats_table(stats))
    click.echo(f"\nwrote {len(instances)} instances to {instances_path}")


@cli.command("stats")
@click.option("--instances", "instances_path", type=click.Path(), default=None, help="Instances file (default: <out>/instances.jsonl).")
@click.pass_context
def cmd_stats(ctx, instances_path):
    """Print the dataset statistics table for an instances file."""
    if instances_path is None:
        config = _load(ctx)
        instances_path = Path(config.out_dir) / "instances.jsonl"
    instances = read_instances(instances_path)
    click.echo(render_stats_table(compute_stats(instances)))


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def _safe_name(instance_id: str) -> str:
    return _UNSAFE.sub("_", instance_id)


@cli.command("run")
@click.option("--mode", type=click.Choice(["generate", "prior-baseline"]), default="generate", show_default=True)
@click.option("--instances", "instances_path", type=click.Path(), default=None, help="Instances file (default: <out>/instances.jsonl).")
@click.option("--dump-condensed", is_flag=True, help="Also write each instance's condensed chart text.")
@click.pass_context
def cmd_run(ctx, mode, instances_path, dump_condensed):
    """Produce one generation record per instance (generate or prior-baseline)."""
    config = _load(ctx)
    out = Path(config.out_dir)
    if instances_path is None:
        instances_path = out / "instances.jsonl"
    records_path = out / f"records_{mode}.jsonl"
    manifest_path = out / f"run_manifest_{mode}.json"
    digest = config_hash(config.resolved)

    instances = read_instances(instances_path)

    existing: dict[str, dict] = {}
    if ctx.obj["resume"] and records_path.is_file():
        _refuse_on_config_change(manifest_path, digest)
        existing = {row["instance_id"]: row for row in read_jsonl(records_path)}
    todo = [inst for inst in instances if inst.instance_id not in existing]

    if dump_condensed:
        condensed_dir = out / "condensed"
        condensed_dir.mkdir(parents=True, exist_ok=True)
        for inst in instances:
            text = render(condense(inst.interim_events))
            (condensed_dir / f"{_safe_name(inst.instance_id)}.txt").write_text(text + "\n", encoding="utf-8")

    if mode == "prior-baseline":
        new_records = [prior_baseline_record(inst) for inst in todo]
        backend_identity = "prior-baseline (no backend)"
    else:
        backend = build_backend(config)
        pipeline_config = build_pipeline_config(config)
        new_records = run_batch(todo, pipeline_config, backend, parallelism=config.parallelism)
        backend_identity = backend.describe()

    by_id = {record.instance_id: record.to_dict() for record in new_records}
    rows = [existing.get(inst.instance_id) or by_id[inst.instance_id] for inst in instances]
    failures = sum(1 for row in rows if row.get("status") != "ok")

    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(records_path, rows)
    write_manifest(
        manifest_path,
        digest,
        backend_identity=backend_identity,
        mode=mode,
        record_count=len(rows),
        failures=failures,
        skipped_existing=len(existing),
    )
    click.echo(
        f"wrote {len(rows)} records to {records_path} "
        f"({len(new_records)} new, {len(existing)} reused, {failures} failed)"
    )


@cli.command("evaluate")
@click.option("--predictions", "predictions_path", type=click.Path(), default=None, help="Records file (default: <out>/records_generate.jsonl).")
@click.option("--instances", "instances_path", type=click.Path(), default=None, help="Instances file (default: <out>/instances.jsonl).")
@click.pass_context
def cmd_evaluate(ctx, predictions_path, instances_path):
    """Score predicted sections against the gold next sections."""
    config = _load(ctx)
    out = Path(config.out_dir)
    if predictions_path is None:
        predictions_path = out / "records_generate.jsonl"
    if instances_path is None:
        instances_path = out / "instances.jsonl"
    report_path = out / "eval_report.json"
    manifest_path = out / "eval_manifest.json"
    digest = config_hash(config.resolved)

    if ctx.obj["resume"] and report_path.is_file():
        _refuse_on_config_change(manifest_path, digest)
        click.echo(f"evaluation already written to {report_path}; nothing to do")
        return

    instances = read_instances(instances_path)
    gold = {inst.instance_id: inst.next_aandp.text for inst in instances}
    records = [record_from_dict(row) for row in read_jsonl(predictions_path)]
    for record in records:
        if record.instance_id not in gold:
            raise ConfigError(
                f"prediction for unknown instance_id {record.instance_id!r} "
                f"(not present in {instances_path})"
            )

    embedder = build_embedder(config)
    lexicon = build_lexicon(config)
    scored = []
    failures = 0
    for record in records:
        if record.status != "ok":
            failures += 1
            continue
        scored.append(
            score_instance(
                record.instance_id,
                record.predicted_aandp,
                gold[record.instance_id],
                embedder=embedder,
                lexicon=lexicon,
                stemming=config.stemming,
                drop_stopwords=config.drop_stopwords,
            )
        )
    report = aggregate(scored, failures=failures)

    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "eval_scores.jsonl", [s.to_dict() for s in scored])
    write_json(report_path, report.to_dict())
    summary = render_eval_summary(report)
    atomic_write_text(out / "eval_summary.txt", summary + "\n")
    write_manifest(
        manifest_path,
        digest,
        predictions=str(predictions_path),
        scored=len(scored),
        failures=failures,
    )
    click.echo(summary)


@cli.command("report")
@click.option("--evaluation", "evaluation_path", type=click.Path(), default=None, help="Evaluation report JSON (default: <out>/eval_report.json).")
@click.option("--stats", "stats_path", type=click.Path(), default=None, help="Dataset stats JSON (default: <out>/dataset_stats.json when present).")
@click.pass_context
def cmd_report(ctx, evaluation_path, stats_path):
    """Render the evaluation into a TSV, a text summary, and figures."""
    config = _load(ctx)
    out = Path(config.out_dir)
    if evaluation_path is None:
        evaluation_path = out / "eval_report.json"
    stats = None
    if stats_path is None:
        default_stats = out / "dataset_stats.json"
        if default_stats.is_file():
            stats = stats_from_dict(read_json(default_stats))
    else:
        stats = stats_from_dict(read_json(stats_path))

    report = report_from_dict(read_json(evaluation_path))
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    atomic_write_text(report_dir / "scores.tsv", scores_tsv(report))
    summary = render_eval_summary(report)
    if stats is not None:
        summary = render_stats_table(stats) + "\n\n" + summary
    atomic_write_text(report_dir / "summary.txt", summary + "\n")
    figures = render_figures(report, report_dir, stats=stats)
    click.echo(f"report written to {report_dir} ({len(figures)} figures)")


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="notegen")
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ConfigError, SchemaError, RenderError, ScriptError, BudgetError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (TransportError, ProtocolError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except (RowParseError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
