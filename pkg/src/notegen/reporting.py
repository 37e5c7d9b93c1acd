"""Human-readable tables and rendered figures for dataset stats and scores.

Scores are displayed multiplied by 100 (the usual convention for ROUGE-style
tables); the underlying JSON artifacts keep raw [0, 1] values.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .corpus import DatasetStats
from .metrics import METRIC_NAMES, EvalReport

_METRIC_LABELS = {
    "rouge1": "ROUGE-1",
    "rouge2": "ROUGE-2",
    "rougeL": "ROUGE-L",
    "rougeLsum": "ROUGE-Lsum",
    "embed": "Embed F1",
    "concept": "Concept F1",
}


def _row(label, summary):
    return f"{label:<34} {summary.mean:>10.1f} {summary.median:>10.1f} {summary.sd:>10.1f}"


def render_stats_table(stats: DatasetStats) -> str:
    lines = [
        f"{'Patients':<34} {stats.patient_count:>10}",
        f"{'Annotation instances':<34} {stats.instance_count:>10}",
        "",
        f"{'':<34} {'mean':>10} {'median':>10} {'sd':>10}",
        (
            f"{'Instances per patient':<34} "
            f"{stats.instances_per_patient_mean:>10.1f} "
            f"{stats.instances_per_patient_median:>10.1f} {'':>10}"
        ),
        _row("Interim chart rows", stats.interim_rows),
        _row("Prior A&P words", stats.prior_words),
        _row("Next A&P words", stats.next_words),
        f"{'Instances with added text':<34} {stats.added_count:>10}",
        _row("  next A&P words (added subset)", stats.added_next_words),
        f"{'Instances with reduced text':<34} {stats.reduced_count:>10}",
        _row("  next A&P words (reduced subset)", stats.reduced_next_words),
    ]
    return "\n".join(lines)


def render_eval_summary(report: EvalReport) -> str:
    lines = [
        f"Instances scored: {report.instance_count}    failures: {report.failures}",
        "",
        f"{'metric':<12} {'P':>8} {'R':>8} {'F1':>8} {'n':>6}",
    ]
    for name in METRIC_NAMES:
        label = _METRIC_LABELS.get(name, name)
        score = report.macro.get(name)
        count = report.counts.get(name, 0)
        if score is None:
            lines.append(f"{label:<12} {'-':>8} {'-':>8} {'-':>8} {count:>6}")
        else:
            lines.append(
                f"{label:<12} {100 * score.precision:>8.2f} "
                f"{100 * score.recall:>8.2f} {100 * score.f1:>8.2f} {count:>6}"
            )
    return "\n".join(lines)


def scores_tsv(report: EvalReport) -> str:
    """Per-instance F1 values x100, tab-separated, one header row."""
    header = ["instance_id"] + [f"{name}_f1" for name in METRIC_NAMES]
    lines = ["\t".join(header)]
    for scores in report.instances:
        cells = [scores.instance_id]
        for name in METRIC_NAMES:
            value = scores.get(name)
            cells.append("" if value is None else f"{100 * value.f1:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def render_figures(report: EvalReport, out_dir, stats: DatasetStats = None) -> list:
    """Write the report figures as PNG files; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    present = [name for name in METRIC_NAMES if name in report.macro]
    if present:
        fig, ax = plt.subplots(figsize=(7, 4))
        values = [100 * report.macro[name].f1 for name in present]
        labels = [_METRIC_LABELS[name] for name in present]
        ax.bar(labels, values, color="#4878a8")
        ax.set_ylabel("macro F1 (x100)")
        ax.set_ylim(0, 105)
        ax.set_title("Macro scores")
        for tick in ax.get_xticklabels():
            tick.set_rotation(20)
        fig.tight_layout()
        path = out_dir / "fig_macro_scores.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    rouge1 = [s.rouge1.f1 * 100 for s in report.instances if s.rouge1 is not None]
    if rouge1:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.hist(rouge1, bins=20, range=(0, 100), color="#76a56f", edgecolor="white")
        ax.set_xlabel("ROUGE-1 F1 (x100)")
        ax.set_ylabel("instances")
        ax.set_title("Per-instance ROUGE-1 distribution")
        fig.tight_layout()
        path = out_dir / "fig_rouge1_distribution.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if stats is not None and stats.instance_count:
        fig, ax = plt.subplots(figsize=(7, 4))
        groups = [
            ("prior", stats.prior_words),
            ("next", stats.next_words),
            ("next (added)", stats.added_next_words),
            ("next (reduced)", stats.reduced_next_words),
        ]
        labels = [g[0] for g in groups]
        means = [g[1].mean for g in groups]
        sds = [g[1].sd for g in groups]
        ax.bar(labels, means, yerr=sds, capsize=4, color="#b08968")
        ax.set_ylabel("words")
        ax.set_title("Section word counts (mean +/- sd)")
        fig.tight_layout()
        path = out_dir / "fig_word_counts.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
