"""Turn interim chart events into compact text and token-budgeted chunks.

The condensation format mentions each timestamp once as a bracketed header
line and lists the associated rows under it, so repeated timestamps never
inflate the text handed to the model. Chunking is greedy first-fit over
rendered lines against a pluggable token estimator.
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Protocol

from .errors import BudgetError
from .ingest import ChartEvent

logger = logging.getLogger(__name__)

TRUNCATION_MARKER = "…[truncated]"


class Tokenizer(Protocol):
    def estimate(self, text: str) -> int: ...


class HeuristicTokenizer:
    """ceil(utf-8 bytes / 4): the usual subword rule of thumb.

    Deliberately overestimates for plain ASCII prose so budget checks fail
    safe. Swap in a model-exact tokenizer via the same protocol if you have
    one.
    """

    def estimate(self, text: str) -> int:
        if not text:
            return 0
        # errors="replace" keeps unpaired surrogates from raising; they count
        # as the replacement character's bytes.
        return (len(text.encode("utf-8", errors="replace")) + 3) // 4


@dataclass(frozen=True)
class CondensedChart:
    # Each block is (timestamp, entries); timestamps strictly increasing and
    # unique across blocks, entry strings look like "label: value unit".
    blocks: tuple[tuple[datetime, tuple[str, ...]], ...]

    @property
    def entry_count(self) -> int:
        return sum(len(entries) for _, entries in self.blocks)


@dataclass(frozen=True)
class ChunkPlan:
    chunks: tuple[str, ...]
    estimates: tuple[int, ...]
    budget: int
    warnings: tuple[str, ...] = field(default=())


def _format_value(event: ChartEvent) -> str:
    if event.value_text:
        return event.value_text
    if event.value_num is not None:
        # Up to 4 significant digits; integral values keep their plain form.
        return f"{event.value_num:.4g}"
    return ""


def _entry_text(event: ChartEvent) -> str:
    value = _format_value(event)
    tail = " ".join(part for part in (value, event.unit or "") if part)
    return f"{event.item_label}: {tail}" if tail else f"{event.item_label}:"


def condense(events: Iterable[ChartEvent]) -> CondensedChart:
    """Group events by charttime, ascending, each timestamp exactly once.

    Within a block, entries sort by item_label with input order breaking
    ties, so duplicates are retained and output is deterministic.
    """
    by_time: dict[datetime, list[tuple[str, int, str]]] = {}
    for order, event in enumerate(events):
        by_time.setdefault(event.charttime, []).append(
            (event.item_label, order, _entry_text(event))
        )
    blocks = []
    for ts in sorted(by_time):
        rows = sorted(by_time[ts], key=lambda row: (row[0], row[1]))
        blocks.append((ts, tuple(text for _, _, text in rows)))
    return CondensedChart(blocks=tuple(blocks))


def render(chart: CondensedChart) -> str:
    """One "[YYYY-MM-DD HH:MM]" header per block, entries indented two
    spaces, no trailing newline."""
    lines: list[str] = []
    for ts, entries in chart.blocks:
        lines.append(f"[{ts:%Y-%m-%d %H:%M}]")
        lines.extend(f"  {entry}" for entry in entries)
    return "\n".join(lines)


def _truncate_line(line: str, tokenizer: Tokenizer, budget: int) -> str:
    """Longest prefix of `line` such that prefix+marker fits the budget."""
    if tokenizer.estimate(TRUNCATION_MARKER) > budget:
        raise BudgetError(
            f"budget {budget} cannot hold even the truncation marker"
        )
    lo, hi = 0, len(line)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tokenizer.estimate(line[:mid] + TRUNCATION_MARKER) <= budget:
            lo = mid
        else:
            hi = mid - 1
    # Guard against non-monotone estimators: walk back until it truly fits.
    while lo > 0 and tokenizer.estimate(line[:lo] + TRUNCATION_MARKER) > budget:
        lo -= 1
    return line[:lo] + TRUNCATION_MARKER


def plan_chunks(
    rendered_lines: list[str], tokenizer: Tokenizer, budget: int
) -> ChunkPlan:
    """Greedy first-fit over lines; lines are atomic.

    A line that alone exceeds the budget is hard-truncated with a trailing
    marker and a warning is recorded on the plan; otherwise concatenating
    the chunks reproduces the input line-for-line.
    """
    if budget < 1:
        raise BudgetError(f"chunk budget must be positive, got {budget}")
    warnings: list[str] = []
    prepared: list[str] = []
    for index, line in enumerate(rendered_lines):
        if tokenizer.estimate(line) > budget:
            prepared.append(_truncate_line(line, tokenizer, budget))
            message = (
                f"line {index + 1} estimate {tokenizer.estimate(line)} exceeds "
                f"budget {budget}; hard-truncated"
            )
            warnings.append(message)
            logger.warning(message)
        else:
            prepared.append(line)

    chunks: list[str] = []
    estimates: list[int] = []
    current: list[str] = []
    for line in prepared:
        if current:
            candidate = "\n".join(current + [line])
            if tokenizer.estimate(candidate) > budget:
                chunks.append("\n".join(current))
                current = [line]
                continue
        current.append(line)
    if current:
        chunks.append("\n".join(current))
    estimates = [tokenizer.estimate(chunk) for chunk in chunks]
    return ChunkPlan(
        chunks=tuple(chunks),
        estimates=tuple(estimates),
        budget=budget,
        warnings=tuple(warnings),
    )
