"""Per-instance generation flow and batch execution.

For each instance: condense interim events, plan chunks, pull chief
complaints from the prior assessment and plan, summarize the chunks
iteratively (initial prompt for the first chunk, refine prompt carrying the
previous summary for the rest), then generate the next assessment and plan
from the prior text plus the final summary. A prior-baseline mode simply
replays the prior text as the prediction.
"""

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .condense import ChunkPlan, HeuristicTokenizer, Tokenizer, condense, plan_chunks, render
from .corpus import AnnotationInstance
from .llm import LlmRequest, PromptLibrary

logger = logging.getLogger(__name__)

_COMPLAINT_SPLIT = re.compile(r"[;\n]")
# Slot values must be non-empty; a prior note with no extractable complaints
# still has to fill the slot somehow.
_NO_COMPLAINTS = "none documented"


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "local-model"
    temperature: float = 0.0
    chunk_budget: int = 1200
    complaints_max_tokens: int = 128
    summary_max_tokens: int = 512
    note_max_tokens: int = 768
    tokenizer: Tokenizer = field(default_factory=HeuristicTokenizer)
    library: PromptLibrary = field(default_factory=PromptLibrary)


@dataclass(frozen=True)
class SummaryState:
    summary_text: str
    chunks_consumed: int
    # Summary after each consumed chunk; the last one equals summary_text.
    history: tuple[str, ...] = ()


@dataclass(frozen=True)
class GenerationRecord:
    instance_id: str
    mode: str = "generate"
    status: str = "ok"
    chief_complaints: tuple[str, ...] = ()
    chunk_count: int = 0
    intermediate_summaries: tuple[str, ...] = ()
    final_summary: str = ""
    predicted_aandp: str = ""
    llm_call_count: int = 0
    transcript_ref: str = ""
    wall_time_ms: int = 0
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "mode": self.mode,
            "status": self.status,
            "chief_complaints": list(self.chief_complaints),
            "chunk_count": self.chunk_count,
            "intermediate_summaries": list(self.intermediate_summaries),
            "final_summary": self.final_summary,
            "predicted_aandp": self.predicted_aandp,
            "llm_call_count": self.llm_call_count,
            "transcript_ref": self.transcript_ref,
            "wall_time_ms": self.wall_time_ms,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }


def record_from_dict(raw: dict) -> GenerationRecord:
    return GenerationRecord(
        instance_id=raw["instance_id"],
        mode=raw.get("mode", "generate"),
        status=raw.get("status", "ok"),
        chief_complaints=tuple(raw.get("chief_complaints", ())),
        chunk_count=raw.get("chunk_count", 0),
        intermediate_summaries=tuple(raw.get("intermediate_summaries", ())),
        final_summary=raw.get("final_summary", ""),
        predicted_aandp=raw.get("predicted_aandp", ""),
        llm_call_count=raw.get("llm_call_count", 0),
        transcript_ref=raw.get("transcript_ref", ""),
        wall_time_ms=raw.get("wall_time_ms", 0),
        failed_stage=raw.get("failed_stage"),
        error=raw.get("error"),
    )


class _InstrumentedBackend:
    """Stamps per-instance request ids and counts calls."""

    def __init__(self, inner, instance_id: str):
        self._inner = inner
        self._instance_id = instance_id
        self.calls = 0

    def complete(self, request: LlmRequest):
        self.calls += 1
        stamped = replace(request, request_id=f"{self._instance_id}#{self.calls}")
        return self._inner.complete(stamped)


def _request(config: PipelineConfig, template_id: str, slots: dict, max_tokens: int) -> LlmRequest:
    messages = config.library.render(template_id, slots)
    return LlmRequest(
        model=config.model,
        messages=tuple(messages),
        max_tokens=max_tokens,
        temperature=config.temperature,
        template_id=template_id,
    )


def _complaints_slot(complaints: Sequence[str]) -> str:
    return "; ".join(complaints) if complaints else _NO_COMPLAINTS


def extract_chief_complaints(prior_aandp: str, backend, config: Optional[PipelineConfig] = None) -> list[str]:
    """Ask the backend for the prior note's complaints; split the reply on
    semicolons and newlines, trim, drop empties, keep order."""
    if not prior_aandp:
        raise ValueError("prior assessment and plan must be non-empty")
    config = config or PipelineConfig()
    request = _request(
        config, "chief_complaints", {"prior_aandp": prior_aandp}, config.complaints_max_tokens
    )
    response = backend.complete(request)
    complaints = [part.strip() for part in _COMPLAINT_SPLIT.split(response.text)]
    complaints = [c for c in complaints if c]
    if not complaints:
        logger.warning("empty chief-complaint response; summarization runs unguided")
    return complaints


def summarize_chart(
    chunks: ChunkPlan,
    complaints: Sequence[str],
    backend,
    config: Optional[PipelineConfig] = None,
) -> SummaryState:
    """First chunk seeds the summary, later chunks refine it in order."""
    if not chunks.chunks:
        raise ValueError("summarization needs at least one chunk")
    config = config or PipelineConfig()
    slot = _complaints_slot(complaints)
    history: list[str] = []
    summary = ""
    for index, chunk in enumerate(chunks.chunks):
        if index == 0:
            request = _request(
                config,
                "summarize_initial",
                {"complaints": slot, "chunk": chunk},
                config.summary_max_tokens,
            )
        else:
            request = _request(
                config,
                "summarize_refine",
                {"complaints": slot, "previous_summary": summary, "chunk": chunk},
                config.summary_max_tokens,
            )
        summary = backend.complete(request).text
        history.append(summary)
    return SummaryState(
        summary_text=summary, chunks_consumed=len(history), history=tuple(history)
    )


def generate_next_aandp(
    prior_aandp: str, summary: str, backend, config: Optional[PipelineConfig] = None
) -> str:
    """Prior text plus chart summary in, predicted next section out,
    verbatim with no post-editing."""
    if not prior_aandp:
        raise ValueError("prior assessment and plan must be non-empty")
    if not summary:
        raise ValueError("chart summary must be non-empty")
    config = config or PipelineConfig()
    request = _request(
        config,
        "generate_note",
        {"prior_aandp": prior_aandp, "summary": summary},
        config.note_max_tokens,
    )
    return backend.complete(request).text


def prior_baseline(instance: AnnotationInstance) -> str:
    return instance.prior_aandp.text


def prior_baseline_record(instance: AnnotationInstance) -> GenerationRecord:
    return GenerationRecord(
        instance_id=instance.instance_id,
        mode="prior-baseline",
        predicted_aandp=prior_baseline(instance),
        transcript_ref=instance.instance_id,
    )


def run_instance(instance: AnnotationInstance, config: PipelineConfig, backend) -> GenerationRecord:
    """Full flow for one instance. Any stage error yields a failed record
    carrying the stage name and cause; nothing propagates."""
    started = time.monotonic()
    counting = _InstrumentedBackend(backend, instance.instance_id)
    stage = "condense"
    complaints: list[str] = []
    plan: Optional[ChunkPlan] = None
    try:
        chart = condense(instance.interim_events)
        rendered = render(chart)
        stage = "plan_chunks"
        lines = rendered.split("\n") if rendered else []
        plan = plan_chunks(lines, config.tokenizer, config.chunk_budget)
        stage = "extract_chief_complaints"
        complaints = extract_chief_complaints(instance.prior_aandp.text, counting, config)
        stage = "summarize_chart"
        state = summarize_chart(plan, complaints, counting, config)
        stage = "generate_next_aandp"
        predicted = generate_next_aandp(
            instance.prior_aandp.text, state.summary_text, counting, config
        )
    except Exception as exc:
        logger.warning("instance %s failed at %s: %s", instance.instance_id, stage, exc)
        return GenerationRecord(
            instance_id=instance.instance_id,
            status="failed",
            chief_complaints=tuple(complaints),
            chunk_count=len(plan.chunks) if plan else 0,
            llm_call_count=counting.calls,
            transcript_ref=instance.instance_id,
            wall_time_ms=int((time.monotonic() - started) * 1000),
            failed_stage=stage,
            error=f"{type(exc).__name__}: {exc}",
        )
    return GenerationRecord(
        instance_id=instance.instance_id,
        chief_complaints=tuple(complaints),
        chunk_count=len(plan.chunks),
        intermediate_summaries=state.history,
        final_summary=state.summary_text,
        predicted_aandp=predicted,
        llm_call_count=counting.calls,
        transcript_ref=instance.instance_id,
        wall_time_ms=int((time.monotonic() - started) * 1000),
    )


def run_batch(
    instances: Iterable[AnnotationInstance],
    config: PipelineConfig,
    backend,
    parallelism: int = 1,
) -> list[GenerationRecord]:
    """One record per instance, in input order, failures isolated."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    instances = list(instances)
    if parallelism == 1 or len(instances) <= 1:
        return [run_instance(inst, config, backend) for inst in instances]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda inst: run_instance(inst, config, backend), instances))
