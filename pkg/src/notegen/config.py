"""Declarative run configuration.

One INI file drives every command. Multi-valued keys are newline-separated.
NOTEGEN_LLM_BASE and NOTEGEN_LLM_TOKEN override the backend endpoint and
token from the environment; the resolved values (minus the token) feed the
config hash that --resume checks against.
"""

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .condense import HeuristicTokenizer
from .errors import ConfigError
from .ingest import CHART_EVENT_FIELDS, NOTE_FIELDS, SchemaMap
from .llm import HttpBackend, MockBackend, PromptLibrary, PromptTemplate, TEMPLATE_IDS, load_script
from .metrics import HttpEmbedder, OneHotEmbedder, load_lexicon
from .pipeline import PipelineConfig

ENV_BASE = "NOTEGEN_LLM_BASE"
ENV_TOKEN = "NOTEGEN_LLM_TOKEN"

_DEFAULT_ATTENDING = ["physician attending progress"]


def _split_lines(value: str) -> list[str]:
    return [line.strip() for line in value.splitlines() if line.strip()]


@dataclass
class RunConfig:
    chart_events_path: str = ""
    notes_path: str = ""
    chart_schema: Optional[SchemaMap] = None
    notes_schema: Optional[SchemaMap] = None
    attending_patterns: list = field(default_factory=lambda: list(_DEFAULT_ATTENDING))
    header_patterns: Optional[list] = None
    chunk_budget: int = 1200
    llm_mode: str = "mock"
    base_url: str = ""
    auth_token: str = ""
    model: str = "local-model"
    mock_script_path: str = ""
    context_size: int = 2048
    timeout: float = 30.0
    retries: int = 2
    max_in_flight: int = 4
    temperature: float = 0.0
    complaints_max_tokens: int = 128
    summary_max_tokens: int = 512
    note_max_tokens: int = 768
    template_paths: dict = field(default_factory=dict)
    lexicon_path: str = ""
    concept_metric: str = "auto"  # auto | on | off
    embedder_kind: str = "none"  # none | one-hot | http
    embed_base_url: str = ""
    one_hot_capacity: int = 4096
    stemming: bool = False
    drop_stopwords: bool = False
    parallelism: int = 1
    out_dir: str = "out"
    resolved: dict = field(default_factory=dict)


def _schema_from_section(section) -> SchemaMap:
    reserved = ("date_format", "delimiter")
    columns = {k: v for k, v in section.items() if k not in reserved}
    return SchemaMap(
        columns=columns,
        date_format=section.get("date_format", "iso"),
        delimiter=section.get("delimiter", ","),
    )


def load_config(path) -> RunConfig:
    """Parse and resolve the INI file; raises ConfigError on anything the
    parser or the value checks reject."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc

    config = RunConfig()

    def get(section, option, fallback):
        if parser.has_option(section, option):
            return parser.get(section, option)
        return fallback

    def getint(section, option, fallback):
        try:
            return parser.getint(section, option, fallback=fallback)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option} must be an integer") from exc

    def getfloat(section, option, fallback):
        try:
            return parser.getfloat(section, option, fallback=fallback)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option} must be a number") from exc

    def getbool(section, option, fallback):
        try:
            return parser.getboolean(section, option, fallback=fallback)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option} must be a boolean") from exc

    config.chart_events_path = get("inputs", "chart_events", "")
    config.notes_path = get("inputs", "notes", "")
    if parser.has_section("chart_schema"):
        config.chart_schema = _schema_from_section(parser["chart_schema"])
    if parser.has_section("notes_schema"):
        config.notes_schema = _schema_from_section(parser["notes_schema"])

    if parser.has_option("corpus", "attending_patterns"):
        config.attending_patterns = _split_lines(parser.get("corpus", "attending_patterns"))
    if parser.has_option("corpus", "aandp_header_patterns"):
        config.header_patterns = _split_lines(parser.get("corpus", "aandp_header_patterns"))

    config.chunk_budget = getint("condense", "chunk_budget", config.chunk_budget)

    config.llm_mode = get("llm", "mode", config.llm_mode).strip().lower()
    config.base_url = get("llm", "base_url", config.base_url).strip()
    config.auth_token = get("llm", "auth_token", config.auth_token).strip()
    config.model = get("llm", "model", config.model).strip()
    config.mock_script_path = get("llm", "mock_script", config.mock_script_path).strip()
    config.context_size = getint("llm", "context_size", config.context_size)
    config.timeout = getfloat("llm", "timeout", config.timeout)
    config.retries = getint("llm", "retries", config.retries)
    config.max_in_flight = getint("llm", "max_in_flight", config.max_in_flight)
    config.temperature = getfloat("llm", "temperature", config.temperature)
    config.complaints_max_tokens = getint("llm", "complaints_max_tokens", config.complaints_max_tokens)
    config.summary_max_tokens = getint("llm", "summary_max_tokens", config.summary_max_tokens)
    config.note_max_tokens = getint("llm", "note_max_tokens", config.note_max_tokens)

    if parser.has_section("templates"):
        config.template_paths = dict(parser["templates"].items())

    config.lexicon_path = get("eval", "lexicon", config.lexicon_path).strip()
    config.concept_metric = get("eval", "concept", config.concept_metric).strip().lower()
    config.embedder_kind = get("eval", "embedder", config.embedder_kind).strip().lower()
    config.embed_base_url = get("eval", "embed_base_url", config.embed_base_url).strip()
    config.one_hot_capacity = getint("eval", "one_hot_capacity", config.one_hot_capacity)
    config.stemming = getbool("eval", "stemming", config.stemming)
    config.drop_stopwords = getbool("eval", "drop_stopwords", config.drop_stopwords)

    config.parallelism = getint("pipeline", "parallelism", config.parallelism)
    config.out_dir = get("output", "dir", config.out_dir)

    # Environment wins over the file for backend reachability.
    env_base = os.environ.get(ENV_BASE)
    if env_base:
        config.base_url = env_base.strip()
        config.llm_mode = "http"
    env_token = os.environ.get(ENV_TOKEN)
    if env_token:
        config.auth_token = env_token

    config.resolved = _resolved_sections(parser, config)
    return config


def _resolved_sections(parser, config: RunConfig) -> dict:
    """Snapshot of the post-override configuration used for hashing.

    Execution knobs (parallelism, output dir, auth token) stay out of the
    hash: results are contractually independent of them, so changing them
    must not invalidate --resume.
    """
    resolved = {s: dict(parser[s].items()) for s in parser.sections()}
    resolved.pop("pipeline", None)
    resolved.pop("output", None)
    llm = resolved.setdefault("llm", {})
    llm["mode"] = config.llm_mode
    llm["base_url"] = config.base_url
    llm.pop("auth_token", None)
    return resolved


def validate(config: RunConfig, need_inputs: bool = False) -> None:
    if config.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if config.chunk_budget < 64:
        raise ConfigError("chunk_budget must be >= 64")
    if config.llm_mode not in ("mock", "http"):
        raise ConfigError(f"llm mode must be mock or http, not {config.llm_mode!r}")
    if config.llm_mode == "http" and not config.base_url:
        raise ConfigError("llm mode http needs base_url (or NOTEGEN_LLM_BASE)")
    if config.llm_mode == "mock" and not config.mock_script_path:
        raise ConfigError("llm mode mock needs mock_script")
    if config.concept_metric not in ("auto", "on", "off"):
        raise ConfigError("eval concept must be auto, on, or off")
    if config.concept_metric == "on" and not config.lexicon_path:
        raise ConfigError("concept metric is on but no lexicon is configured")
    if config.embedder_kind not in ("none", "one-hot", "http"):
        raise ConfigError("eval embedder must be none, one-hot, or http")
    if config.embedder_kind == "http" and not config.embed_base_url:
        raise ConfigError("embedder http needs embed_base_url")
    for template_id, template_path in config.template_paths.items():
        if template_id not in TEMPLATE_IDS:
            raise ConfigError(f"unknown template id {template_id!r} in [templates]")
        if not Path(template_path).is_file():
            raise ConfigError(f"template file not found: {template_path}")
    if config.lexicon_path and not Path(config.lexicon_path).is_file():
        raise ConfigError(f"lexicon file not found: {config.lexicon_path}")
    if config.llm_mode == "mock" and not Path(config.mock_script_path).is_file():
        raise ConfigError(f"mock script not found: {config.mock_script_path}")
    if need_inputs:
        if not config.chart_events_path or not Path(config.chart_events_path).is_file():
            raise ConfigError(f"chart events file not found: {config.chart_events_path!r}")
        if not config.notes_path or not Path(config.notes_path).is_file():
            raise ConfigError(f"notes file not found: {config.notes_path!r}")
        if config.chart_schema is None:
            raise ConfigError("config needs a [chart_schema] section")
        if config.notes_schema is None:
            raise ConfigError("config needs a [notes_schema] section")
        config.chart_schema.require(CHART_EVENT_FIELDS)
        config.notes_schema.require(NOTE_FIELDS)


def build_library(config: RunConfig) -> PromptLibrary:
    overrides = {}
    for template_id, template_path in config.template_paths.items():
        text = Path(template_path).read_text(encoding="utf-8")
        overrides[template_id] = PromptTemplate.from_text(template_id, text)
    return PromptLibrary(overrides) if overrides else PromptLibrary()


def build_backend(config: RunConfig):
    common = {
        "context_size": config.context_size,
        "tokenizer": HeuristicTokenizer(),
        "max_in_flight": config.max_in_flight,
    }
    if config.llm_mode == "mock":
        return MockBackend(load_script(config.mock_script_path), **common)
    return HttpBackend(
        config.base_url,
        auth_token=config.auth_token or None,
        timeout=config.timeout,
        retries=config.retries,
        **common,
    )


def build_pipeline_config(config: RunConfig) -> PipelineConfig:
    return PipelineConfig(
        model=config.model,
        temperature=config.temperature,
        chunk_budget=config.chunk_budget,
        complaints_max_tokens=config.complaints_max_tokens,
        summary_max_tokens=config.summary_max_tokens,
        note_max_tokens=config.note_max_tokens,
        tokenizer=HeuristicTokenizer(),
        library=build_library(config),
    )


def build_embedder(config: RunConfig):
    if config.embedder_kind == "none":
        return None
    if config.embedder_kind == "one-hot":
        return OneHotEmbedder(capacity=config.one_hot_capacity)
    return HttpEmbedder(
        config.embed_base_url,
        auth_token=config.auth_token or None,
        timeout=config.timeout,
        retries=config.retries,
        max_in_flight=config.max_in_flight,
    )


def build_lexicon(config: RunConfig):
    concept_on = config.concept_metric == "on" or (
        config.concept_metric == "auto" and bool(config.lexicon_path)
    )
    if not concept_on:
        return None
    if not config.lexicon_path:
        raise ConfigError("concept metric is on but no lexicon is configured")
    return load_lexicon(config.lexicon_path)
