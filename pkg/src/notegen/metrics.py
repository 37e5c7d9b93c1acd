"""Scoring predictions against gold text.

ROUGE-1/2/L/Lsum over lowercased alphanumeric tokens, a greedy
embedding-match F1 (BERTScore-shaped, pluggable embedder), and a
lexicon-driven concept-overlap F1 standing in for UMLS concept scoring,
which needs license-gated data we do not ship.

Two deliberate conventions, both documented in the README: scores are
reported as F1, and concept F1 scores 1.0 when prediction and gold both
contain zero lexicon concepts (vacuous agreement, not failure).
"""

import logging
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import requests

from .errors import ConfigError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

# Minimal English stopword list for the optional drop_stopwords flag.
_STOPWORDS = frozenset(
    """a an and are as at be but by for from had has have he her his if in is
    it its not of on or she that the their then there this to was were will
    with""".split()
)


@dataclass(frozen=True)
class PrScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PrScore":
        if precision + recall == 0:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))

    @classmethod
    def zero(cls) -> "PrScore":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def perfect(cls) -> "PrScore":
        return cls(1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# Tokenization

def porter_stem(word: str) -> str:
    """Porter's 1980 suffix-stripping algorithm, the classic formulation."""

    def is_consonant(w, i):
        ch = w[i]
        if ch in "aeiou":
            return False
        if ch == "y":
            return i == 0 or not is_consonant(w, i - 1)
        return True

    def measure(w):
        # Number of VC sequences in the [C](VC)^m[V] form.
        m = 0
        prev_vowel = False
        for i in range(len(w)):
            vowel = not is_consonant(w, i)
            if prev_vowel and not vowel:
                m += 1
            prev_vowel = vowel
        return m

    def has_vowel(w):
        return any(not is_consonant(w, i) for i in range(len(w)))

    def ends_double_consonant(w):
        return len(w) >= 2 and w[-1] == w[-2] and is_consonant(w, len(w) - 1)

    def ends_cvc(w):
        if len(w) < 3:
            return False
        if not (
            is_consonant(w, len(w) - 3)
            and not is_consonant(w, len(w) - 2)
            and is_consonant(w, len(w) - 1)
        ):
            return False
        return w[-1] not in "wxy"

    def replace_suffix(w, suffix, repl, min_measure):
        if w.endswith(suffix):
            stem = w[: len(w) - len(suffix)]
            if measure(stem) > min_measure:
                return stem + repl, True
            return w, True  # suffix matched, condition failed: stop scanning
        return w, False

    word = word.lower()
    if len(word) <= 2:
        return word

    # Step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]

    # Step 1b
    if word.endswith("eed"):
        if measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed") and has_vowel(word[:-2]):
        word = word[:-2]
        word = _step1b_cleanup(word, is_consonant, ends_double_consonant, ends_cvc, measure)
    elif word.endswith("ing") and has_vowel(word[:-3]):
        word = word[:-3]
        word = _step1b_cleanup(word, is_consonant, ends_double_consonant, ends_cvc, measure)

    # Step 1c
    if word.endswith("y") and has_vowel(word[:-1]):
        word = word[:-1] + "i"

    # Step 2
    for suffix, repl in (
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
        ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
        ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
        ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ):
        word, matched = replace_suffix(word, suffix, repl, 0)
        if matched:
            break

    # Step 3
    for suffix, repl in (
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    ):
        word, matched = replace_suffix(word, suffix, repl, 0)
        if matched:
            break

    # Step 4
    for suffix in (
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ):
        if word.endswith(suffix):
            stem = word[: len(word) - len(suffix)]
            if suffix == "ion" and not (stem and stem[-1] in "st"):
                break
            if measure(stem) > 1:
                word = stem
            break

    # Step 5a
    if word.endswith("e"):
        stem = word[:-1]
        m = measure(stem)
        if m > 1 or (m == 1 and not ends_cvc(stem)):
            word = stem

    # Step 5b
    if word.endswith("ll") and measure(word) > 1:
        word = word[:-1]

    return word


def _step1b_cleanup(word, is_consonant, ends_double_consonant, ends_cvc, measure):
    if word.endswith(("at", "bl", "iz")):
        return word + "e"
    if ends_double_consonant(word) and not word.endswith(("l", "s", "z")):
        return word[:-1]
    if measure(word) == 1 and ends_cvc(word):
        return word + "e"
    return word


def tokenize_for_rouge(
    text: str, stemming: bool = False, drop_stopwords: bool = False
) -> list[str]:
    """Lowercase; tokens are maximal alphanumeric runs, everything else
    separates. Stemming and stopword removal are off by default."""
    tokens = _TOKEN.findall(text.lower())
    if drop_stopwords:
        tokens = [t for t in tokens if t not in _STOPWORDS]
    if stemming:
        tokens = [porter_stem(t) for t in tokens]
    return tokens


# ---------------------------------------------------------------------------
# ROUGE

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(pred: str, gold: str, n: int, **tokenize_flags) -> PrScore:
    """Clipped n-gram multiset overlap; an empty n-gram set on either side
    makes that side's ratio 0."""
    if n not in (1, 2):
        raise ValueError("rouge_n supports n in {1, 2}")
    pred_grams = _ngrams(tokenize_for_rouge(pred, **tokenize_flags), n)
    gold_grams = _ngrams(tokenize_for_rouge(gold, **tokenize_flags), n)
    overlap = sum((pred_grams & gold_grams).values())
    pred_total = sum(pred_grams.values())
    gold_total = sum(gold_grams.values())
    precision = overlap / pred_total if pred_total else 0.0
    recall = overlap / gold_total if gold_total else 0.0
    return PrScore.from_pr(precision, recall)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, 1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(pred: str, gold: str, **tokenize_flags) -> PrScore:
    pred_tokens = tokenize_for_rouge(pred, **tokenize_flags)
    gold_tokens = tokenize_for_rouge(gold, **tokenize_flags)
    lcs = _lcs_len(pred_tokens, gold_tokens)
    precision = lcs / len(pred_tokens) if pred_tokens else 0.0
    recall = lcs / len(gold_tokens) if gold_tokens else 0.0
    return PrScore.from_pr(precision, recall)


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def _lcs_indices(a: Sequence[str], b: Sequence[str]) -> set:
    """Positions of b's tokens participating in one LCS of a and b."""
    rows = len(a) + 1
    cols = len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(1, rows):
        for j in range(1, cols):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    out = set()
    i, j = len(a), len(b)
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            out.add(j - 1)
            i -= 1
            j -= 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out


def rouge_lsum(pred: str, gold: str, **tokenize_flags) -> PrScore:
    """Summary-level ROUGE-L: per gold sentence, the union of LCS hits
    against every pred sentence, clipped by corpus-level token counts."""
    pred_sents = [tokenize_for_rouge(s, **tokenize_flags) for s in split_sentences(pred)]
    gold_sents = [tokenize_for_rouge(s, **tokenize_flags) for s in split_sentences(gold)]
    pred_sents = [s for s in pred_sents if s]
    gold_sents = [s for s in gold_sents if s]
    pred_total = sum(len(s) for s in pred_sents)
    gold_total = sum(len(s) for s in gold_sents)
    if not pred_total or not gold_total:
        return PrScore.zero()

    pred_counts = Counter(t for s in pred_sents for t in s)
    gold_counts = Counter(t for s in gold_sents for t in s)
    hits = 0
    for gold_sent in gold_sents:
        union = set()
        for pred_sent in pred_sents:
            union |= _lcs_indices(pred_sent, gold_sent)
        for index in union:
            token = gold_sent[index]
            # Clip: a token only counts while both sides still have budget.
            if pred_counts[token] > 0 and gold_counts[token] > 0:
                hits += 1
                pred_counts[token] -= 1
                gold_counts[token] -= 1
    return PrScore.from_pr(hits / pred_total, hits / gold_total)


# ---------------------------------------------------------------------------
# Embedding-match F1

class OneHotEmbedder:
    """Deterministic mock: every distinct token gets its own axis, so cosine
    is 1 for equal tokens and 0 otherwise. Raises when the vocabulary
    outgrows the configured capacity."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._vocab: dict[str, int] = {}

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize_for_rouge(text)
        for token in tokens:
            if token not in self._vocab:
                if len(self._vocab) >= self.capacity:
                    raise ValueError(
                        f"one-hot vocabulary exceeded capacity {self.capacity}"
                    )
                self._vocab[token] = len(self._vocab)
        vectors = np.zeros((len(tokens), self.capacity), dtype=np.float32)
        for row, token in enumerate(tokens):
            vectors[row, self._vocab[token]] = 1.0
        return vectors


_TRANSIENT_STATUSES = frozenset({429, 500, 502, 503, 504})


class HttpEmbedder:
    """Client for a per-token embedding endpoint: POST {base}/embeddings
    with {"text": ...}, response {"vectors": [[...], ...]}. Rows are
    normalized to unit length on receipt."""

    def __init__(
        self,
        base_url: str,
        auth_token: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.auth_token = auth_token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.Semaphore(max_in_flight)
        self._session = session or requests.Session()

    def embed(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        url = f"{self.base_url}/embeddings"
        attempts = self.retries + 1
        last_failure = "no attempt made"
        with self._gate:
            for attempt in range(attempts):
                if attempt:
                    time.sleep(self.backoff * (2 ** (attempt - 1)))
                try:
                    response = self._session.post(
                        url, json={"text": text}, headers=headers, timeout=self.timeout
                    )
                except requests.RequestException as exc:
                    last_failure = f"{type(exc).__name__}: {exc}"
                    continue
                status = response.status_code
                if status in _TRANSIENT_STATUSES:
                    last_failure = f"status {status}"
                    continue
                if not 200 <= status < 300:
                    raise ProtocolError(status, response.text[:200])
                return self._parse(response)
        raise TransportError(
            f"embedding request failed after {attempts} attempts; "
            f"last failure: {last_failure}"
        )

    def _parse(self, response) -> np.ndarray:
        try:
            vectors = np.asarray(response.json()["vectors"], dtype=np.float32)
        except (ValueError, KeyError, TypeError):
            raise ProtocolError(response.status_code, response.text[:200]) from None
        if vectors.size == 0:
            return vectors.reshape(0, 0)
        if vectors.ndim != 2:
            raise ProtocolError(response.status_code, "vectors must be a 2-d array")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return vectors / norms


def greedy_embedding_f1(pred: str, gold: str, embedder) -> PrScore:
    """Recall: mean over gold tokens of the best cosine against any pred
    token; precision symmetric; no IDF weighting. Negative cosines clamp to
    0 so scores stay in [0, 1]. Both sides empty scores 1.0 (vacuous)."""
    pred_vectors = embedder.embed(pred)
    gold_vectors = embedder.embed(gold)
    pred_n = pred_vectors.shape[0]
    gold_n = gold_vectors.shape[0]
    if pred_n == 0 and gold_n == 0:
        return PrScore.perfect()
    if pred_n == 0 or gold_n == 0:
        return PrScore.zero()
    similarity = pred_vectors @ gold_vectors.T
    similarity = np.clip(similarity, 0.0, 1.0)
    precision = float(similarity.max(axis=1).mean())
    recall = float(similarity.max(axis=0).mean())
    return PrScore.from_pr(precision, recall)


# ---------------------------------------------------------------------------
# Concept F1

def _normalize_term(term: str) -> str:
    return " ".join(term.lower().split())


class ConceptLexicon:
    """Normalized surface term → concept id, with the longest term length
    cached for the greedy matcher. Duplicate terms keep the first mapping."""

    def __init__(self, entries: dict[str, str]):
        clean: dict[str, str] = {}
        for term, concept_id in entries.items():
            normalized = _normalize_term(term)
            if not normalized:
                raise ConfigError("lexicon terms must be non-empty")
            if normalized in clean:
                if clean[normalized] != concept_id:
                    logger.warning(
                        "lexicon term %r maps to both %s and %s; keeping the first",
                        normalized, clean[normalized], concept_id,
                    )
                continue
            clean[normalized] = concept_id
        self.entries = clean
        self.max_term_tokens = max(
            (len(term.split()) for term in clean), default=0
        )

    def __len__(self):
        return len(self.entries)


def load_lexicon(path) -> ConceptLexicon:
    """Read a UTF-8 "term<TAB>concept_id" file; blank lines and #-comments
    are skipped."""
    entries: dict[str, str] = {}
    duplicates = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ConfigError(
                    f"lexicon line {lineno} must be 'term<TAB>concept_id'"
                )
            term = _normalize_term(parts[0])
            if term in entries:
                duplicates.append(term)
                continue
            entries[term] = parts[1].strip()
    if duplicates:
        logger.warning(
            "lexicon had %d duplicate terms; first occurrence kept", len(duplicates)
        )
    return ConceptLexicon(entries)


def extract_concepts(text: str, lexicon: ConceptLexicon) -> set:
    """Greedy longest-match left-to-right over normalized tokens; matched
    spans consume their tokens; returns the deduplicated concept-id set."""
    if not len(lexicon):
        raise ConfigError("concept extraction needs a non-empty lexicon")
    tokens = tokenize_for_rouge(text)
    found = set()
    i = 0
    while i < len(tokens):
        matched = False
        widest = min(lexicon.max_term_tokens, len(tokens) - i)
        for width in range(widest, 0, -1):
            term = " ".join(tokens[i : i + width])
            concept_id = lexicon.entries.get(term)
            if concept_id is not None:
                found.add(concept_id)
                i += width
                matched = True
                break
        if not matched:
            i += 1
    return found


def concept_f1(pred: str, gold: str, lexicon: ConceptLexicon) -> PrScore:
    """Set F1 between extracted concept sets. Both sets empty scores
    1.0/1.0/1.0: vacuous agreement, not penalized."""
    pred_concepts = extract_concepts(pred, lexicon)
    gold_concepts = extract_concepts(gold, lexicon)
    if not pred_concepts and not gold_concepts:
        return PrScore.perfect()
    if not pred_concepts or not gold_concepts:
        return PrScore.zero()
    overlap = len(pred_concepts & gold_concepts)
    return PrScore.from_pr(overlap / len(pred_concepts), overlap / len(gold_concepts))


# ---------------------------------------------------------------------------
# Per-instance scoring and aggregation

METRIC_NAMES = ("rouge1", "rouge2", "rougeL", "rougeLsum", "embed", "concept")


@dataclass(frozen=True)
class InstanceScores:
    instance_id: str
    rouge1: PrScore
    rouge2: PrScore
    rougeL: PrScore
    rougeLsum: PrScore
    embed: Optional[PrScore] = None
    concept: Optional[PrScore] = None

    def get(self, name: str) -> Optional[PrScore]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        out = {"instance_id": self.instance_id}
        for name in METRIC_NAMES:
            score = self.get(name)
            out[name] = (
                None
                if score is None
                else {"precision": score.precision, "recall": score.recall, "f1": score.f1}
            )
        return out


def scores_from_dict(raw: dict) -> InstanceScores:
    def parse(value):
        if value is None:
            return None
        return PrScore(value["precision"], value["recall"], value["f1"])

    return InstanceScores(
        instance_id=raw["instance_id"],
        rouge1=parse(raw["rouge1"]),
        rouge2=parse(raw["rouge2"]),
        rougeL=parse(raw["rougeL"]),
        rougeLsum=parse(raw["rougeLsum"]),
        embed=parse(raw.get("embed")),
        concept=parse(raw.get("concept")),
    )


def score_instance(
    instance_id: str,
    pred: str,
    gold: str,
    embedder=None,
    lexicon: Optional[ConceptLexicon] = None,
    stemming: bool = False,
    drop_stopwords: bool = False,
) -> InstanceScores:
    """All enabled metrics for one prediction. An embedder failure leaves
    the embed metric absent for the instance rather than failing the run."""
    flags = {"stemming": stemming, "drop_stopwords": drop_stopwords}
    embed = None
    if embedder is not None:
        try:
            embed = greedy_embedding_f1(pred, gold, embedder)
        except Exception as exc:
            logger.warning("embedding metric failed for %s: %s", instance_id, exc)
    concept = concept_f1(pred, gold, lexicon) if lexicon is not None else None
    return InstanceScores(
        instance_id=instance_id,
        rouge1=rouge_n(pred, gold, 1, **flags),
        rouge2=rouge_n(pred, gold, 2, **flags),
        rougeL=rouge_l(pred, gold, **flags),
        rougeLsum=rouge_lsum(pred, gold, **flags),
        embed=embed,
        concept=concept,
    )


@dataclass(frozen=True)
class EvalReport:
    instances: tuple[InstanceScores, ...]
    macro: dict
    counts: dict
    instance_count: int
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "instance_count": self.instance_count,
            "failures": self.failures,
            "counts": dict(self.counts),
            "macro": {
                name: {
                    "precision": score.precision,
                    "recall": score.recall,
                    "f1": score.f1,
                }
                for name, score in self.macro.items()
            },
            "instances": [s.to_dict() for s in self.instances],
        }


def report_from_dict(raw: dict) -> EvalReport:
    instances = tuple(scores_from_dict(r) for r in raw.get("instances", []))
    macro = {
        name: PrScore(v["precision"], v["recall"], v["f1"])
        for name, v in raw.get("macro", {}).items()
    }
    return EvalReport(
        instances=instances,
        macro=macro,
        counts=dict(raw.get("counts", {})),
        instance_count=raw.get("instance_count", len(instances)),
        failures=raw.get("failures", 0),
    )


def aggregate(scored: Iterable[InstanceScores], failures: int = 0) -> EvalReport:
    """Macro (unweighted) mean per metric over the instances carrying it."""
    scored = tuple(scored)
    macro: dict[str, PrScore] = {}
    counts: dict[str, int] = {}
    for name in METRIC_NAMES:
        present = [s.get(name) for s in scored if s.get(name) is not None]
        counts[name] = len(present)
        if present:
            macro[name] = PrScore(
                precision=sum(p.precision for p in present) / len(present),
                recall=sum(p.recall for p in present) / len(present),
                f1=sum(p.f1 for p in present) / len(present),
            )
    return EvalReport(
        instances=scored,
        macro=macro,
        counts=counts,
        instance_count=len(scored),
        failures=failures,
    )
