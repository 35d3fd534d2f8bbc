"""Query augmentation: classification, generation clients, filtering, validation."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from ..errors import ConfigError, TransportError
from .intervals import AllenRelation, Granularity, Interval, allen_relation
from .prompts import build_prompt
from .schema import Passage, TemporalAnnotation, TemporalQueryType, parse_record
from .splitter import Passage as SplitPassage, SplitStats, split_passage, split_sentences
from .tagger import absolute_spans, tag_temporal

log = logging.getLogger(__name__)

QueryType = TemporalQueryType

_TIME_SEEKING = re.compile(
    r"^\s*when\b|\b(?:what|which)\s+(?:year|date|day|month|time|decade|century|period)\b|"
    r"\bhow\s+long\b|\bsince\s+when\b",
    re.IGNORECASE,
)
_EVENT_CUE = re.compile(
    r"\b(?:before|after|during|following|prior\s+to|until|since|preceding|amid|throughout)\s+(?:the\s+)?\w+",
    re.IGNORECASE,
)
_ORDINAL = re.compile(
    r"\b(?:first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|last|latest|earliest|"
    r"\d+(?:st|nd|rd|th))\b(?!\s+(?:of\s+)?(?:january|february|march|april|may|june|july|august|"
    r"september|october|november|december))",
    re.IGNORECASE,
)


def classify_query_confidence(text: str, spans=None) -> tuple[TemporalQueryType, bool]:
    """Query type plus a confidence flag; rules apply in precedence order."""
    spans = tag_temporal(text) if spans is None else spans
    if _TIME_SEEKING.search(text):
        return TemporalQueryType.TEMPORAL_ANSWER, True
    if any(not s.is_relative for s in spans):
        return TemporalQueryType.EXPLICIT, True
    if _EVENT_CUE.search(text):
        return TemporalQueryType.IMPLICIT, True
    return TemporalQueryType.IMPLICIT, False


def classify_query(text: str, spans=None) -> TemporalQueryType:
    return classify_query_confidence(text, spans)[0]


def is_ordinal(text: str) -> bool:
    return _ORDINAL.search(text) is not None


# --------------------------------------------------------------------------
# generation clients


class GenerationClient(Protocol):
    def complete(self, prompt: str) -> str: ...


_OTHER_SUBJECTS = (
    "the city council approved a new harbour budget",
    "a botanist catalogued alpine mosses",
    "the national orchestra toured coastal towns",
    "an engineering team rebuilt the river bridge",
    "the museum opened a sculpture wing",
    "a sailing crew crossed the southern strait",
    "the railway company electrified its branch line",
    "a chess club hosted an open tournament",
)
_POS_TEMPLATES = (
    "What is known about how {core} {expr}?",
    "Which details describe how {core} {expr}?",
    "Who was involved as {core} {expr}?",
    "Tell me about how {core} {expr}.",
    "What was the context as {core} {expr}?",
)


def _input_block(prompt: str) -> dict:
    head, sep, tail = prompt.rpartition("### Input\n")
    if not sep:
        raise ValueError("prompt has no input block")
    return json.loads(tail.strip().splitlines()[0])


_LOWER_OPENERS = {
    "the", "a", "an", "he", "she", "it", "they", "we", "this", "that", "these", "those", "his", "her",
    "its", "their", "there", "then", "after", "before", "during", "later", "when", "while", "most", "many",
}


def _core(text: str, span) -> str:
    """Words of the span's sentence with the expression cut out."""
    s0, s1 = next(((a, b) for a, b in split_sentences(text) if a <= span.start < b), (0, len(text)))
    core = f"{text[s0:span.start]} {text[span.end:s1]}"
    core = re.sub(r"\s+", " ", core)
    core = re.sub(r"\s+([,;:])", r"\1", core)
    core = re.sub(r"^[\s,;:]+|[\s,;:.!?]+$", "", core)
    words = core.split()[:14]
    if not words:
        return "this event took place"
    if words[0].lower() in _LOWER_OPENERS:
        words[0] = words[0].lower()
    return " ".join(words).rstrip(",;:")


def _expressions(interval: Interval) -> tuple[list[str], list[str]]:
    """Positive and shifted-negative temporal phrases for a passage interval."""
    s, e, g = interval.start, interval.end, interval.granularity
    y0, y1 = s.year, e.year
    mname = s.strftime("%B")
    if g is Granularity.YEAR and y0 == y1:
        month = ("March", "June", "September", "November")[y0 % 4]
        pos = [f"in {y0}", f"in {month} {y0}", f"from {y0 - 2} to {y0 + 3}", f"from {y0} to {y0 + 2}",
               f"from {y0 - 3} to {y0}"]
        neg = [f"in {y0 + 1}", f"in {y0 - 3}", f"from {y0 + 2} to {y0 + 4}"]
    elif g is Granularity.YEAR:
        pos = [f"from {y0} to {y1}", f"in {y0}", f"in {y1}", f"from {y0 - 1} to {y1 + 1}",
               f"from {y0 - 2} to {y0}"]
        neg = [f"in {y1 + 2}", f"in {y0 - 2}", f"from {y1 + 1} to {y1 + 3}"]
    elif g is Granularity.MONTH:
        pos = [f"in {mname} {y0}", f"on 15 {mname} {y0}", f"in {y0}", f"from {mname} {y0} to {y0 + 1}",
               f"from {y0 - 1} to {mname} {y0}"]
        neg = [f"in {mname} {y0 + 2}", f"in {y0 - 3}", f"from {y0 + 1} to {y0 + 3}"]
    else:
        dd = f"{s.day} {mname}"
        day_shift = min(s.day, 28)
        pos = [f"on {dd} {y0}", f"in {mname} {y0}", f"in {y0}", f"from {dd} {y0} to {y0 + 1}",
               f"from {y0 - 1} to {dd} {y0}"]
        neg = [f"on {day_shift} {mname} {y0 + 2}", f"in {y0 - 3}", f"from {y0 + 1} to {y0 + 3}"]
    return pos, neg


class MockGenerationClient:
    """Offline deterministic generator.

    Reads the input block of the prompt and emits one newline-terminated
    annotation: five relation-consistent positives (four explicit, one
    TemporalAnswer) and five negatives (shifted intervals, same time with a
    different subject, an irrelevant TemporalAnswer).
    """

    def __init__(self, n_positive: int = 5):
        self.n_positive = n_positive
        self.calls = 0
        self._lock = threading.Lock()

    def _item(self, docid: int, text: str, passage_iv: Interval) -> dict:
        spans = absolute_spans(text)
        kind = classify_query(text)
        if kind is not TemporalQueryType.TEMPORAL_ANSWER and spans:
            return {
                "docid": docid,
                "text": text,
                "temporal": [spans[0].text],
                "temporal_query_type": kind.value,
                "allen_relation": allen_relation(spans[0].interval, passage_iv).value,
            }
        return {"docid": docid, "text": text, "temporal": [], "temporal_query_type": "TemporalAnswer",
                "allen_relation": "Empty"}

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        block = _input_block(prompt)
        text, docid = block["query"], int(block["docid"])
        span = absolute_spans(text)[0]
        iv = span.interval
        core = _core(text, span)
        h = zlib.crc32(text.encode("utf-8"))
        other = _OTHER_SUBJECTS[h % len(_OTHER_SUBJECTS)]
        pos_expr, neg_expr = _expressions(iv)
        positives = []
        for i, expr in enumerate(pos_expr[: max(self.n_positive - 1, 0)]):
            tpl = _POS_TEMPLATES[(h + i) % len(_POS_TEMPLATES)]
            positives.append(self._item(docid, tpl.format(core=core, expr=expr), iv))
        positives.append(self._item(docid, f"When was it that {core}?", iv))
        negatives = [
            self._item(docid, _POS_TEMPLATES[(h + i) % len(_POS_TEMPLATES)].format(core=core, expr=expr), iv)
            for i, expr in enumerate(neg_expr)
        ]
        negatives.append(self._item(docid, _POS_TEMPLATES[h % len(_POS_TEMPLATES)].format(core=other, expr=pos_expr[0]), iv))
        negatives.append(self._item(docid, f"When was it that {other}?", iv))
        record = {
            "query_id": int(block["query_id"]),
            "query": text,
            "temporal": [span.text],
            "positive_passages": positives,
            "negative_passages": negatives,
        }
        return json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n"


ENV_ENDPOINT = "TMRL_GEN_ENDPOINT"
ENV_MODEL = "TMRL_GEN_MODEL"
ENV_TIMEOUT = "TMRL_GEN_TIMEOUT"


class HTTPGenerationClient:
    """JSON-over-HTTP generation endpoint.

    POSTs ``{"model", "prompt", sampling...}`` and accepts a ``text`` field,
    or ``choices[0].text`` / ``choices[0].message.content``.
    """

    sampling = {"max_tokens": 32768, "temperature": 0.7, "top_p": 0.8, "top_k": 20, "min_p": 0.0}

    def __init__(self, endpoint: str, model: str = "default", timeout: float = 60.0,
                 max_retries: int = 3, max_in_flight: int = 4, backoff: float = 0.5):
        if not endpoint:
            raise ConfigError("generation endpoint URL is empty")
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.retries = 0

    @classmethod
    def from_env(cls, **kwargs) -> "HTTPGenerationClient":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise ConfigError(f"live generation requires ${ENV_ENDPOINT}")
        try:
            timeout = float(os.environ.get(ENV_TIMEOUT, "60"))
        except ValueError:
            raise ConfigError(f"${ENV_TIMEOUT} must be a number") from None
        return cls(endpoint, os.environ.get(ENV_MODEL, "default"), timeout, **kwargs)

    @staticmethod
    def _extract(body: dict) -> str:
        if "text" in body:
            return body["text"]
        choice = body["choices"][0]
        return choice["text"] if "text" in choice else choice["message"]["content"]

    def complete(self, prompt: str) -> str:
        payload = json.dumps({"model": self.model, "prompt": prompt, **self.sampling}).encode("utf-8")
        last = None
        with self._slots:
            for attempt in range(self.max_retries + 1):
                req = urllib.request.Request(self.endpoint, data=payload,
                                             headers={"Content-Type": "application/json"})
                raw = b""
                try:
                    with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                        raw = resp.read()
                    return self._extract(json.loads(raw))
                except (urllib.error.URLError, OSError, TimeoutError) as exc:
                    last = exc
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    last = exc
                log.warning("generation request failed (attempt %d): %s; request=%s response=%s",
                            attempt + 1, last, payload[:2000], raw[:2000])
                if attempt < self.max_retries:
                    self.retries += 1
                    time.sleep(self.backoff * 2**attempt)
        raise TransportError(f"generation endpoint {self.endpoint} failed after {self.max_retries + 1} attempts: {last}")


# --------------------------------------------------------------------------
# generation, filtering, validation


@dataclass
class GenerationResult:
    records: list[TemporalAnnotation]
    rejected: list[tuple[str, str]] = field(default_factory=list)


def generate_candidates(
    passage: SplitPassage | str,
    client: GenerationClient,
    query_id: int = 0,
    docid: int = 0,
    demos: Sequence[TemporalAnnotation | str] = (),
) -> GenerationResult:
    text = passage.text if isinstance(passage, SplitPassage) else passage
    prompt = build_prompt(text, demos, query_id=query_id, docid=docid)
    response = client.complete(prompt)
    result = GenerationResult([])
    for line in response.splitlines():
        if not line.strip():
            continue
        try:
            result.records.append(parse_record(line))
        except ValueError as exc:
            result.rejected.append((line, str(exc)))
    return result


@dataclass
class FilterReport:
    records_in: int = 0
    records_out: int = 0
    relative_queries_removed: int = 0
    ordinal_queries_removed: int = 0
    records_dropped_few_queries: int = 0

    def merge(self, other: "FilterReport") -> None:
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def __str__(self) -> str:
        return "\n".join(
            [
                f"records in: {self.records_in}",
                f"records out: {self.records_out}",
                f"queries removed (relative expression): {self.relative_queries_removed}",
                f"queries removed (ordinal cue): {self.ordinal_queries_removed}",
                f"records dropped (fewer than 2 explicit/implicit queries): {self.records_dropped_few_queries}",
            ]
        )


MIN_DATED_QUERIES = 2


def _is_relative_item(item: Passage) -> bool:
    return any(s.is_relative for s in tag_temporal(item.text)) or any(
        any(s.is_relative for s in tag_temporal(t)) for t in item.temporal
    )


def post_filter(records: Iterable[TemporalAnnotation]) -> tuple[list[TemporalAnnotation], FilterReport]:
    """Drop relative/ordinal queries, then records with < 2 dated positives."""
    report = FilterReport()
    kept = []
    for rec in records:
        report.records_in += 1
        lists = {}
        for name in ("positive_passages", "negative_passages"):
            items = []
            for item in getattr(rec, name):
                if _is_relative_item(item):
                    report.relative_queries_removed += 1
                elif is_ordinal(item.text):
                    report.ordinal_queries_removed += 1
                else:
                    items.append(item)
            lists[name] = items
        n_dated = sum(1 for item in lists["positive_passages"] if item.is_dated)
        if n_dated < MIN_DATED_QUERIES:
            report.records_dropped_few_queries += 1
            continue
        kept.append(rec.model_copy(update=lists))
    report.records_out = len(kept)
    return kept, report


@dataclass(frozen=True)
class Violation:
    kind: str
    text: str
    declared: str = ""
    computed: str = ""

    def __str__(self) -> str:
        extra = f" (declared {self.declared}, computed {self.computed})" if self.declared or self.computed else ""
        return f"{self.kind}: {self.text!r}{extra}"


def consistency_check(record: TemporalAnnotation) -> list[Violation]:
    """Recompute every declared Allen relation against the passage interval."""
    out: list[Violation] = []
    anchors = absolute_spans(record.query)
    if len(anchors) != 1:
        out.append(Violation("passage_expression_count", record.query, "1", str(len(anchors))))
        return out
    passage_iv = anchors[0].interval
    for item in [*record.positive_passages, *record.negative_passages]:
        rel = item.allen_relation
        if item.temporal_query_type is TemporalQueryType.TEMPORAL_ANSWER:
            if item.temporal:
                out.append(Violation("temporal_answer_with_temporal", item.text, "[]", repr(item.temporal)))
            if rel is not AllenRelation.EMPTY:
                out.append(Violation("temporal_answer_relation", item.text, rel.value, "Empty"))
            continue
        if rel is AllenRelation.EMPTY:
            out.append(Violation("dated_query_empty_relation", item.text, "Empty", ""))
            continue
        for t in item.temporal:
            if t not in item.text:
                out.append(Violation("temporal_not_in_text", item.text, t, ""))
        spans = absolute_spans(item.text)
        if not spans:
            out.append(Violation("unanchored_query", item.text, rel.value, ""))
            continue
        computed = allen_relation(spans[0].interval, passage_iv)
        if computed is not rel:
            out.append(Violation("relation_mismatch", item.text, rel.value, computed.value))
    return out


# --------------------------------------------------------------------------
# corpus pipeline


@dataclass
class AugmentReport:
    documents: int = 0
    split: SplitStats = field(default_factory=SplitStats)
    docs_without_passages: int = 0
    rejected_lines: list[tuple[str, str]] = field(default_factory=list)
    filter: FilterReport = field(default_factory=FilterReport)
    violations: list[Violation] = field(default_factory=list)

    def __str__(self) -> str:
        lines = [
            f"documents: {self.documents}",
            f"sentences: {self.split.sentences}",
            f"sentences discarded (multiple expressions): {self.split.discarded_multi}",
            f"sentences discarded (relative expression): {self.split.discarded_relative}",
            f"passages: {self.split.passages}",
            f"documents without usable passages: {self.docs_without_passages}",
            f"generator lines rejected: {len(self.rejected_lines)}",
            str(self.filter),
            f"consistency violations: {len(self.violations)}",
        ]
        return "\n".join(lines)


def augment_documents(
    docs: Iterable[tuple[int, str]],
    client: GenerationClient,
    jobs: int = 1,
    demos: Sequence[TemporalAnnotation | str] = (),
) -> tuple[list[TemporalAnnotation], AugmentReport]:
    report = AugmentReport()
    work: list[tuple[int, int, SplitPassage]] = []
    for docid, text in docs:
        report.documents += 1
        passages = split_passage(text, report.split)
        if not passages:
            report.docs_without_passages += 1
        for p in passages:
            work.append((len(work), docid, p))

    def run(job):
        qid, docid, passage = job
        return generate_candidates(passage, client, query_id=qid, docid=docid, demos=demos)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, work))
    else:
        results = [run(job) for job in work]
    generated = []
    for res in results:
        generated.extend(res.records)
        report.rejected_lines.extend(res.rejected)
    records, report.filter = post_filter(generated)
    for rec in records:
        report.violations.extend(consistency_check(rec))
    return records, report
