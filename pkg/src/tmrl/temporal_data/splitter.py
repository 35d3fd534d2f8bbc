"""Split documents into passages that each carry exactly one temporal expression."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .intervals import TemporalSpan
from .tagger import tag_temporal

_ABBREV = {
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "no",
    "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
    "u.s", "u.k", "inc", "ltd", "co", "mt", "gen", "col", "lt", "sgt", "rev",
}
_BOUNDARY = re.compile(r"[.!?]+[\"')\]]*\s+(?=[\"'(\[]?[A-Z0-9])")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character ranges of sentences in ``text`` (whitespace trimmed)."""
    ranges: list[tuple[int, int]] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        head = text[start:m.start()]
        last = head.rsplit(None, 1)[-1].lower() if head.strip() else ""
        if last in _ABBREV or re.fullmatch(r"[a-z]", last):
            continue
        end = m.start() + len(m.group(0).rstrip())
        ranges.append((start, end))
        start = m.end()
    if text[start:].strip():
        ranges.append((start, len(text.rstrip())))
    out = []
    for s, e in ranges:
        while s < e and text[s].isspace():
            s += 1
        if s < e:
            out.append((s, e))
    return out


@dataclass(frozen=True)
class Passage:
    text: str
    span: TemporalSpan
    sentences: tuple[int, ...] = field(default=())


@dataclass
class SplitStats:
    sentences: int = 0
    discarded_multi: int = 0
    discarded_relative: int = 0
    passages: int = 0


def split_passage(document: str, stats: SplitStats | None = None) -> list[Passage]:
    """Greedy left-to-right merge of adjacent sentences.

    Sentences with two or more expressions, or any relative expression, are
    dropped first. A passage is closed just before it would receive a second
    expression; expression-free sentences join the passage on their left (or the
    first passage, when they lead the document).
    """
    stats = stats if stats is not None else SplitStats()
    kept: list[tuple[int, str, int]] = []
    for i, (s, e) in enumerate(split_sentences(document)):
        sent = document[s:e]
        spans = tag_temporal(sent)
        stats.sentences += 1
        if len(spans) >= 2:
            stats.discarded_multi += 1
            continue
        if spans and spans[0].is_relative:
            stats.discarded_relative += 1
            continue
        kept.append((i, sent, len(spans)))

    groups: list[list[tuple[int, str, int]]] = []
    current: list[tuple[int, str, int]] = []
    count = 0
    for item in kept:
        if count + item[2] > 1:
            groups.append(current)
            current, count = [], 0
        current.append(item)
        count += item[2]
    if current:
        if count == 1 or not groups:
            groups.append(current)
        else:
            groups[-1].extend(current)

    passages = []
    for group in groups:
        if sum(c for _, _, c in group) != 1:
            continue
        text = " ".join(sent for _, sent, _ in group)
        spans = [s for s in tag_temporal(text) if not s.is_relative]
        if len(spans) != 1 or len(tag_temporal(text)) != 1:
            # joining created or destroyed an expression across a boundary
            continue
        passages.append(Passage(text, spans[0], tuple(i for i, _, _ in group)))
    stats.passages += len(passages)
    return passages
