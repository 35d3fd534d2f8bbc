"""Seeded synthetic corpora for the benchmark and the splitter stress test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUBJECTS = (
    "The Halvorsen Quartet", "Mira Castellane", "The Northbrook Archive", "Teodor Vasquez", "The Lumen Society",
    "Oskar Brandvold", "The Cedarfield Observatory", "Ilse Marchetti", "The Varga Foundation", "Ravi Ellington",
    "The Kessling Institute", "Noor Abernathy", "The Solberg Company", "Emeric Dunmore", "The Ardent Players",
    "Lucia Okonkwo", "The Westmere Guild", "Hanno Rietveld", "The Pellucid Press", "Amara Lindqvist",
    "The Thornbury Museum", "Jules Marchbank", "The Ostrava Ensemble", "Petra Hollis", "The Graywater League",
)

EVENTS = (
    "opened a research station on the northern coast",
    "published a survey of river birds",
    "signed an agreement with the harbour council",
    "restored the old stone chapel",
    "toured the southern provinces",
    "founded a school for instrument makers",
    "won the regional design award",
    "moved its headquarters to the capital",
    "released a recording of folk songs",
    "hosted the international chess congress",
    "acquired a collection of maritime maps",
    "launched a public lecture series",
)

CONTEXT = (
    "The project drew visitors from many neighbouring towns.",
    "Critics described the effort as careful and ambitious.",
    "Local newspapers covered the story in detail.",
    "Several volunteers helped with the preparations.",
    "The work was funded by private donations.",
    "A small exhibition accompanied the occasion.",
)

EVAL_TEMPLATES = (
    "Which sources report that {s} {e} in {y}?",
    "Find the account of how {s} {e} in {y}.",
    "{S} {e} in {y}: where is this described?",
)


def _lower_subject(s: str) -> str:
    return s[0].lower() + s[1:] if s.startswith("The ") else s


@dataclass(frozen=True)
class SyntheticBenchmark:
    """Twin passages sharing every word except the year, plus year-specific queries."""

    documents: list[tuple[int, str]]
    queries: list[tuple[str, str]]
    qrels: dict[str, dict[str, int]]
    twin_of: dict[int, int]


def build_benchmark(n_passages: int = 200, seed: int = 0) -> SyntheticBenchmark:
    if n_passages < 2 or n_passages % 2:
        raise ValueError("n_passages must be a positive even number")
    rng = np.random.default_rng(seed)
    combos = [(s, e) for s in range(len(SUBJECTS)) for e in range(len(EVENTS))]
    n_pairs = n_passages // 2
    if n_pairs > len(combos):
        raise ValueError(f"at most {2 * len(combos)} passages available")
    chosen = rng.permutation(len(combos))[:n_pairs]
    documents, queries, qrels, twin_of = [], [], {}, {}
    for p, ci in enumerate(chosen):
        si, ei = combos[ci]
        subj, event = SUBJECTS[si], EVENTS[ei]
        context = CONTEXT[rng.integers(len(CONTEXT))]
        y1 = int(rng.integers(1900, 2016))
        gap = int(rng.integers(3, 30))
        y2 = y1 + gap if y1 + gap <= 2020 else y1 - gap
        for k, year in enumerate((y1, y2)):
            docid = 2 * p + k
            documents.append((docid, f"{subj} {event} in {year}. {context}"))
            twin_of[docid] = 2 * p + 1 - k
            tmpl = EVAL_TEMPLATES[rng.integers(len(EVAL_TEMPLATES))]
            q = tmpl.format(s=_lower_subject(subj), S=subj, e=event, y=year)
            qid = f"q{docid}"
            queries.append((qid, q))
            qrels[qid] = {str(docid): 1}
    return SyntheticBenchmark(documents, queries, qrels, twin_of)


# --------------------------------------------------------------------------
# splitter stress corpus

_SINGLE = (
    "{S} {e} in {y}.",
    "In {y}, {s} {e}.",
    "{S} {e} on {d} {mon} {y}.",
    "{S} {e} in {mon} {y}.",
    "From {y} to {y2}, {s} {e}.",
    "{S} {e} during the {dec}s.",
)
_MULTI = (
    "Between {y} and {y2}, and again in {y3}, {s} {e}.",
    "{S} {e} in {y} and again in {y3}.",
    "{S} {e} in {mon} {y}, long before {y3}.",
)
_RELATIVE = (
    "Today {s} is still remembered.",
    "{S} is now a popular destination.",
    "Yesterday a plaque was unveiled for {s}.",
)
_MONTHS = ("January", "March", "May", "July", "September", "November")


def splitter_corpus(n_docs: int = 500, seed: int = 0) -> list[tuple[int, str]]:
    """Documents mixing single-, multi- and relative-expression sentences with filler."""
    rng = np.random.default_rng(seed)
    docs = []
    for docid in range(n_docs):
        subj = SUBJECTS[rng.integers(len(SUBJECTS))]
        sentences = []
        for _ in range(int(rng.integers(2, 9))):
            kind = rng.choice(4, p=[0.45, 0.15, 0.1, 0.3])
            y = int(rng.integers(1900, 2000))
            fill = dict(
                S=subj, s=_lower_subject(subj), e=EVENTS[rng.integers(len(EVENTS))], y=y,
                y2=y + int(rng.integers(1, 6)), y3=y + int(rng.integers(8, 20)),
                d=int(rng.integers(1, 28)), mon=_MONTHS[rng.integers(len(_MONTHS))], dec=(y // 10) * 10,
            )
            pool = (_SINGLE, _MULTI, _RELATIVE, CONTEXT)[kind]
            text = pool[rng.integers(len(pool))].format(**fill)
            sentences.append(text[0].upper() + text[1:])
        docs.append((docid, " ".join(sentences)))
    return docs
