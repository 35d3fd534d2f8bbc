"""Prompt assembly for generator-backed query augmentation."""

from __future__ import annotations

import json
from typing import Sequence

from ..errors import TMRLError
from .intervals import AllenRelation
from .schema import TemporalAnnotation, schema_text
from .tagger import tag_temporal

ALLEN_RUBRIC: dict[AllenRelation, str] = {
    AllenRelation.BEFORE: "Did 'Event A' occur before 'Event B' without any overlap between the two events?",
    AllenRelation.AFTER: "Did 'Event A' occur after 'Event B' without any overlap between the two events?",
    AllenRelation.MEETS: "Did 'Event A' end in the same time as 'Event B' began? Answer True or False.",
    AllenRelation.MET_BY: "Did 'Event B' end in the same time as 'Event A' began? Answer True or False.",
    AllenRelation.OVERLAPS: (
        "Did 'Event A' begin before 'Event B' and end before 'Event B' ended, "
        "with some overlap between the two events?"
    ),
    AllenRelation.OVERLAPPED_BY: (
        "Did 'Event B' begin before 'Event A' and end before 'Event A' ended, "
        "with some overlap between the two events?"
    ),
    AllenRelation.STARTS: "'Event A' begin in the same time as 'Event B', but end before 'Event B' ended?",
    AllenRelation.STARTED_BY: "Did 'Event B' begin in the same time as 'Event A', but end before 'Event A' ended?",
    AllenRelation.DURING: (
        "Did 'Event A' begin after 'Event B' began and end before 'Event B' ended, "
        "being entirely contained within 'Event B'?"
    ),
    AllenRelation.CONTAINS: (
        "Did 'Event A' begin before 'Event B' began and end after 'Event B' ended, "
        "entirely containing 'Event B'?"
    ),
    AllenRelation.FINISHES: "Did 'Event A' begin after 'Event B' began and end in the same time as 'Event B'?",
    AllenRelation.FINISHED_BY: "Did 'Event B' begin after 'Event A' began and end in the same time as 'Event A'?",
    AllenRelation.EQUALS: "Did 'Event A' begin in the same time as 'Event B' and end in the same time as 'Event B'?",
    AllenRelation.EMPTY: "a special case for TemporalAnswer where there is no temporal expression.",
}


def rubric_text() -> str:
    return "\n".join(f"- {rel.value}: {desc}" for rel, desc in ALLEN_RUBRIC.items())


_HEADER = """\
You are a temporal annotation expert for information retrieval. You receive a query (a passage that \
carries one temporal expression) together with rule-based tagger hints, and previously annotated \
demonstrations. Generate positive and negative questions for temporal contrastive learning.
Output annotated JSON objects, one per line and without indentation, that strictly follow the JSON schema."""

_INSTRUCTIONS = """\
* Instructions:
1. Output one or more valid JSON objects, newline-delimited, conforming to this schema: {schema}
2. "query_id": copy the provided query_id.
3. "query": the provided text. Tagger hints list explicit expressions only and may be incomplete; \
double-check them and also extract event expressions anchored to a specific date. Keep "temporal" \
entries concise and as written, e.g. "in April, 1906", "2 July 2010", "2004 general election".
4. "positive_passages": natural QA-style questions answerable from the query. Each question carries \
exactly one extractable temporal expression that logically aligns with the query's expression, with \
diverse Allen relations.
   - Prioritise explicit constraints ("in 2010", "from 2010 to 2015"), then implicit ones \
("after EVENT", "before EVENT").
   - Explicit and implicit questions must not ask for a time ("when", "what year/date/time").
   - TemporalAnswer questions ask for a date, duration or time range; they carry no temporal \
expression and use "allen_relation": "Empty" and "temporal": []. Fewer than 2 per query.
   - "temporal": the exact surface spans found in the question, keeping anchoring words such as \
"in", "from", "after".
   - Allen relation: the question is Event A, the query is Event B.
   - "docid": unchanged from the input.
   - Quantity: 5 positive questions.
5. "negative_passages": same format, temporally mismatched or semantically irrelevant:
   - Case 1: expressions that fall outside the query's interval, adjacent years, shifted \
non-overlapping ranges, misleading implicit cues.
   - Case 2: the same or overlapping expression about a different subject or entity.
   - Case 3: TemporalAnswer questions that are irrelevant or ask for absent information \
(fewer than 2 per query).
   - Allen relation: the question is Event A, the query is Event B.
   - Quantity: 5 hard negative questions; no trivial negatives and no accidental overlap with \
facts in the document.
6. "temporal_query_type": "Explicit", "Implicit" or "TemporalAnswer". A clear date/month/year makes it \
"Explicit", not "Implicit". Asking which date/month/year an event happened makes it "TemporalAnswer".
7. Output only JSON; no explanations or extra text."""


def build_prompt(
    passage: str,
    demos: Sequence[TemporalAnnotation | str] = (),
    schema: str | None = None,
    query_id: int = 0,
    docid: int = 0,
) -> str:
    """Deterministic prompt for one single-expression passage."""
    spans = [s for s in tag_temporal(passage)]
    if len(spans) != 1 or spans[0].is_relative:
        raise TMRLError(f"build_prompt needs exactly one absolute temporal expression, found {len(spans)}")
    schema = schema if schema is not None else schema_text()
    parts = [
        _HEADER,
        "* Allen relations and descriptions:\n" + rubric_text(),
        _INSTRUCTIONS.format(schema=schema),
    ]
    for i, demo in enumerate(demos, 1):
        body = demo.to_json() if isinstance(demo, TemporalAnnotation) else str(demo)
        parts.append(f"### Demonstration {i}\n{body}\n### End of Demonstration {i}")
    hint = spans[0]
    parts.append(
        "### Input\n"
        + json.dumps(
            {
                "query_id": query_id,
                "docid": docid,
                "query": passage,
                "tagger": [{"text": hint.text, "start": hint.start, "end": hint.end, "value": str(hint.interval)}],
            },
            ensure_ascii=False,
        )
    )
    return "\n\n".join(parts) + "\n"
