"""Augmentation record schema.

The pydantic models reproduce the annotation JSON schema field-for-field, so
``TemporalAnnotation.model_json_schema()`` is the schema handed to the
generator and ``TemporalAnnotation.model_validate`` is the validator.
"""

from __future__ import annotations

import enum
import json

from pydantic import BaseModel, ConfigDict, ValidationError

from .intervals import AllenRelation


class TemporalQueryType(str, enum.Enum):
    EXPLICIT = "Explicit"
    IMPLICIT = "Implicit"
    TEMPORAL_ANSWER = "TemporalAnswer"


class Passage(BaseModel):
    model_config = ConfigDict(extra="forbid", title="Passage")

    docid: int
    text: str
    temporal: list[str]
    temporal_query_type: TemporalQueryType
    allen_relation: AllenRelation

    @property
    def is_dated(self) -> bool:
        return self.temporal_query_type is not TemporalQueryType.TEMPORAL_ANSWER


class TemporalAnnotation(BaseModel):
    model_config = ConfigDict(extra="forbid", title="TemporalAnnotation")

    query_id: int
    query: str
    temporal: list[str]
    positive_passages: list[Passage]
    negative_passages: list[Passage]

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), ensure_ascii=False, separators=(",", ":"))


AugmentationRecord = TemporalAnnotation

REQUIRED_FIELDS = ("query_id", "query", "temporal", "positive_passages", "negative_passages")
PASSAGE_FIELDS = ("docid", "text", "temporal", "temporal_query_type", "allen_relation")


def _drop_closed(node):
    if isinstance(node, dict):
        node.pop("additionalProperties", None)
        for v in node.values():
            _drop_closed(v)
    return node


def json_schema() -> dict:
    """Published schema layout; extra keys are still rejected on validation."""
    return _drop_closed(TemporalAnnotation.model_json_schema())


def schema_text() -> str:
    return json.dumps(json_schema(), separators=(", ", ": "))


def parse_record(line: str) -> TemporalAnnotation:
    """Parse one JSON line; raises ``ValueError`` with a reason on failure."""
    try:
        json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON: {exc.msg} at column {exc.colno}") from None
    try:
        return TemporalAnnotation.model_validate_json(line, strict=True)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise ValueError(f"schema violation at {loc or '<root>'}: {first['msg']}") from None
