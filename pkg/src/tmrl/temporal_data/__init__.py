"""Temporal contrastive data augmentation pipeline."""

from .augment import (
    AugmentReport,
    FilterReport,
    GenerationResult,
    HTTPGenerationClient,
    MockGenerationClient,
    QueryType,
    Violation,
    augment_documents,
    classify_query,
    classify_query_confidence,
    consistency_check,
    generate_candidates,
    post_filter,
)
from .intervals import AllenRelation, Granularity, Interval, TemporalSpan, allen_relation
from .prompts import ALLEN_RUBRIC, build_prompt
from .schema import AugmentationRecord, Passage, TemporalAnnotation, TemporalQueryType, parse_record
from .splitter import SplitStats, split_passage, split_sentences
from .tagger import absolute_spans, tag_temporal

__all__ = [
    "ALLEN_RUBRIC", "AllenRelation", "AugmentReport", "AugmentationRecord", "FilterReport",
    "GenerationResult", "Granularity", "HTTPGenerationClient", "Interval", "MockGenerationClient",
    "Passage", "QueryType", "SplitStats", "TemporalAnnotation", "TemporalQueryType", "TemporalSpan",
    "Violation", "absolute_spans", "allen_relation", "augment_documents", "build_prompt",
    "classify_query", "classify_query_confidence", "consistency_check", "generate_candidates",
    "parse_record", "post_filter", "split_passage", "split_sentences", "tag_temporal",
]
