"""Day-resolution intervals, temporal spans and Allen's interval relations."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date, timedelta


class Granularity(str, enum.Enum):
    DAY = "day"
    MONTH = "month"
    YEAR = "year"

    @property
    def rank(self) -> int:
        return {"day": 0, "month": 1, "year": 2}[self.value]


class AllenRelation(str, enum.Enum):
    BEFORE = "Before"
    AFTER = "After"
    MEETS = "Meets"
    MET_BY = "MetBy"
    OVERLAPS = "Overlaps"
    OVERLAPPED_BY = "OverlappedBy"
    STARTS = "Starts"
    STARTED_BY = "StartedBy"
    DURING = "During"
    CONTAINS = "Contains"
    FINISHES = "Finishes"
    FINISHED_BY = "FinishedBy"
    EQUALS = "Equals"
    EMPTY = "Empty"

    @property
    def converse(self) -> "AllenRelation":
        return _CONVERSE[self]


_CONVERSE = {
    AllenRelation.BEFORE: AllenRelation.AFTER,
    AllenRelation.MEETS: AllenRelation.MET_BY,
    AllenRelation.OVERLAPS: AllenRelation.OVERLAPPED_BY,
    AllenRelation.STARTS: AllenRelation.STARTED_BY,
    AllenRelation.DURING: AllenRelation.CONTAINS,
    AllenRelation.FINISHES: AllenRelation.FINISHED_BY,
}
_CONVERSE.update({v: k for k, v in list(_CONVERSE.items())})
_CONVERSE[AllenRelation.EQUALS] = AllenRelation.EQUALS
_CONVERSE[AllenRelation.EMPTY] = AllenRelation.EMPTY

PROPER_RELATIONS = tuple(r for r in AllenRelation if r is not AllenRelation.EMPTY)


@dataclass(frozen=True, order=True)
class Interval:
    """Closed day interval ``[start, end]``."""

    start: date
    end: date
    granularity: Granularity = Granularity.DAY

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")

    @classmethod
    def year(cls, y: int) -> "Interval":
        return cls(date(y, 1, 1), date(y, 12, 31), Granularity.YEAR)

    @classmethod
    def years(cls, y0: int, y1: int) -> "Interval":
        return cls(date(y0, 1, 1), date(y1, 12, 31), Granularity.YEAR)

    @classmethod
    def month(cls, y: int, m: int) -> "Interval":
        nxt = date(y + (m == 12), m % 12 + 1, 1)
        return cls(date(y, m, 1), nxt - timedelta(days=1), Granularity.MONTH)

    @classmethod
    def day(cls, y: int, m: int, d: int) -> "Interval":
        day = date(y, m, d)
        return cls(day, day, Granularity.DAY)

    def span_to(self, other: "Interval") -> "Interval":
        """Interval from this one's start to ``other``'s end."""
        coarse = max(self.granularity, other.granularity, key=lambda g: g.rank)
        return Interval(self.start, other.end, coarse)

    def __str__(self) -> str:
        return f"[{self.start.isoformat()}, {self.end.isoformat()}]"


@dataclass(frozen=True)
class TemporalSpan:
    """A tagged temporal expression located in its source text."""

    text: str
    start: int
    end: int
    interval: Interval | None = None
    is_relative: bool = False

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid character range [{self.start}, {self.end})")
        if self.is_relative and self.interval is not None:
            raise ValueError("relative expressions carry no interval")

    def shifted(self, offset: int) -> "TemporalSpan":
        return TemporalSpan(self.text, self.start + offset, self.end + offset, self.interval, self.is_relative)


def allen_relation(a: Interval, b: Interval) -> AllenRelation:
    """Relation of ``a`` (Event A) relative to ``b`` (Event B).

    Closed day intervals are compared as half-open ``[start, end + 1 day)``,
    so intervals touching at adjacent days (hence adjacent months or years)
    meet, and sharing a single day counts as overlap.
    """
    a0, a1 = a.start.toordinal(), a.end.toordinal() + 1
    b0, b1 = b.start.toordinal(), b.end.toordinal() + 1
    if a1 < b0:
        return AllenRelation.BEFORE
    if b1 < a0:
        return AllenRelation.AFTER
    if a1 == b0:
        return AllenRelation.MEETS
    if b1 == a0:
        return AllenRelation.MET_BY
    if a0 == b0 and a1 == b1:
        return AllenRelation.EQUALS
    if a0 == b0:
        return AllenRelation.STARTS if a1 < b1 else AllenRelation.STARTED_BY
    if a1 == b1:
        return AllenRelation.FINISHES if a0 > b0 else AllenRelation.FINISHED_BY
    if b0 < a0 and a1 < b1:
        return AllenRelation.DURING
    if a0 < b0 and b1 < a1:
        return AllenRelation.CONTAINS
    return AllenRelation.OVERLAPS if a0 < b0 else AllenRelation.OVERLAPPED_BY
