"""Rule-based temporal expression tagger with date normalization.

Recognized forms, tried in this order at every position:

* ranges: ``from X to Y``, ``between X and Y``, ``1990-1995`` / ``1990–1995``
* full dates: ``2010-07-02``, ``2 July 2010``, ``July 2, 2010``
* month-year: ``July 2010``, ``April, 1906``
* decades: ``the 1990s``
* bare years 1000-2999
* relative words (``now``, ``today``, ``yesterday``, ...), which get no interval

An anchoring preposition directly before an expression ("In 1972",
"after July 2010") is kept in the surface text; the interval is that of the
bare expression.
"""

from __future__ import annotations

import re
from datetime import date

from .intervals import Granularity, Interval, TemporalSpan

_MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11, "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7, "aug": 8,
    "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}
MONTH = "(?:" + "|".join(sorted(_MONTHS, key=len, reverse=True)) + r")\b\.?"
YEAR = r"(?<![\d.,])(?:1\d{3}|2\d{3})(?![\d]|[.,]\d|s\b)"
DAY = r"(?:[12]\d|3[01]|0?[1-9])(?:st|nd|rd|th)?"

_ATOMS = {
    "iso": rf"(?P<y>1\d{{3}}|2\d{{3}})-(?P<mo>0[1-9]|1[0-2])-(?P<d>0[1-9]|[12]\d|3[01])(?!\d)",
    "dmy": rf"(?P<d>{DAY})\s+(?:of\s+)?(?P<mon>{MONTH}),?\s+(?P<y>{YEAR})",
    "mdy": rf"(?P<mon>{MONTH})\s+(?P<d>{DAY}),?\s+(?P<y>{YEAR})",
    "my": rf"(?P<mon>{MONTH}),?\s+(?P<y>{YEAR})",
    "decade": r"(?:the\s+)?(?P<dec>1\d{2}0|2\d{2}0)s\b",
    "year": rf"(?P<y>{YEAR})",
}
_ATOM_RE = {k: re.compile(v, re.IGNORECASE) for k, v in _ATOMS.items()}


def _strip_groups(pattern: str) -> str:
    return re.sub(r"\(\?P<\w+>", "(?:", pattern)


ATOM = "(?:" + "|".join(_strip_groups(p) for p in _ATOMS.values()) + ")"
_PREPS = (
    "in", "on", "at", "since", "after", "before", "during", "by", "until", "till",
    "around", "circa", "from", "through", "throughout", "of", "as of", "prior to",
    "shortly after", "shortly before", "early", "late", "mid",
)
PREP = r"(?:(?:" + "|".join(sorted((re.escape(p).replace(r"\ ", r"\s+") for p in _PREPS), key=len, reverse=True)) + r")\s+)?"
RELATIVE = (
    r"(?:now|today|tonight|yesterday|tomorrow|currently|nowadays|recently|"
    r"(?:this|last|next)\s+(?:year|month|week)|these\s+days|at\s+present)"
)

_RANGE_FROM = rf"from\s+(?P<a1>{ATOM})\s+(?:to|until|till|through)\s+(?P<b1>{ATOM})"
_RANGE_BETWEEN = rf"between\s+(?P<a2>{ATOM})\s+and\s+(?P<b2>{ATOM})"
_RANGE_DASH = rf"{PREP}(?P<a3>{YEAR})\s*[-–—]\s*(?P<b3>{YEAR})"
_SINGLE = rf"{PREP}(?P<single>{ATOM})"

MASTER = re.compile(
    rf"\b(?:{_RANGE_FROM}|{_RANGE_BETWEEN}|{_RANGE_DASH}|{_SINGLE}|(?P<rel>{RELATIVE})\b)",
    re.IGNORECASE,
)


def parse_atom(text: str) -> Interval | None:
    """Normalize a single (non-range) expression, or None if unrecognized."""
    text = text.strip()
    for kind, rx in _ATOM_RE.items():
        m = rx.fullmatch(text)
        if m is None:
            continue
        try:
            if kind == "decade":
                y = int(m["dec"])
                return Interval.years(y, y + 9)
            y = int(m["y"])
            if kind == "year":
                return Interval.year(y)
            mon = int(m["mo"]) if kind == "iso" else _MONTHS[m["mon"].rstrip(".").lower()]
            if kind == "my":
                return Interval.month(y, mon)
            d = int(re.match(r"\d+", m["d"]).group())
            return Interval.day(y, mon, d)
        except ValueError:
            # e.g. 31 February: fall back to month resolution
            return Interval.month(y, mon)
    return None


def _range(a: str, b: str) -> Interval | None:
    ia, ib = parse_atom(a), parse_atom(b)
    if ia is None or ib is None or ia.start > ib.end:
        return None
    return ia.span_to(ib)


def tag_temporal(text: str) -> list[TemporalSpan]:
    """Tag temporal expressions in ``text``; spans are ordered and disjoint."""
    spans: list[TemporalSpan] = []
    for m in MASTER.finditer(text):
        surface = m.group(0)
        if m["rel"] is not None:
            spans.append(TemporalSpan(surface, m.start(), m.end(), None, True))
            continue
        if m["a1"] is not None:
            interval = _range(m["a1"], m["b1"])
        elif m["a2"] is not None:
            interval = _range(m["a2"], m["b2"])
        elif m["a3"] is not None:
            interval = _range(m["a3"], m["b3"])
        else:
            interval = parse_atom(m["single"])
        if interval is None:
            continue
        spans.append(TemporalSpan(surface, m.start(), m.end(), interval, False))
    return spans


def absolute_spans(text: str) -> list[TemporalSpan]:
    return [s for s in tag_temporal(text) if not s.is_relative]


def has_relative(text: str) -> bool:
    return any(s.is_relative for s in tag_temporal(text))


def format_interval(interval: Interval) -> str:
    """Render an interval back as the most natural surface form."""
    s, e, g = interval.start, interval.end, interval.granularity
    if g is Granularity.YEAR and s.month == 1 and s.day == 1 and e.month == 12 and e.day == 31:
        return str(s.year) if s.year == e.year else f"from {s.year} to {e.year}"
    if g is Granularity.MONTH and s.day == 1 and (s.year, s.month) == (e.year, e.month):
        return f"{s.strftime('%B')} {s.year}"
    if s == e:
        return f"{s.day} {s.strftime('%B')} {s.year}"
    return f"from {_fmt_day(s)} to {_fmt_day(e)}"


def _fmt_day(d: date) -> str:
    return f"{d.day} {d.strftime('%B')} {d.year}"
