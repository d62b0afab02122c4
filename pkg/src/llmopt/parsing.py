"""Extract and validate solutions from raw model replies.

Parsers never raise on bad input: every string maps to either a payload or
one ``ParseErrorKind``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Any


class ParseErrorKind(str, enum.Enum):
    NO_TAG = "NoTag"
    MULTIPLE_TAGS = "MultipleTags"
    MALFORMED_NUMBER = "MalformedNumber"
    DIMENSION_MISMATCH = "DimensionMismatch"
    OUT_OF_BOUNDS = "OutOfBounds"
    DUPLICATE_ELEMENT = "DuplicateElement"
    MISSING_ELEMENT = "MissingElement"
    UNKNOWN_ELEMENT = "UnknownElement"


@dataclass(frozen=True)
class ParseOutcome:
    payload: tuple[Any, ...] | None = None
    error: ParseErrorKind | None = None

    def __post_init__(self) -> None:
        if (self.payload is None) == (self.error is None):
            raise ValueError("exactly one of payload or error must be set")

    @property
    def ok(self) -> bool:
        return self.error is None


def _tag_pattern(tag: str) -> re.Pattern[str]:
    return re.compile(rf"<\s*{tag}\s*>(.*?)<\s*/\s*{tag}\s*>", re.IGNORECASE | re.DOTALL)


_SOLUTION_RE = _tag_pattern("solution")
_TRACE_RE = _tag_pattern("trace")
_DECIMAL_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_INT_RE = re.compile(r"[+-]?\d+")
# longer index strings cannot name a city and would trip int() digit limits
_MAX_INDEX_DIGITS = 9


def _single_payload(pattern: re.Pattern[str], response: str) -> str | ParseErrorKind:
    matches = pattern.findall(response)
    if not matches:
        return ParseErrorKind.NO_TAG
    if len(matches) > 1:
        return ParseErrorKind.MULTIPLE_TAGS
    return matches[0]


def _tokens(payload: str) -> list[str]:
    return [tok.strip() for tok in payload.split(",")]


def parse_solution(response: str, dimension: int, bounds: tuple[float, float]) -> ParseOutcome:
    body = _single_payload(_SOLUTION_RE, response)
    if isinstance(body, ParseErrorKind):
        return ParseOutcome(error=body)
    values = []
    for tok in _tokens(body):
        if not _DECIMAL_RE.fullmatch(tok):
            return ParseOutcome(error=ParseErrorKind.MALFORMED_NUMBER)
        v = float(tok)
        if not math.isfinite(v):
            return ParseOutcome(error=ParseErrorKind.MALFORMED_NUMBER)
        values.append(v)
    if len(values) != dimension:
        return ParseOutcome(error=ParseErrorKind.DIMENSION_MISMATCH)
    lo, hi = bounds
    if any(not lo <= v <= hi for v in values):
        return ParseOutcome(error=ParseErrorKind.OUT_OF_BOUNDS)
    return ParseOutcome(payload=tuple(values))


def parse_trace(response: str, n_cities: int) -> ParseOutcome:
    body = _single_payload(_TRACE_RE, response)
    if isinstance(body, ParseErrorKind):
        return ParseOutcome(error=body)
    tokens = _tokens(body)
    if any(not _INT_RE.fullmatch(tok) for tok in tokens):
        return ParseOutcome(error=ParseErrorKind.MALFORMED_NUMBER)
    if any(len(tok.lstrip("+-")) > _MAX_INDEX_DIGITS for tok in tokens):
        return ParseOutcome(error=ParseErrorKind.UNKNOWN_ELEMENT)
    order = [int(tok) for tok in tokens]
    if any(not 0 <= i < n_cities for i in order):
        return ParseOutcome(error=ParseErrorKind.UNKNOWN_ELEMENT)
    if len(set(order)) != len(order):
        return ParseOutcome(error=ParseErrorKind.DUPLICATE_ELEMENT)
    if len(order) != n_cities:
        return ParseOutcome(error=ParseErrorKind.MISSING_ELEMENT)
    return ParseOutcome(payload=tuple(order))
