"""Tolerant parsers for free-text model outputs.

Model answers arrive as prose; these parsers extract structured values and
never raise on arbitrary content (except ``parse_bbox``/``parse_count``,
whose contracts require a value). Rejected fragments are reported in
diagnostics rather than silently dropped.

Box grammar: ``name:[x1, y1, x2, y2]`` with arbitrary whitespace. Values in
[0, 1] are used as-is; larger values are treated as pixel coordinates and
normalized by the supplied image size — without a size such segments are
rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .boxes import Bbox
from .errors import ParseError

_NUM = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"

# any name:[ ... ] fragment; the bracket body is vetted separately so that
# malformed bodies produce diagnostics instead of being skipped invisibly
_SEGMENT = re.compile(
    r"([A-Za-z][A-Za-z0-9_' -]*?)\s*:\s*\[([^\]]*)\]")

# bare bracketed list (no class prefix), for single-box answers
_BARE_BOX = re.compile(r"\[([^\]]*)\]")

_CHOICE = re.compile(r"^\s*([A-Da-d])(?![A-Za-z0-9])")
_INT = re.compile(r"[-+]?\d+")


@dataclass
class ParsedDetections:
    """Structured detections plus reasons for every rejected fragment."""

    entries: list = field(default_factory=list)  # (class_name, bbox, confidence)
    diagnostics: list = field(default_factory=list)

    def serialize(self) -> str:
        from .boxes import format_bbox

        return ", ".join(f"{name}:{format_bbox(bbox)}"
                         for name, bbox, _ in self.entries)


def _coerce_box(numbers, image_size) -> tuple:
    """Validate four floats into a normalized bbox.

    Returns (bbox, None) or (None, reason). ``image_size`` is (width,
    height) for interpreting pixel coordinates.
    """
    x1, y1, x2, y2 = numbers
    if max(numbers) > 1.0:
        if image_size is None:
            return None, "coordinates exceed 1 and no image size was supplied"
        w, h = image_size
        if w <= 0 or h <= 0:
            return None, f"bad image size {image_size}"
        x1, x2 = x1 / w, x2 / w
        y1, y2 = y1 / h, y2 / h
    x1, y1, x2, y2 = (min(max(v, 0.0), 1.0) for v in (x1, y1, x2, y2))
    if x1 >= x2 or y1 >= y2:
        return None, f"inverted or empty box ({x1:.3f}, {y1:.3f}, {x2:.3f}, {y2:.3f})"
    return (x1, y1, x2, y2), None


def _parse_numbers(body: str):
    """Bracket body -> list of floats, or None if any piece is not a number."""
    pieces = [p.strip() for p in body.split(",")]
    if any(not p for p in pieces):
        return None
    out = []
    for p in pieces:
        if not re.fullmatch(_NUM, p):
            return None
        out.append(float(p))
    return out


def parse_detection_output(text: str, image_size=None) -> ParsedDetections:
    """Extract every class-name:[4 numbers] segment from arbitrary text.

    Never raises on content; garbage yields an empty result (and, where a
    fragment looked like a segment but was malformed, a diagnostic). All
    detections get confidence 1.0 in emission order — text outputs carry no
    scores.
    """
    result = ParsedDetections()
    if not isinstance(text, str) or not text.strip():
        return result
    for match in _SEGMENT.finditer(text):
        raw_name, body = match.group(1), match.group(2)
        name = raw_name.strip().strip(",").strip()
        numbers = _parse_numbers(body)
        if numbers is None:
            result.diagnostics.append(
                f"segment {name!r}: bracket body {body!r} is not a number list")
            continue
        if len(numbers) != 4:
            result.diagnostics.append(
                f"segment {name!r}: expected 4 numbers, got {len(numbers)}")
            continue
        bbox, reason = _coerce_box(numbers, image_size)
        if bbox is None:
            result.diagnostics.append(f"segment {name!r}: {reason}")
            continue
        if not name:
            result.diagnostics.append("segment with empty class name skipped")
            continue
        result.entries.append((name, bbox, 1.0))
    return result


def parse_bbox(text: str, image_size=None) -> Bbox:
    """First valid bounding box in the text; raises ParseError if none."""
    if not isinstance(text, str):
        raise ParseError("expected text")
    reasons = []
    for match in _BARE_BOX.finditer(text):
        numbers = _parse_numbers(match.group(1))
        if numbers is None or len(numbers) != 4:
            reasons.append(f"bracket {match.group(0)!r} is not a 4-number list")
            continue
        bbox, reason = _coerce_box(numbers, image_size)
        if bbox is None:
            reasons.append(reason)
            continue
        return bbox
    detail = "; ".join(reasons) if reasons else "no bracketed 4-number list found"
    raise ParseError(f"no valid box in output: {detail}")


def parse_count(text: str):
    """Counting answer: a choice letter or an integer.

    A standalone leading A-D (optional punctuation after it) wins over any
    digits; otherwise the first integer in the text is returned. Returns
    either a single uppercase letter (str) or an int.
    """
    if not isinstance(text, str):
        raise ParseError("expected text")
    m = _CHOICE.match(text)
    if m:
        return m.group(1).upper()
    m = _INT.search(text)
    if m:
        return int(m.group(0))
    raise ParseError(f"no count or choice letter in {text!r}")
