"""Bounding-box primitives shared by the data generator and the scorer.

Boxes are ``(x1, y1, x2, y2)`` with ``x1 < x2`` and ``y1 < y2``. Normalized
boxes live in ``[0, 1]``. Serialization uses exactly three decimal places, so
a normalized coordinate survives a format/parse round trip within 5e-4.
"""

from __future__ import annotations

from .errors import ValidationError

Bbox = tuple[float, float, float, float]


def validate_bbox(bbox, normalized: bool = True) -> Bbox:
    """Check ordering (and range, for normalized boxes); return a clean tuple."""
    try:
        x1, y1, x2, y2 = (float(v) for v in bbox)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bbox must be 4 numbers, got {bbox!r}") from exc
    if not (x1 < x2 and y1 < y2):
        raise ValidationError(f"bbox corners must be ordered (x1<x2, y1<y2), got {bbox!r}")
    if normalized and not (0.0 <= x1 and 0.0 <= y1 and x2 <= 1.0 and y2 <= 1.0):
        raise ValidationError(f"normalized bbox must lie in [0,1], got {bbox!r}")
    return (x1, y1, x2, y2)


def format_bbox(bbox) -> str:
    """Render a normalized box as ``[0.100, 0.200, 0.500, 0.800]``."""
    x1, y1, x2, y2 = validate_bbox(bbox)
    return f"[{x1:.3f}, {y1:.3f}, {x2:.3f}, {y2:.3f}]"
