"""Axis-aligned boxes in normalized corner form, plus IoU and GIoU."""

from __future__ import annotations

import math
from typing import NamedTuple

from .exceptions import ValidationError


class BBox(NamedTuple):
    """Corner-form box in normalized image fractions."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @classmethod
    def validated(cls, coords, field="box"):
        try:
            x0, y0, x1, y1 = (float(c) for c in coords)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{field}: expected four numbers, got {coords!r}", field=field) from exc
        if not all(math.isfinite(c) for c in (x0, y0, x1, y1)):
            raise ValidationError(f"{field}: non-finite coordinate", field=field)
        if not (x0 < x1 and y0 < y1):
            raise ValidationError(f"{field}: need x_min < x_max and y_min < y_max, got {coords!r}", field=field)
        return cls(x0, y0, x1, y1)

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    def to_center(self):
        return (*self.center(), self.width, self.height)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def center(self):
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def area(self) -> float:
        return self.width * self.height


def _intersection(a, b) -> float:
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    return iw * ih


def _hull_area(a, b) -> float:
    return (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))


def _area(a) -> float:
    return (a[2] - a[0]) * (a[3] - a[1])


def iou(a, b) -> float:
    inter = _intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (_area(a) + _area(b) - inter)


def giou(a, b) -> float:
    """Generalized IoU: IoU minus the fraction of the enclosing hull not covered by the union."""
    inter = _intersection(a, b)
    union = _area(a) + _area(b) - inter
    hull = _hull_area(a, b)
    # hull >= union exactly; rounding can flip the sign for nested boxes
    return iou(a, b) - max(hull - union, 0.0) / hull
