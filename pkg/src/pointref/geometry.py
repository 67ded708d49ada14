"""Planar primitives over image coordinates.

Coordinates are continuous pixels with the origin at the top-left corner and
``y`` growing downward. The image rectangle is the closed box ``[0, W] x [0, H]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .exceptions import DegenerateRay, DegenerateVector, NoIntersection, ValidationError

COINCIDENT_TOL = 1e-9
VECTOR_NORM_TOL = 1e-12


class Point2(NamedTuple):
    x: float
    y: float


def as_point(p) -> Point2:
    x, y = p
    x, y = float(x), float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"non-finite point {p!r}")
    return Point2(x, y)


@dataclass(frozen=True)
class GesturalKeypoints:
    """Pointing keypoints of one person in one image.

    ``elbow`` is carried through I/O but not used by any heatmap or loss.
    """

    eye: Point2
    fingertip: Point2
    wrist: Point2
    elbow: Optional[Point2] = None

    def __post_init__(self):
        for name in ("eye", "fingertip", "wrist", "elbow"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, as_point(value))
        if _coincident(self.eye, self.fingertip):
            raise DegenerateRay("eye coincides with fingertip", field="keypoints.eye")
        if _coincident(self.wrist, self.fingertip):
            raise DegenerateRay("wrist coincides with fingertip", field="keypoints.wrist")

    def start(self, line) -> Point2:
        """Ray start for ``line`` ("h2f" starts at the eye, "w2f" at the wrist)."""
        line = str(getattr(line, "value", line)).lower()
        if line == "h2f":
            return self.eye
        if line == "w2f":
            return self.wrist
        raise ValidationError(f"unknown pointing line {line!r}", field="line")


@dataclass(frozen=True)
class RaySegment:
    origin: Point2
    through: Point2
    border_end: Point2
    image_size: Tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.border_end.x - self.origin.x, self.border_end.y - self.origin.y)


def _coincident(a, b, tol=COINCIDENT_TOL) -> bool:
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


def _inside(p, width, height) -> bool:
    return 0.0 <= p[0] <= width and 0.0 <= p[1] <= height


def extend_ray_to_border(origin, through, image_size) -> RaySegment:
    """Extend the ray ``origin -> through`` until it leaves the image rectangle.

    The returned segment runs from ``origin`` to the point where the ray exits
    ``[0, W] x [0, H]``. Raises :class:`DegenerateRay` for coincident points and
    :class:`NoIntersection` when the ray never reaches the rectangle.
    """
    origin, through = as_point(origin), as_point(through)
    width, height = (float(v) for v in image_size)
    if not (width > 0 and height > 0):
        raise ValidationError(f"image size must be positive, got {image_size!r}", field="image_size")
    if _coincident(origin, through):
        raise DegenerateRay(f"ray origin {origin} coincides with {through}")

    dx, dy = through.x - origin.x, through.y - origin.y
    # Liang-Barsky clip of the full line against the rectangle, in units of (dx, dy).
    t_lo, t_hi = -math.inf, math.inf
    for p0, d, hi in ((origin.x, dx, width), (origin.y, dy, height)):
        if d == 0.0:
            if not (0.0 <= p0 <= hi):
                raise NoIntersection(f"ray from {origin} towards {through} misses the image")
            continue
        t0, t1 = (0.0 - p0) / d, (hi - p0) / d
        if t0 > t1:
            t0, t1 = t1, t0
        t_lo, t_hi = max(t_lo, t0), min(t_hi, t1)
    if t_lo > t_hi or t_hi < 0.0:
        raise NoIntersection(f"ray from {origin} towards {through} misses the image")

    end = Point2(origin.x + t_hi * dx, origin.y + t_hi * dy)
    # snap onto the edge that terminated the clip; removes 1-ulp drift
    end = Point2(min(max(end.x, 0.0), width), min(max(end.y, 0.0), height))
    return RaySegment(origin, through, end, (width, height))


def point_segment_distance(p, seg) -> float:
    """Euclidean distance from ``p`` to the closed segment ``origin..border_end``."""
    return float(segment_distance_field(np.asarray(as_point(p)), seg.origin, seg.border_end))


def segment_distance_field(points, a, b) -> np.ndarray:
    """Vectorised distance from an ``(..., 2)`` array of points to segment ``a..b``."""
    points = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    ap = points - a
    denom = float(ab @ ab)
    if denom == 0.0:
        t = np.zeros(points.shape[:-1])
    else:
        t = np.clip((ap @ ab) / denom, 0.0, 1.0)
    foot = ap - t[..., None] * ab
    return np.hypot(foot[..., 0], foot[..., 1])


def _vector(frm, to, name):
    v = np.subtract(as_point(to), as_point(frm))
    if math.hypot(*v) < VECTOR_NORM_TOL:
        raise DegenerateVector(f"{name} vector has zero length")
    return v


def alignment_cosine(anchor, tip, target) -> float:
    """Cosine of the angle between ``tip - anchor`` and ``target - anchor``."""
    u = _vector(anchor, tip, "pointing")
    v = _vector(anchor, target, "target")
    c = float(u @ v) / (math.hypot(*u) * math.hypot(*v))
    return min(1.0, max(-1.0, c))


def angular_deviation(axis_origin, axis_through, p) -> float:
    """Angle in radians between the axis direction and ``p - axis_origin``."""
    u = _vector(axis_origin, axis_through, "axis")
    v = _vector(axis_origin, p, "point")
    cross = u[0] * v[1] - u[1] * v[0]
    return math.atan2(abs(cross), float(u @ v))
