"""Pointing-prior rasters: Gaussian ray and conic heatmaps.

Pixel ``(row j, column i)`` is sampled at its center ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import DegenerateRay, DimensionMismatch, ValidationError
from .geometry import (
    GesturalKeypoints,
    as_point,
    extend_ray_to_border,
    segment_distance_field,
    _coincident,
)

DEFAULT_SIGMA = 25.0


class PointingLine(str, enum.Enum):
    HEAD_TO_FINGERTIP = "h2f"
    WRIST_TO_FINGERTIP = "w2f"


class HeatmapStyle(str, enum.Enum):
    GAUSSIAN_RAY = "gaussian"
    CONIC = "conic"


@dataclass(frozen=True)
class HeatmapSpec:
    style: HeatmapStyle = HeatmapStyle.GAUSSIAN_RAY
    line: PointingLine = PointingLine.HEAD_TO_FINGERTIP
    sigma: float = DEFAULT_SIGMA
    cone_half_angle: float = math.radians(15.0)

    def __post_init__(self):
        object.__setattr__(self, "style", HeatmapStyle(self.style))
        object.__setattr__(self, "line", PointingLine(self.line))
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive", field="sigma")
        if not 0 < self.cone_half_angle < math.pi / 2:
            raise ValidationError("cone half-angle must lie in (0, pi/2)", field="cone_half_angle")


@dataclass(frozen=True, eq=False)
class RasterHeatmap:
    """Immutable ``height x width`` grid of values in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("heatmap values must be 2-D", field="values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValidationError("heatmap values must lie in [0, 1]", field="values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((int(height), int(width))))

    def __eq__(self, other):
        if not isinstance(other, RasterHeatmap):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    __hash__ = None


def pixel_centers(image_size) -> np.ndarray:
    """``(H, W, 2)`` array of pixel-center coordinates ``(x, y)``."""
    width, height = _raster_shape(image_size)
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def _raster_shape(image_size):
    width, height = image_size
    if int(width) != width or int(height) != height or width <= 0 or height <= 0:
        raise ValidationError(f"raster size must be positive integers, got {image_size!r}", field="image_size")
    return int(width), int(height)


def gaussian_ray_values(points, start, fingertip, sigma, image_size) -> np.ndarray:
    """Evaluate the Gaussian ray prior at arbitrary points (no rasterization)."""
    seg = extend_ray_to_border(start, fingertip, image_size)
    d = segment_distance_field(points, seg.origin, seg.border_end)
    return np.exp(-(d ** 2) / (2.0 * float(sigma) ** 2))


def gaussian_ray_heatmap(kp: GesturalKeypoints, line, sigma=DEFAULT_SIGMA, image_size=None) -> RasterHeatmap:
    """Rasterize ``exp(-d^2 / 2 sigma^2)`` where ``d`` is the distance to the pointing segment.

    The segment starts at the eye (``"h2f"``) or wrist (``"w2f"``), passes
    through the fingertip and stops at the image border. The Gaussian is not
    truncated.
    """
    if not sigma > 0:
        raise ValidationError("sigma must be positive", field="sigma")
    start = kp.start(line)
    values = gaussian_ray_values(pixel_centers(image_size), start, kp.fingertip, sigma, image_size)
    return RasterHeatmap(values)


def conic_values(points, start, fingertip, half_angle) -> np.ndarray:
    start, fingertip = as_point(start), as_point(fingertip)
    if _coincident(start, fingertip):
        raise DegenerateRay(f"cone apex {start} coincides with fingertip")
    axis = np.subtract(fingertip, start)
    rel = np.asarray(points, dtype=float) - np.asarray(start)
    along = rel @ axis
    across = np.abs(rel[..., 0] * axis[1] - rel[..., 1] * axis[0])
    deviation = np.arctan2(across, along)
    # the apex itself has no direction; along > 0 keeps only the forward half-plane
    return ((deviation <= half_angle) & (along > 0)).astype(np.float64)


def conic_heatmap(kp: GesturalKeypoints, line, half_angle=math.radians(15.0), image_size=None) -> RasterHeatmap:
    """Binary cone of ``half_angle`` radians around the pointing axis, forward of the start point."""
    if not 0 < half_angle < math.pi / 2:
        raise ValidationError("cone half-angle must lie in (0, pi/2)", field="cone_half_angle")
    _raster_shape(image_size)
    values = conic_values(pixel_centers(image_size), kp.start(line), kp.fingertip, half_angle)
    return RasterHeatmap(values)


def make_heatmap(kp: GesturalKeypoints, spec: HeatmapSpec, image_size) -> RasterHeatmap:
    if spec.style is HeatmapStyle.GAUSSIAN_RAY:
        return gaussian_ray_heatmap(kp, spec.line, spec.sigma, image_size)
    return conic_heatmap(kp, spec.line, spec.cone_half_angle, image_size)


def merge_heatmaps(a: RasterHeatmap, b: RasterHeatmap) -> RasterHeatmap:
    """Elementwise ``min(a + b, 1)``."""
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"cannot merge {a.values.shape} with {b.values.shape}")
    return RasterHeatmap(np.minimum(a.values + b.values, 1.0))


def render_heatmap(h: RasterHeatmap, path) -> None:
    """Write ``h`` as an 8-bit grayscale PNG (value ``v`` becomes ``round(255 v)``)."""
    pixels = np.rint(h.values * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(Path(path), format="PNG")


def load_heatmap(path) -> RasterHeatmap:
    with Image.open(Path(path)) as img:
        pixels = np.asarray(img.convert("L"), dtype=np.float64)
    return RasterHeatmap(pixels / 255.0)


class PointingHeatmap(TransformerMixin, BaseEstimator):
    """Transformer turning keypoint rows into pointing heatmaps.

    Each row of ``X`` is ``(eye_x, eye_y, fingertip_x, fingertip_y, wrist_x,
    wrist_y)`` in pixels. :meth:`transform` returns an array of shape
    ``(n_samples, height, width)``.

    Parameters
    ----------
    image_size : tuple of int
        Raster ``(width, height)`` in pixels.
    style : {"gaussian", "conic"}
    line : {"h2f", "w2f", "merged"}
        ``"merged"`` sums the two single-line heatmaps and clips at 1.
    sigma : float
        Gaussian width in pixels of the generated raster.
    cone_half_angle : float
        Cone half-angle in radians (conic style only).
    """

    def __init__(self, image_size=(64, 64), style="gaussian", line="h2f", sigma=DEFAULT_SIGMA,
                 cone_half_angle=math.radians(15.0)):
        self.image_size = image_size
        self.style = style
        self.line = line
        self.sigma = sigma
        self.cone_half_angle = cone_half_angle

    def fit(self, X=None, y=None):
        lines = ("h2f", "w2f") if self.line == "merged" else (self.line,)
        self.specs_ = [HeatmapSpec(self.style, ln, self.sigma, self.cone_half_angle) for ln in lines]
        self.image_size_ = _raster_shape(self.image_size)
        if X is not None:
            self.n_features_in_ = check_array(X).shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "specs_"):
            self.fit()
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != 6:
            raise DimensionMismatch(f"expected 6 keypoint columns, got {X.shape[1]}")
        width, height = self.image_size_
        out = np.empty((X.shape[0], height, width))
        for n, row in enumerate(X):
            kp = GesturalKeypoints(eye=row[0:2], fingertip=row[2:4], wrist=row[4:6])
            maps = [make_heatmap(kp, spec, self.image_size_) for spec in self.specs_]
            merged = maps[0]
            for extra in maps[1:]:
                merged = merge_heatmaps(merged, extra)
            out[n] = merged.values
        return out
