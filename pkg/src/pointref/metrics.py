"""Single-referent evaluation: IoU accuracy by size bucket, center distance, CLIP score."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .boxes import BBox, iou
from .exceptions import DimensionMismatch, ValidationError

DEFAULT_THRESHOLDS = (0.25, 0.5, 0.75)
SMALL_AREA_RATIO = 0.0048
LARGE_AREA_RATIO = 0.0176

CENTER_DISTANCE_CONVENTION = "L1 (|dx| + |dy|) between box centers in normalized image coordinates"


class SizeBucket(str, enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    ALL = "all"


BUCKET_ORDER = (SizeBucket.ALL, SizeBucket.SMALL, SizeBucket.MEDIUM, SizeBucket.LARGE)


@dataclass(frozen=True, eq=False)
class EvalRecord:
    image_id: str
    gt_box: BBox
    pred_box: BBox
    pred_embedding: Optional[np.ndarray] = None
    text_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "gt_box", BBox.validated(self.gt_box, "gt_box"))
        object.__setattr__(self, "pred_box", BBox.validated(self.pred_box, "pred_box"))
        if self.pred_embedding is not None and self.text_embedding is not None:
            if np.size(self.pred_embedding) != np.size(self.text_embedding):
                raise DimensionMismatch(f"{self.image_id}: embedding sizes differ")


def bucket_of(gt, small=SMALL_AREA_RATIO, large=LARGE_AREA_RATIO) -> SizeBucket:
    """Size bucket of a normalized box; boundaries belong to the larger bucket."""
    ratio = BBox(*gt).area()
    if ratio < small:
        return SizeBucket.SMALL
    if ratio < large:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


def _select(records, bucket, small, large):
    bucket = SizeBucket(bucket)
    if bucket is SizeBucket.ALL:
        return list(records)
    return [r for r in records if bucket_of(r.gt_box, small, large) is bucket]


def map_at(records: Sequence[EvalRecord], threshold: float, bucket=SizeBucket.ALL,
           small=SMALL_AREA_RATIO, large=LARGE_AREA_RATIO) -> float:
    """Fraction of records in ``bucket`` with ``iou(pred, gt) >= threshold``; NaN if the bucket is empty.

    With one ground-truth referent and one final prediction per image, this
    is the accuracy that the literature reports as mAP.
    """
    chosen = _select(records, bucket, small, large)
    if not chosen:
        return math.nan
    return sum(iou(r.pred_box, r.gt_box) >= threshold for r in chosen) / len(chosen)


def center_distance(gt, pred) -> float:
    (gx, gy), (px, py) = BBox(*gt).center(), BBox(*pred).center()
    return abs(gx - px) + abs(gy - py)


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    return float(a @ b) / float(np.linalg.norm(a) * np.linalg.norm(b))


def clip_metric(records: Sequence[EvalRecord], bucket=SizeBucket.ALL,
                small=SMALL_AREA_RATIO, large=LARGE_AREA_RATIO):
    """Mean cosine between prediction and text embeddings.

    Returns ``(mean, n_used, n_missing)``; records lacking either embedding
    are counted in ``n_missing`` and excluded from the mean.
    """
    chosen = _select(records, bucket, small, large)
    usable = [r for r in chosen if r.pred_embedding is not None and r.text_embedding is not None]
    missing = len(chosen) - len(usable)
    if not usable:
        return math.nan, 0, missing
    return float(np.mean([cosine(r.pred_embedding, r.text_embedding) for r in usable])), len(usable), missing


@dataclass
class BucketStats:
    count: int
    accuracy: Dict[str, Optional[float]] = field(default_factory=dict)
    center_distance: Optional[float] = None
    clip_score: Optional[float] = None
    clip_count: int = 0
    clip_missing: int = 0


@dataclass
class EvalReport:
    thresholds: tuple
    buckets: Dict[str, BucketStats]
    size_thresholds: tuple = (SMALL_AREA_RATIO, LARGE_AREA_RATIO)
    meta: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "center_distance_convention": CENTER_DISTANCE_CONVENTION,
            "thresholds": list(self.thresholds),
            "size_thresholds": list(self.size_thresholds),
            "meta": dict(self.meta),
            "buckets": {
                name: {
                    "count": s.count,
                    "accuracy": s.accuracy,
                    "center_distance": s.center_distance,
                    "clip_score": s.clip_score,
                    "clip_count": s.clip_count,
                    "clip_missing": s.clip_missing,
                }
                for name, s in self.buckets.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        order = [b.value for b in BUCKET_ORDER]
        names = sorted(d["buckets"], key=lambda n: order.index(n) if n in order else len(order))
        buckets = {name: BucketStats(**d["buckets"][name]) for name in names}
        return cls(tuple(d["thresholds"]), buckets, tuple(d["size_thresholds"]), dict(d.get("meta", {})))

    def to_text(self) -> str:
        keys = [_threshold_key(t) for t in self.thresholds]
        header = ["bucket", "n"] + [f"acc@{k}" for k in keys] + ["C_D", "CLIP"]
        rows = []
        for name, s in self.buckets.items():
            cells = [name, str(s.count)]
            cells += [_fmt(s.accuracy.get(k), pct=True) for k in keys]
            cells += [_fmt(s.center_distance), _fmt(s.clip_score)]
            rows.append(cells)
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = [f"# {k}: {v}" for k, v in sorted(self.meta.items())]
        lines.append(f"# C_D: {CENTER_DISTANCE_CONVENTION}")
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def _threshold_key(t) -> str:
    return f"{float(t):.2f}"


def _fmt(v, pct=False) -> str:
    if v is None:
        return "-"
    return f"{100 * v:.1f}" if pct else f"{v:.4f}"


def _none_if_nan(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def build_report(records: Sequence[EvalRecord], thresholds=DEFAULT_THRESHOLDS,
                 small=SMALL_AREA_RATIO, large=LARGE_AREA_RATIO, meta=None) -> EvalReport:
    """Fill every (threshold, bucket) cell; empty buckets keep count 0 and no accuracy."""
    if not 0 < small < large:
        raise ValidationError("need 0 < small < large size thresholds", field="size_thresholds")
    buckets = {}
    for bucket in BUCKET_ORDER:
        chosen = _select(records, bucket, small, large)
        stats = BucketStats(count=len(chosen))
        if chosen:
            stats.accuracy = {_threshold_key(t): map_at(chosen, t) for t in thresholds}
            stats.center_distance = float(np.mean([center_distance(r.gt_box, r.pred_box) for r in chosen]))
        clip, used, missing = clip_metric(chosen)
        stats.clip_score, stats.clip_count, stats.clip_missing = _none_if_nan(clip), used, missing
        buckets[bucket.value] = stats
    return EvalReport(tuple(float(t) for t in thresholds), buckets, (small, large), dict(meta or {}))
