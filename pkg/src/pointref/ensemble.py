"""Inference-time fusion of the head-to-fingertip and wrist-to-fingertip models.

Each model supplies candidates sorted by descending confidence. Every
strategy returns one of its input candidates unchanged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from .boxes import BBox
from .exceptions import DimensionMismatch, MissingEmbedding, ValidationError, ZeroVector

DEFAULT_TOP2_THRESHOLD = 0.95
DEFAULT_FUSION_SCALE = 0.04
DEFAULT_SMALL_AREA_RATIO = 0.0048


class Source(str, enum.Enum):
    H2F = "H2F"
    W2F = "W2F"


@dataclass(frozen=True, eq=False)
class Candidate:
    box: BBox
    confidence: float
    source: Source
    rank: int = 0
    image_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "box", BBox(*self.box))
        object.__setattr__(self, "source", Source(self.source))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]", field="confidence")
        if self.image_embedding is not None:
            emb = np.array(self.image_embedding, dtype=float).ravel()
            emb.setflags(write=False)
            object.__setattr__(self, "image_embedding", emb)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.source.value, self.rank)


@dataclass(frozen=True)
class QueryContext:
    text_embedding: np.ndarray
    image_size: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        emb = np.array(self.text_embedding, dtype=float).ravel()
        emb.setflags(write=False)
        object.__setattr__(self, "text_embedding", emb)


@dataclass(frozen=True)
class EnsembleConfig:
    top2_threshold: float = DEFAULT_TOP2_THRESHOLD
    fusion_scale: float = DEFAULT_FUSION_SCALE
    small_area_ratio: float = DEFAULT_SMALL_AREA_RATIO

    def __post_init__(self):
        if not 0.0 <= self.top2_threshold <= 1.0:
            raise ValidationError("top2_threshold must lie in [0, 1]", field="top2_threshold")
        if not self.fusion_scale > 0:
            raise ValidationError("fusion_scale must be positive", field="fusion_scale")
        if not 0.0 < self.small_area_ratio < 1.0:
            raise ValidationError("small_area_ratio must lie in (0, 1)", field="small_area_ratio")


def clip_sim(image_embedding, text_embedding) -> float:
    """``max(100 * cos(image, text), 0)``."""
    a = np.asarray(image_embedding, dtype=float).ravel()
    b = np.asarray(text_embedding, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"embedding sizes differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cannot take cosine of a zero embedding")
    return max(100.0 * float(a @ b) / (na * nb), 0.0)


def _sim(c: Candidate, ctx: QueryContext) -> float:
    if c.image_embedding is None:
        raise MissingEmbedding(f"candidate {c.key} has no image embedding")
    return clip_sim(c.image_embedding, ctx.text_embedding)


def _prefer_h2f(c: Candidate):
    return (c.source is Source.H2F, -c.rank)


def _top(cands: Sequence[Candidate], n: int, name: str):
    if len(cands) < n:
        raise ValidationError(f"{name} needs at least {n} candidate(s), got {len(cands)}", field=name)
    return list(cands[:n])


def confidence_only(top1_h2f: Candidate, top1_w2f: Candidate) -> Candidate:
    """Pick the more confident top-1 box; ties go to H2F."""
    return top1_h2f if top1_h2f.confidence >= top1_w2f.confidence else top1_w2f


def clip_only_top1(top1_h2f: Candidate, top1_w2f: Candidate, ctx: QueryContext) -> Candidate:
    """Pick the top-1 box with the larger CLIP similarity; ties go to H2F."""
    return top1_h2f if _sim(top1_h2f, ctx) >= _sim(top1_w2f, ctx) else top1_w2f


def top2_threshold_candidates(cands_h2f, cands_w2f, threshold) -> list:
    h2f, w2f = _top(cands_h2f, 2, "cands_h2f"), _top(cands_w2f, 2, "cands_w2f")
    pool = [h2f[0], w2f[0]]
    pool += [c for c in (h2f[1], w2f[1]) if c.confidence >= threshold]
    return pool


def clip_only_top2_threshold(cands_h2f, cands_w2f, ctx: QueryContext,
                             threshold: float = DEFAULT_TOP2_THRESHOLD) -> Candidate:
    """Highest CLIP similarity among both top-1 boxes and any rank-2 box with confidence >= threshold.

    Ties prefer H2F, then the lower rank, so the result collapses to
    :func:`clip_only_top1` whenever no rank-2 box is admitted.
    """
    pool = top2_threshold_candidates(cands_h2f, cands_w2f, threshold)
    return max(pool, key=lambda c: (_sim(c, ctx), *_prefer_h2f(c)))


def clip_fusion(cands_h2f, cands_w2f, ctx: QueryContext,
                scale: float = DEFAULT_FUSION_SCALE) -> Candidate:
    """Highest ``confidence + scale * clip_sim`` over the top-2 boxes of both models.

    Ties prefer higher confidence, then H2F, then the lower rank.
    """
    pool = _top(cands_h2f, 2, "cands_h2f") + _top(cands_w2f, 2, "cands_w2f")
    return max(pool, key=lambda c: (c.confidence + scale * _sim(c, ctx), c.confidence, *_prefer_h2f(c)))


def size_reference_ratio(cands_h2f, cands_w2f) -> float:
    """Area ratio of the more confident top-1 box (boxes are normalized, so area is the ratio)."""
    ref = confidence_only(_top(cands_h2f, 1, "cands_h2f")[0], _top(cands_w2f, 1, "cands_w2f")[0])
    return ref.box.area()


def cape(cands_h2f, cands_w2f, ctx: QueryContext, cfg: EnsembleConfig = EnsembleConfig()) -> Candidate:
    """CLIP fusion for small referents, thresholded top-2 CLIP selection otherwise."""
    if size_reference_ratio(cands_h2f, cands_w2f) < cfg.small_area_ratio:
        return clip_fusion(cands_h2f, cands_w2f, ctx, cfg.fusion_scale)
    return clip_only_top2_threshold(cands_h2f, cands_w2f, ctx, cfg.top2_threshold)


STRATEGIES = ("confidence", "clip-top1", "clip-top2", "clip-fusion", "cape")


def run_strategy(name: str, cands_h2f, cands_w2f, ctx: Optional[QueryContext],
                 cfg: EnsembleConfig = EnsembleConfig()) -> Candidate:
    if name == "confidence":
        return confidence_only(cands_h2f[0], cands_w2f[0])
    if ctx is None:
        raise MissingEmbedding(f"strategy {name!r} needs a text embedding")
    if name == "clip-top1":
        return clip_only_top1(cands_h2f[0], cands_w2f[0], ctx)
    if name == "clip-top2":
        return clip_only_top2_threshold(cands_h2f, cands_w2f, ctx, cfg.top2_threshold)
    if name == "clip-fusion":
        return clip_fusion(cands_h2f, cands_w2f, ctx, cfg.fusion_scale)
    if name == "cape":
        return cape(cands_h2f, cands_w2f, ctx, cfg)
    raise ValidationError(f"unknown strategy {name!r}; expected one of {STRATEGIES}", field="strategy")


@dataclass(frozen=True)
class EnsembleInput:
    """Everything one image contributes to an ensemble decision."""

    cands_h2f: Sequence[Candidate]
    cands_w2f: Sequence[Candidate]
    context: Optional[QueryContext] = None
    image_id: Optional[str] = field(default=None, compare=False)


class PointingEnsemble(BaseEstimator):
    """Estimator wrapper selecting one candidate per image.

    The strategies have no learned state; :meth:`fit` only validates the
    parameters, so the object composes with scikit-learn tooling such as
    ``clone`` and ``get_params``.

    Parameters
    ----------
    strategy : {"confidence", "clip-top1", "clip-top2", "clip-fusion", "cape"}
    top2_threshold : float
        Minimum confidence for a rank-2 box to enter CLIP selection.
    fusion_scale : float
        Weight of the CLIP similarity in the fused score.
    small_area_ratio : float
        Area ratio below which ``cape`` switches to CLIP fusion.
    """

    def __init__(self, strategy="cape", top2_threshold=DEFAULT_TOP2_THRESHOLD,
                 fusion_scale=DEFAULT_FUSION_SCALE, small_area_ratio=DEFAULT_SMALL_AREA_RATIO):
        self.strategy = strategy
        self.top2_threshold = top2_threshold
        self.fusion_scale = fusion_scale
        self.small_area_ratio = small_area_ratio

    def fit(self, X=None, y=None):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}", field="strategy")
        self.config_ = EnsembleConfig(self.top2_threshold, self.fusion_scale, self.small_area_ratio)
        return self

    def predict(self, X: Sequence[EnsembleInput]) -> list:
        if not hasattr(self, "config_"):
            self.fit()
        return [run_strategy(self.strategy, x.cands_h2f, x.cands_w2f, x.context, self.config_) for x in X]

    def score(self, X, y) -> float:
        """Fraction of images whose selected box reaches IoU 0.5 with ``y``."""
        from .metrics import iou

        picks = self.predict(X)
        if not picks:
            return math.nan
        return sum(iou(p.box, g) >= 0.5 for p, g in zip(picks, y)) / len(picks)
