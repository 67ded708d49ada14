"""Training-loss terms as pure functions, with closed-form gradients.

Gradients are taken with respect to the *predicted* quantities only. At
hinge, ``abs`` and ``min``/``max`` kinks the zero branch is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .boxes import BBox, giou, _area
from .exceptions import DegenerateVector, LogitDimensionMismatch, NonDifferentiablePoint, ValidationError
from .geometry import VECTOR_NORM_TOL, alignment_cosine, as_point

HINGE_KINK_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    box: float = 2.0
    referent_alignment: float = 1.0
    center: float = 10.0
    gesture: float = 10.0
    soft_token: float = 1.0
    contrastive: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValidationError(f"loss weight {f.name} must be >= 0", field=f.name)

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class BoxLossWeights:
    """Relative weights of the two box-loss terms."""

    l1: float = 1.0
    giou: float = 1.0


def _sign(x):
    return np.sign(np.asarray(x, dtype=float))


# referent alignment ------------------------------------------------------


def referent_alignment_loss(anchor, tip, pred_center, gt_center) -> float:
    """``max(0, CS_pred - CS_gt)`` with both cosines measured from the ground-truth anchor.

    ``anchor`` is the eye for the head-to-fingertip model and the wrist for the
    wrist-to-fingertip model.
    """
    cs_pred = alignment_cosine(anchor, tip, pred_center)
    cs_gt = alignment_cosine(anchor, tip, gt_center)
    return max(0.0, cs_pred - cs_gt)


def _cosine_grad_wrt_target(anchor, tip, target):
    u = np.subtract(as_point(tip), as_point(anchor))
    v = np.subtract(as_point(target), as_point(anchor))
    nu, nv = math.hypot(*u), math.hypot(*v)
    if nu < VECTOR_NORM_TOL or nv < VECTOR_NORM_TOL:
        raise DegenerateVector("zero-length vector in alignment cosine")
    cos = float(u @ v) / (nu * nv)
    return u / (nu * nv) - cos * v / nv ** 2


def referent_alignment_grad(anchor, tip, pred_center, gt_center) -> np.ndarray:
    """Gradient of :func:`referent_alignment_loss` w.r.t. ``pred_center``."""
    cs_pred = alignment_cosine(anchor, tip, pred_center)
    cs_gt = alignment_cosine(anchor, tip, gt_center)
    if cs_pred - cs_gt <= 0.0:
        return np.zeros(2)
    return _cosine_grad_wrt_target(anchor, tip, pred_center)


# center ------------------------------------------------------------------


def center_loss(pred_center, gt_center) -> float:
    """L1 distance between predicted and ground-truth centers."""
    return float(np.abs(np.subtract(pred_center, gt_center)).sum())


def center_grad(pred_center, gt_center) -> np.ndarray:
    return _sign(np.subtract(pred_center, gt_center))


# boxes -------------------------------------------------------------------


def giou_grad(pred, gt) -> np.ndarray:
    """Gradient of ``giou(pred, gt)`` w.r.t. the four corners of ``pred``."""
    x0, y0, x1, y1 = pred
    g0, h0, g1, h1 = gt
    iw = min(x1, g1) - max(x0, g0)
    ih = min(y1, h1) - max(y0, h0)
    overlap = iw > 0 and ih > 0
    inter = iw * ih if overlap else 0.0
    union = _area(pred) + _area(gt) - inter
    cw = max(x1, g1) - min(x0, g0)
    ch = max(y1, h1) - min(y0, h0)
    hull = cw * ch

    d_area = np.array([-(y1 - y0), -(x1 - x0), (y1 - y0), (x1 - x0)])
    d_inter = np.zeros(4)
    if overlap:
        d_inter = np.array([
            -ih if x0 > g0 else 0.0,
            -iw if y0 > h0 else 0.0,
            ih if x1 < g1 else 0.0,
            iw if y1 < h1 else 0.0,
        ])
    d_hull = np.array([
        -ch if x0 < g0 else 0.0,
        -cw if y0 < h0 else 0.0,
        ch if x1 > g1 else 0.0,
        cw if y1 > h1 else 0.0,
    ])
    d_union = d_area - d_inter
    # giou = I/U - 1 + U/C
    return d_inter / union - inter * d_union / union ** 2 + d_union / hull - union * d_hull / hull ** 2


def box_loss(pred, gt, weights: BoxLossWeights = BoxLossWeights()) -> float:
    """``l1 * sum|pred - gt| + giou * (1 - giou(pred, gt))``."""
    l1 = float(np.abs(np.subtract(pred, gt)).sum())
    return weights.l1 * l1 + weights.giou * (1.0 - giou(pred, gt))


def box_loss_grad(pred, gt, weights: BoxLossWeights = BoxLossWeights()) -> np.ndarray:
    return weights.l1 * _sign(np.subtract(pred, gt)) - weights.giou * giou_grad(pred, gt)


# gesture -----------------------------------------------------------------


def _keypoint_pairs(pred_kp, gt_kp):
    for name in ("eye", "fingertip", "wrist", "elbow"):
        p, g = getattr(pred_kp, name, None), getattr(gt_kp, name, None)
        if p is not None and g is not None:
            yield p, g


def softmax_cross_entropy(logits, target) -> float:
    logits = np.asarray(logits, dtype=float).ravel()
    if not 0 <= int(target) < logits.size:
        raise LogitDimensionMismatch(f"class index {target} out of range for {logits.size} logits")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[int(target)])


def gesture_loss(pred_kp, gt_kp, pred_arm_logits, gt_arm_class) -> float:
    """Summed per-keypoint L1 plus softmax cross-entropy of the arm classifier.

    The elbow contributes only when both keypoint sets carry one.
    """
    l1 = sum(abs(p[0] - g[0]) + abs(p[1] - g[1]) for p, g in _keypoint_pairs(pred_kp, gt_kp))
    return float(l1) + softmax_cross_entropy(pred_arm_logits, gt_arm_class)


# total -------------------------------------------------------------------

LOSS_PARTS = ("box", "referent_alignment", "center", "gesture", "soft_token", "contrastive")


def total_loss(parts: Mapping[str, float], weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of the six loss parts.

    ``soft_token`` and ``contrastive`` are computed elsewhere and passed in as
    scalars; missing parts count as zero.
    """
    unknown = set(parts) - set(LOSS_PARTS)
    if unknown:
        raise ValidationError(f"unknown loss parts {sorted(unknown)}", field="parts")
    return float(sum(getattr(weights, name) * float(parts.get(name, 0.0)) for name in LOSS_PARTS))


# gradient checking -------------------------------------------------------


@dataclass(frozen=True)
class DifferentiableLoss:
    """A loss of a flat parameter vector with its analytic gradient.

    ``branches`` maps parameters to a hashable description of every
    piecewise choice (hinge side, abs sign, min/max winner). ``margin``
    returns the distance to the nearest kink in the same units the kink
    test uses.
    """

    name: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    branches: Callable[[np.ndarray], tuple]
    margin: Callable[[np.ndarray], float]


def referent_alignment_probe(anchor, tip, gt_center) -> DifferentiableLoss:
    def cs_gap(c):
        return alignment_cosine(anchor, tip, c) - alignment_cosine(anchor, tip, gt_center)

    return DifferentiableLoss(
        "referent_alignment",
        lambda c: referent_alignment_loss(anchor, tip, c, gt_center),
        lambda c: referent_alignment_grad(anchor, tip, c, gt_center),
        lambda c: (cs_gap(c) > 0,),
        lambda c: abs(cs_gap(c)),
    )


def center_probe(gt_center) -> DifferentiableLoss:
    gt = np.asarray(gt_center, dtype=float)
    return DifferentiableLoss(
        "center",
        lambda c: center_loss(c, gt),
        lambda c: center_grad(c, gt),
        lambda c: tuple(np.sign(np.asarray(c) - gt)),
        lambda c: float(np.min(np.abs(np.asarray(c) - gt))),
    )


def _box_branches(pred, gt):
    x0, y0, x1, y1 = pred
    g0, h0, g1, h1 = gt
    return (
        x0 > g0, y0 > h0, x1 < g1, y1 < h1,
        min(x1, g1) > max(x0, g0), min(y1, h1) > max(y0, h0),
        x0 < g0, y0 < h0, x1 > g1, y1 > h1,
    )


def _box_margin(pred, gt):
    # every kink is an equality between a pred coordinate and a gt coordinate on the same axis
    xs = [abs(p - g) for p in (pred[0], pred[2]) for g in (gt[0], gt[2])]
    ys = [abs(p - g) for p in (pred[1], pred[3]) for g in (gt[1], gt[3])]
    return min(xs + ys)


def giou_probe(gt) -> DifferentiableLoss:
    gt = BBox(*gt)
    return DifferentiableLoss(
        "giou",
        lambda b: giou(b, gt),
        lambda b: giou_grad(b, gt),
        lambda b: _box_branches(b, gt),
        lambda b: _box_margin(b, gt),
    )


def box_loss_probe(gt, weights: BoxLossWeights = BoxLossWeights()) -> DifferentiableLoss:
    gt = BBox(*gt)
    return DifferentiableLoss(
        "box",
        lambda b: box_loss(b, gt, weights),
        lambda b: box_loss_grad(b, gt, weights),
        lambda b: _box_branches(b, gt) + tuple(np.sign(np.subtract(b, gt))),
        lambda b: _box_margin(b, gt),
    )


def relative_error(analytic, numeric, floor=1e-8) -> np.ndarray:
    analytic, numeric = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def central_difference(fn, params, epsilon=1e-6) -> np.ndarray:
    x0 = np.asarray(params, dtype=float)
    grad = np.empty_like(x0)
    for j in range(x0.size):
        x = x0.copy()
        x[j] = x0[j] + epsilon
        f_plus = fn(x)
        x[j] = x0[j] - epsilon
        f_minus = fn(x)
        grad[j] = (f_plus - f_minus) / (2 * epsilon)
    return grad


def grad_check(loss: DifferentiableLoss, params: Sequence[float], epsilon: float = 1e-6,
               kink_tol: Optional[float] = HINGE_KINK_TOL) -> float:
    """Max relative error between the analytic gradient and central differences.

    Raises :class:`NonDifferentiablePoint` when ``params`` lies within
    ``kink_tol`` of a kink, or when any finite-difference stencil point falls
    on a different branch than ``params`` itself.
    """
    x0 = np.asarray(params, dtype=float)
    if kink_tol is not None and loss.margin(x0) < kink_tol:
        raise NonDifferentiablePoint(f"{loss.name}: parameters within {kink_tol} of a kink")
    base = loss.branches(x0)
    for j in range(x0.size):
        for step in (epsilon, -epsilon):
            x = x0.copy()
            x[j] += step
            if loss.branches(x) != base:
                raise NonDifferentiablePoint(f"{loss.name}: finite-difference stencil crosses a kink")
    numeric = central_difference(loss.value, x0, epsilon)
    analytic = loss.gradient(x0)
    return float(relative_error(analytic, numeric).max())
