import math

import numpy as np
import pytest
import shapely
from hypothesis import assume, given, strategies as st

from pointref.boxes import BBox, giou, iou
from pointref.exceptions import LogitDimensionMismatch, NonDifferentiablePoint
from pointref.geometry import GesturalKeypoints
from pointref.losses import (
    BoxLossWeights,
    LossWeights,
    box_loss,
    box_loss_probe,
    center_loss,
    center_probe,
    gesture_loss,
    giou_probe,
    grad_check,
    referent_alignment_loss,
    referent_alignment_probe,
    total_loss,
)


def area_oracle_giou(a, b):
    pa, pb = shapely.box(*a), shapely.box(*b)
    union = pa.union(pb).area
    hull = shapely.box(*pa.union(pb).bounds).area
    return pa.intersection(pb).area / union - (hull - union) / hull


@st.composite
def boxes(draw):
    x0, x1 = sorted(draw(st.lists(st.floats(0, 1), min_size=2, max_size=2, unique=True)))
    y0, y1 = sorted(draw(st.lists(st.floats(0, 1), min_size=2, max_size=2, unique=True)))
    assume(x1 - x0 > 1e-6 and y1 - y0 > 1e-6)
    return BBox(x0, y0, x1, y1)


# referent alignment


def test_referent_alignment_examples():
    assert referent_alignment_loss((0, 0), (1, 0), (0.3, 0.7), (0.3, 0.7)) == 0.0
    for pred in [(5, 1), (-1, 0), (0, 3)]:
        assert referent_alignment_loss((0, 0), (1, 0), pred, (2, 0)) == 0.0
    assert referent_alignment_loss((0, 0), (1, 0), (2, 0), (0, 1)) == pytest.approx(1.0)


@given(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
def test_referent_alignment_bounded(pred, gt):
    assume(math.hypot(*pred) > 1e-3 and math.hypot(*gt) > 1e-3)
    v = referent_alignment_loss((0, 0), (1, 1), pred, gt)
    assert 0.0 <= v <= 2.0


# center


@pytest.mark.parametrize("p, g, expected", [((0.4, 0.4), (0.4, 0.4), 0.0), ((0.2, 0.3), (0.5, 0.3), 0.3),
                                            ((0, 0), (1, 1), 2.0)])
def test_center_loss_examples(p, g, expected):
    assert center_loss(p, g) == pytest.approx(expected)


# giou / box loss


def test_giou_examples():
    a = BBox(0.1, 0.2, 0.4, 0.9)
    assert giou(a, a) == pytest.approx(1.0)
    assert giou((0, 0, 0.5, 1), (0.5, 0, 1, 1)) == pytest.approx(0.0, abs=1e-15)
    assert giou((0, 0, 0.2, 0.2), (0.8, 0.8, 1, 1)) == pytest.approx(-0.92)


@given(boxes(), boxes())
def test_giou_properties(a, b):
    g = giou(a, b)
    assert -1 <= g <= 1
    assert g <= iou(a, b) + 1e-12
    assert g == pytest.approx(giou(b, a), abs=1e-12)
    assert g == pytest.approx(area_oracle_giou(a, b), abs=1e-9)


def test_giou_equals_iou_when_hull_is_union():
    a, b = BBox(0.1, 0.1, 0.5, 0.5), BBox(0.3, 0.1, 0.7, 0.5)
    assert giou(a, b) == pytest.approx(iou(a, b))
    c = BBox(0.3, 0.3, 0.7, 0.7)
    assert giou(a, c) < iou(a, c)


def test_box_loss_examples():
    gt = BBox(0.4, 0.4, 0.6, 0.6)
    assert box_loss(gt, gt) == 0.0
    assert box_loss((0, 0, 0.2, 0.2), (0.8, 0.8, 1, 1)) == pytest.approx(3.2 + 1.92)
    pred = BBox(0.5, 0.4, 0.7, 0.6)
    expected = 0.2 + (1 - area_oracle_giou(pred, gt))
    assert box_loss(pred, gt) == pytest.approx(expected, abs=1e-12)
    assert box_loss(pred, gt, BoxLossWeights(l1=0.0, giou=1.0)) == pytest.approx(1 - area_oracle_giou(pred, gt))


# gesture


def test_gesture_loss_examples():
    gt = GesturalKeypoints(eye=(0.1, 0.1), fingertip=(0.3, 0.2), wrist=(0.2, 0.3))
    assert gesture_loss(gt, gt, [50.0, -50.0], 0) == pytest.approx(0.0, abs=1e-12)
    assert gesture_loss(gt, gt, [0.0, 0.0], 1) == pytest.approx(math.log(2))
    assert math.log(2) == pytest.approx(0.693147, abs=1e-6)
    moved = GesturalKeypoints(eye=(0.2, 0.1), fingertip=(0.4, 0.2), wrist=(0.3, 0.3))
    assert gesture_loss(moved, gt, [0.0, 0.0], 0) == pytest.approx(0.3 + math.log(2))
    with pytest.raises(LogitDimensionMismatch):
        gesture_loss(gt, gt, [0.0, 0.0], 2)


# total


def test_total_loss_examples():
    names = ("box", "referent_alignment", "center", "gesture", "soft_token", "contrastive")
    assert total_loss({n: 0.0 for n in names}) == 0.0
    assert total_loss({n: 1.0 for n in names}) == 25.0
    assert total_loss({n: 1.0 for n in names}, LossWeights(0, 0, 0, 0, 0, 0)) == 0.0
    assert LossWeights().as_tuple() == (2, 1, 10, 10, 1, 1)
    with pytest.raises(ValueError):
        LossWeights(box=-1)
    with pytest.raises(ValueError):
        total_loss({"bogus": 1.0})


@given(st.lists(st.floats(0, 10), min_size=6, max_size=6), st.floats(0, 5))
def test_total_loss_linear(parts, k):
    names = ("box", "referent_alignment", "center", "gesture", "soft_token", "contrastive")
    d = dict(zip(names, parts))
    scaled = {n: k * v for n, v in d.items()}
    assert total_loss(scaled) == pytest.approx(k * total_loss(d), rel=1e-12, abs=1e-12)


# gradients


def test_grad_check_on_each_loss():
    assert grad_check(referent_alignment_probe((0.1, 0.1), (0.3, 0.2), (0.2, 0.9)), [0.9, 0.4]) < 1e-4
    assert grad_check(center_probe((0.5, 0.5)), [0.2, 0.7]) < 1e-4
    assert grad_check(giou_probe((0.2, 0.2, 0.6, 0.7)), [0.3, 0.1, 0.8, 0.5]) < 1e-4
    assert grad_check(giou_probe((0.0, 0.0, 0.2, 0.2)), [0.5, 0.5, 0.9, 0.8]) < 1e-4
    assert grad_check(box_loss_probe((0.2, 0.2, 0.6, 0.7)), [0.3, 0.1, 0.8, 0.5]) < 1e-4


def test_grad_check_flags_kinks():
    with pytest.raises(NonDifferentiablePoint):
        grad_check(referent_alignment_probe((0, 0), (1, 0), (1, 1)), [2.0, 2.0])
    with pytest.raises(NonDifferentiablePoint):
        grad_check(giou_probe((0.2, 0.2, 0.6, 0.7)), [0.2, 0.1, 0.8, 0.5])
    with pytest.raises(NonDifferentiablePoint):
        grad_check(center_probe((0.5, 0.5)), [0.5, 0.1])
    # stencil straddling a kink is caught even with the margin test disabled
    with pytest.raises(NonDifferentiablePoint):
        grad_check(giou_probe((0.2, 0.2, 0.6, 0.7)), [0.2 + 5e-7, 0.1, 0.8, 0.5], kink_tol=None)


def test_grad_check_detects_wrong_gradient():
    probe = center_probe((0.5, 0.5))
    broken = type(probe)("broken", probe.value, lambda c: 2 * probe.gradient(c), probe.branches, probe.margin)
    assert grad_check(broken, [0.2, 0.7]) > 0.1


def test_hinge_inactive_gradient_is_zero():
    probe = referent_alignment_probe((0, 0), (1, 0), (2, 0))
    np.testing.assert_array_equal(probe.gradient(np.array([0.5, 3.0])), [0.0, 0.0])


def test_giou_of_nested_boxes_never_exceeds_iou():
    # union rounds above the hull for this pair
    a = BBox(0.380918901719199, 0.11676222924669903, 0.6435381391962783, 0.6840418374181084)
    b = BBox(0.4468134904152219, 0.1733211687569033, 0.6130473593937578, 0.35949028107876024)
    assert giou(a, b) == iou(a, b)
