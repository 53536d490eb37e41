import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from icare.geometry import (
    Box,
    iou,
    iou_matrix,
    location_feature,
    nms,
    roi_pool,
    roi_pool_array,
)
from icare.numcore import Tensor, grad_check
from icare.numcore.gradcheck import projected_loss
from oracles import iou_exact, nms_bruteforce, roi_pool_bruteforce

# sub-pixel grid: areas stay representable, so float IoU can be compared to the exact one
coord = st.integers(0, 3200).map(lambda v: v / 64)


@st.composite
def boxes(draw):
    x0, x1 = sorted((draw(coord), draw(coord)))
    y0, y1 = sorted((draw(coord), draw(coord)))
    return Box(x0, y0, x1, y1)


def test_iou_examples():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 6, 6)) == 0.0
    assert iou(a, Box(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_touching_edges_is_zero():
    assert iou(Box(0, 0, 1, 1), Box(1, 0, 2, 1)) == 0.0


def test_box_rejects_inverted_extents():
    with pytest.raises(ValueError):
        Box(2, 0, 1, 1)


@given(boxes(), boxes())
def test_iou_symmetric_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    if a.area > 0:
        assert iou(a, a) == 1.0


@given(boxes(), boxes())
def test_iou_matrix_agrees_with_exact(a, b):
    assert iou_matrix(a.as_array(), b.as_array())[0, 0] == pytest.approx(iou_exact(a.as_array(), b.as_array()),
                                                                         abs=1e-12)


def test_nms_examples():
    b = np.array([[0, 0, 4, 4]], dtype=float)
    assert nms(b, [0.3], 0.5) == [0]
    same = np.array([[0, 0, 4, 4], [0, 0, 4, 4]], dtype=float)
    assert nms(same, [0.9, 0.8], 0.5) == [0]
    assert nms(same, [0.8, 0.9], 0.5) == [1]
    disjoint = np.array([[0, 0, 1, 1], [5, 5, 6, 6]], dtype=float)
    assert nms(disjoint, [0.2, 0.7], 0.5) == [1, 0]


def test_nms_equal_scores_lower_index_wins():
    same = np.array([[0, 0, 4, 4], [0, 0, 4, 4]], dtype=float)
    assert nms(same, [0.5, 0.5], 0.5) == [0]


def test_nms_threshold_is_strict():
    a, b = [0, 0, 2, 2], [1, 0, 3, 2]  # IoU exactly 1/3
    assert nms(np.array([a, b], float), [0.9, 0.8], 1 / 3) == [0, 1]
    assert nms(np.array([a, b], float), [0.9, 0.8], 0.33) == [0]


def test_nms_min_score_and_max_keep():
    b = np.array([[0, 0, 1, 1], [2, 2, 3, 3], [4, 4, 5, 5]], float)
    assert nms(b, [0.9, 0.4, 0.6], 0.5, min_score=0.5) == [0, 2]
    assert nms(b, [0.9, 0.4, 0.6], 0.5, max_keep=2) == [0, 2]


@settings(max_examples=60, deadline=None)
@given(st.lists(boxes(), min_size=1, max_size=12), st.floats(0, 1), st.floats(0, 1), st.randoms())
def test_nms_properties(bs, t1, t2, rnd):
    arr = np.array([b.as_array() for b in bs])
    scores = [rnd.random() for _ in bs]
    lo, hi = sorted((t1, t2))
    kept = nms(arr, scores, lo)
    assert set(kept) <= set(range(len(bs)))
    for i in kept:
        for j in kept:
            if i != j:
                assert iou(arr[i], arr[j]) <= lo
    assert len(nms(arr, scores, hi)) >= len(kept)
    assert kept == nms_bruteforce(arr.tolist(), scores, lo)


# -- roi pooling -----------------------------------------------------------------


def test_roi_pool_constant_map():
    fm = np.full((2, 6, 6), 3.5)
    out, _ = roi_pool_array(fm, Box(1, 1, 5, 4), 4)
    assert out.shape == (2, 4, 4) and np.all(out == 3.5)


def test_roi_pool_quadrant_maxima():
    fm = np.arange(16.0).reshape(1, 4, 4)
    out, _ = roi_pool_array(fm, Box(0, 0, 4, 4), 2)
    np.testing.assert_array_equal(out[0], [[5, 7], [13, 15]])


def test_roi_pool_single_cell_replicated():
    fm = np.random.default_rng(0).standard_normal((3, 5, 5))
    out, _ = roi_pool_array(fm, Box(2, 3, 3, 4), 2)
    for c in range(3):
        assert np.all(out[c] == fm[c, 3, 2])


def test_roi_pool_degenerate_uses_containing_cell():
    fm = np.random.default_rng(1).standard_normal((1, 5, 5))
    out, _ = roi_pool_array(fm, Box(2.5, 1.2, 2.5, 1.2), 4)
    assert np.all(out == fm[0, 1, 2])


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_roi_pool_matches_bruteforce(seed, p):
    rng = np.random.default_rng(seed)
    fm = rng.standard_normal((2, 8, 8))
    x0, x1 = np.sort(rng.uniform(-1, 9, 2))
    y0, y1 = np.sort(rng.uniform(-1, 9, 2))
    out, _ = roi_pool_array(fm, Box(x0, y0, x1, y1), p)
    np.testing.assert_array_equal(out, np.array(roi_pool_bruteforce(fm.tolist(), (x0, y0, x1, y1), p)))


def test_roi_pool_backward_routes_to_argmax():
    rng = np.random.default_rng(2)
    fm = Tensor(rng.standard_normal((2, 8, 8)), requires_grad=True)
    roi = Box(0.5, 1.0, 7.0, 6.5)
    report = grad_check(lambda: projected_loss(roi_pool(fm, roi, 3)), {"fm": fm})
    assert report.max_rel_error <= 1e-6
    out = roi_pool(fm, roi, 3)
    out.sum().backward()
    assert np.count_nonzero(fm.grad) <= 2 * 9


# -- location feature ------------------------------------------------------------------


def test_location_feature_examples():
    np.testing.assert_array_equal(location_feature(Box(10, 5, 30, 25), 96, 96).raw(), [20, 25, 20, 20])
    np.testing.assert_array_equal(location_feature(Box(5, 5, 5, 5), 96, 96).raw(), [5, 5, 0, 0])
    np.testing.assert_array_equal(location_feature(Box(0, 0, 96, 80), 96, 80).as_array(), [0.5, 1, 1, 1])


@given(boxes(), st.floats(-20, 20), st.floats(-20, 20))
def test_location_translation_equivariance(b, dx, dy):
    assume(abs(dx) > 1e-9 or abs(dy) > 1e-9)
    f0 = location_feature(b, 96, 96).raw()
    f1 = location_feature(Box(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy), 96, 96).raw()
    np.testing.assert_allclose(f1[:2], f0[:2] + [dx, dy], atol=1e-9)
    np.testing.assert_allclose(f1[2:], f0[2:], atol=1e-9)


@given(boxes())
def test_location_normalised_in_unit_range(b):
    v = location_feature(b, 50, 50).as_array()
    assert np.all(v >= 0) and np.all(v <= 1)
