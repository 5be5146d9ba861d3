import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tadquery.geometry import (TemporalSegment, frames_to_segment, giou, interval_iou, iou, pairwise_cosine,
                               pairwise_iou, roi_pool, segment_to_frames)
from tadquery.ndgrad import ContractError, DiffArray, check_gradients, ops


def seg(start, end):
    return TemporalSegment.from_bounds(start, end)


def test_iou_hand_value():
    assert abs(iou(seg(0.3, 0.7), seg(0.4, 0.8)) - 0.6) < 1e-12


def test_giou_hand_value_for_disjoint_segments():
    assert abs(giou(seg(0.0, 0.2), seg(0.8, 1.0)) - (-0.6)) < 1e-12


def test_giou_of_touching_segments_is_zero():
    assert giou(seg(0.0, 0.5), seg(0.5, 1.0)) == pytest.approx(0.0, abs=1e-15)


def test_identity_and_disjoint_iou():
    a = seg(0.1, 0.4)
    assert iou(a, a) == 1.0 and giou(a, a) == 1.0
    assert iou(a, seg(0.5, 0.9)) == 0.0


def test_iou_uses_clamped_endpoints():
    # [-0.2, 0.4] clamps to [0, 0.4]
    assert iou(TemporalSegment(0.1, 0.6), seg(0.0, 0.4)) == pytest.approx(1.0)


def test_nonpositive_duration_is_a_contract_error():
    with pytest.raises(ContractError):
        TemporalSegment(0.5, 0.0)
    with pytest.raises(ContractError):
        iou(np.array([0.5, -0.1]), np.array([0.5, 0.2]))


def test_random_pair_properties():
    rng = np.random.default_rng(0)
    n = 10_000
    a = np.stack([rng.uniform(0, 1, n), rng.uniform(0.01, 1, n)], -1)
    b = np.stack([rng.uniform(0, 1, n), rng.uniform(0.01, 1, n)], -1)
    i_ab, i_ba = iou(a, b), iou(b, a)
    g_ab, g_ba = giou(a, b), giou(b, a)
    assert np.array_equal(i_ab, i_ba) and np.array_equal(g_ab, g_ba)
    assert np.all((i_ab >= 0) & (i_ab <= 1))
    assert np.all((g_ab > -1) & (g_ab <= 1))
    assert np.all(g_ab <= i_ab + 1e-15)
    np.testing.assert_array_equal(iou(a, a), 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.01, 0.5), st.floats(0.0, 0.5))
def test_giou_equals_iou_when_union_fills_hull(start, length, shift_fraction):
    a = seg(start, min(start + length, 1.0))
    b_start = a.start + shift_fraction * (a.end - a.start)  # overlaps or touches a
    b = seg(b_start, min(b_start + length, 1.0) if b_start + length > b_start else b_start + 0.01)
    assert giou(a, b) == pytest.approx(iou(a, b), abs=1e-12)


def test_pairwise_iou_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for size in range(1, 9):
        segs = np.stack([rng.uniform(0.1, 0.9, size), rng.uniform(0.05, 0.5, size)], -1)
        b = pairwise_iou(segs)
        oracle = np.array([[iou(TemporalSegment(*s), TemporalSegment(*t)) for t in segs] for s in segs])
        np.testing.assert_allclose(b, oracle, atol=1e-15)
        np.testing.assert_array_equal(np.diag(b), 1.0)


def test_pairwise_cosine_hand_values():
    a = pairwise_cosine(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]))
    assert a[0, 1] == pytest.approx(1 / np.sqrt(2), abs=1e-12)
    assert a[0, 2] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(np.diag(a), 1.0)


def test_frame_mapping_examples_and_round_trip():
    assert segment_to_frames(TemporalSegment(0.5, 1.0), 256) == (0.0, 255.0)
    assert segment_to_frames(TemporalSegment(0.5, 0.5), 101) == pytest.approx((25.0, 75.0), abs=1e-12)
    rng = np.random.default_rng(2)
    for _ in range(100):
        s = TemporalSegment(rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3))
        back = frames_to_segment(*segment_to_frames(s, 64), 64)
        assert back.midpoint == pytest.approx(s.midpoint, abs=1e-12)
        assert back.duration == pytest.approx(s.duration, abs=1e-12)


def test_roi_pool_constant_and_point_segments():
    feats = np.tile([1.5, -2.0, 0.25], (8, 1))
    np.testing.assert_allclose(roi_pool(feats, TemporalSegment(0.4, 0.3)).values, feats[0], rtol=1e-14)
    ramp = np.arange(16.0).reshape(8, 2)
    point = TemporalSegment(2 / 7, 1e-4)  # frame 2
    np.testing.assert_allclose(roi_pool(ramp, point).values, ramp[2])


def test_roi_pool_against_scalar_recomputation():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(8, 3))
    scale = 7.0
    expected = np.zeros(3)
    for f in np.linspace(0.25, 0.75, 8):
        x = f * scale
        lo = int(np.floor(x))
        w = x - lo
        expected += (1 - w) * feats[lo] + w * feats[min(lo + 1, 7)]
    expected /= 8
    np.testing.assert_allclose(roi_pool(feats, seg(0.25, 0.75)).values, expected, rtol=1e-12)


def test_iou_and_giou_gradients_match_finite_differences():
    for a_val, b_val in [([0.45, 0.3], [0.55, 0.25]), ([0.2, 0.1], [0.7, 0.2])]:
        a = DiffArray(np.array(a_val), requires_grad=True)
        b = DiffArray(np.array(b_val), requires_grad=True)
        for fn in (iou, giou):
            result = check_gradients(lambda: fn(a, b) * 1.0, [a, b], replay=False)
            assert result.passed(1e-6)


def test_interval_iou_in_seconds():
    assert interval_iou([0.0, 1.0], [0.5, 1.5]) == pytest.approx(1 / 3)
    assert interval_iou([0.0, 1.0], [2.0, 3.0]) == 0.0
