import math

import numpy as np
import pytest

from tadquery.inference import (DETECTION_HEADER, DetectionRecord, WindowPlacement, format_detections,
                                merge_windows, read_detections, score_detections, soft_nms, write_detections)


def rec(start, end, score, video="v", cls=0):
    return DetectionRecord(video, start, end, cls, score)


def hard_nms(records):
    """Greedy NMS that drops anything overlapping a kept record at all."""
    remaining = sorted(range(len(records)), key=lambda i: -records[i].score)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(records[best])
        b = records[best]
        remaining = [i for i in remaining
                     if min(b.end, records[i].end) - max(b.start, records[i].start) <= 0]
    return kept


TEN_RECORDS = [
    rec(0.0, 2.0, 0.95), rec(0.5, 2.5, 0.90), rec(1.9, 4.0, 0.85), rec(4.0, 6.0, 0.80),
    rec(5.0, 7.0, 0.70), rec(8.0, 9.0, 0.65), rec(8.5, 9.5, 0.60), rec(10.0, 12.0, 0.55),
    rec(12.0, 13.0, 0.50), rec(3.0, 11.0, 0.40),
]


def test_identical_segments_decay_by_e_to_minus_two():
    out = soft_nms([rec(1.0, 2.0, 0.9), rec(1.0, 2.0, 0.8)], sigma=0.5)
    assert out[0].score == 0.9
    assert abs(out[1].score - 0.8 * math.exp(-2)) <= 1e-9


def test_single_and_disjoint_records_are_unchanged():
    assert soft_nms([rec(0, 1, 0.3)]) == [rec(0, 1, 0.3)]
    out = soft_nms([rec(0, 1, 0.7), rec(2, 3, 0.6)])
    assert [r.score for r in out] == [0.7, 0.6]
    assert soft_nms([]) == []


def test_tiny_sigma_equals_hard_nms():
    out = soft_nms(TEN_RECORDS, sigma=1e-6)
    assert out == hard_nms(TEN_RECORDS)


def test_soft_nms_never_increases_scores():
    rng = np.random.default_rng(0)
    starts = rng.uniform(0, 10, 40)
    records = [rec(s, s + rng.uniform(0.5, 3), float(rng.uniform(0.01, 1))) for s in starts]
    original = {(r.start, r.end): r.score for r in records}
    for r in soft_nms(records):
        assert 0 < r.score <= original[(r.start, r.end)]


def test_merge_keeps_detections_in_separate_places():
    records = [rec(0, 1, 0.9), rec(20, 21, 0.8), rec(40, 41, 0.7, cls=1)]
    assert sorted(merge_windows(records), key=lambda r: r.start) == records


def test_merge_decays_cross_window_duplicates():
    merged = merge_windows([rec(3, 5, 0.9), rec(3, 5, 0.9)])
    assert merged[0].score == 0.9
    assert merged[1].score == pytest.approx(0.9 * math.exp(-2), abs=1e-12)


def test_merge_with_strong_suppression_prunes_duplicates():
    merged = merge_windows([rec(3, 5, 0.9), rec(3, 5, 0.9)], sigma=0.1)
    assert len(merged) == 1  # 0.9 * e^-10 falls below the 1e-3 prune threshold


def test_score_detections_examples():
    place = WindowPlacement("v", origin=64, length=256, valid=256, seconds_per_snippet=0.2)
    out = score_detections(np.array([[0.0]]), np.array([[0.5, 0.2]]), np.array([[0.8, 0.5]]), place)
    assert out[0].score == pytest.approx(0.2, abs=1e-15)
    assert out[0].start == pytest.approx((64 + 0.4 * 255) * 0.2)
    assert out[0].end == pytest.approx((64 + 0.6 * 255) * 0.2)
    plain = score_detections(np.array([[1.3]]), np.array([[0.5, 0.2]]), None, place)
    assert plain[0].score == pytest.approx(1 / (1 + math.exp(-1.3)))
    assert score_detections(np.array([[5.0]]), np.array([[0.5, 0.2]]), np.array([[0.0, 0.9]]), place) == []


def test_score_detections_keeps_top_n_in_rank_order():
    place = WindowPlacement("v", 0, 32, 32, 1.0)
    logits = np.array([[0.0, 1.0], [2.0, 1.0], [-1.0, 0.5]])
    segs = np.array([[0.2, 0.1], [0.5, 0.1], [0.8, 0.1]])
    out = score_detections(logits, segs, None, place, top_n=3)
    assert [(r.class_id, round(r.start, 3)) for r in out] == [(0, 13.95), (1, 4.65), (1, 13.95)]


def test_padding_is_not_projected_beyond_the_video():
    place = WindowPlacement("v", 0, 256, valid=100, seconds_per_snippet=1.0)
    out = score_detections(np.array([[3.0]]), np.array([[0.38, 0.04]]), None, place)
    assert out[0].end == 99.0


def test_detection_file_format_and_round_trip(tmp_path):
    records = [rec(1.0, 2.5, 0.5), DetectionRecord("video_0003", 0.1234567, 9.0, 3, 0.25)]
    text = format_detections(records)
    assert text == (DETECTION_HEADER + "\n" "v\t1.000000\t2.500000\t0\t0.500000\n"
                    "video_0003\t0.123457\t9.000000\t3\t0.250000\n")
    path = tmp_path / "d.tsv"
    write_detections(path, records)
    back = read_detections(path)
    assert back[0] == records[0] and back[1].start == 0.123457
    write_detections(path, [])
    assert path.read_text() == DETECTION_HEADER + "\n"


def test_invalid_records_are_rejected():
    with pytest.raises(ValueError):
        rec(2.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        rec(0.0, 1.0, 1.5)
