import numpy as np
import pytest

from tadquery.evaluation import (NO_GT, GroundTruthRecord, average_precision, evaluate_map, load_report,
                                 save_report)
from tadquery.inference import DetectionRecord

GTS = [GroundTruthRecord("v", 0.0, 1.0, 0), GroundTruthRecord("v", 2.0, 3.0, 0)]
DETS = [DetectionRecord("v", 0.0, 1.0, 0, 0.9), DetectionRecord("v", 5.0, 6.0, 0, 0.8),
        DetectionRecord("v", 2.0, 3.0, 0, 0.7)]


def test_hand_fixture_ap_is_five_sixths():
    report = evaluate_map(DETS, GTS, thresholds=[0.5])
    assert abs(report.per_class_ap[0][0.5] - 5 / 6) <= 1e-9


def test_average_precision_directly():
    assert average_precision(np.array([True, False, True]), 2) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision(np.array([], dtype=bool), 3) == 0.0


def test_perfect_and_empty_detections():
    perfect = [DetectionRecord(g.video_id, g.start, g.end, g.class_id, 1.0) for g in GTS]
    assert evaluate_map(perfect, GTS).average_map == 1.0
    assert evaluate_map([], GTS).average_map == 0.0


def test_no_ground_truth_is_marked_not_zero():
    report = evaluate_map(DETS, [])
    assert report.average_map is None and report.status == NO_GT
    assert report.to_dict()["average_map"] == NO_GT


def test_order_and_label_permutation_invariance():
    rng = np.random.default_rng(0)
    gts, dets = _random_problem(rng)
    base = evaluate_map(dets, gts).average_map
    shuffled = [dets[i] for i in rng.permutation(len(dets))]
    assert evaluate_map(shuffled, gts).average_map == base
    perm = {0: 2, 1: 0, 2: 1}
    relabel_d = [DetectionRecord(d.video_id, d.start, d.end, perm[d.class_id], d.score) for d in dets]
    relabel_g = [GroundTruthRecord(g.video_id, g.start, g.end, perm[g.class_id]) for g in gts]
    assert evaluate_map(relabel_d, relabel_g).average_map == pytest.approx(base, abs=1e-15)


def _random_problem(rng, videos=3, classes=3):
    gts, dets = [], []
    for v in range(videos):
        for _ in range(rng.integers(1, 5)):
            s = float(rng.uniform(0, 50))
            g = GroundTruthRecord(f"v{v}", s, s + float(rng.uniform(1, 8)), int(rng.integers(classes)))
            gts.append(g)
            for _ in range(rng.integers(0, 4)):
                jitter = rng.normal(0, 1.0, 2)
                start, end = g.start + jitter[0], g.end + jitter[1]
                if end > start:
                    dets.append(DetectionRecord(g.video_id, start, end, g.class_id, float(rng.uniform(0.01, 1))))
        for _ in range(rng.integers(0, 4)):
            s = float(rng.uniform(0, 50))
            dets.append(DetectionRecord(f"v{v}", s, s + 2, int(rng.integers(classes)), float(rng.uniform(0, 1))))
    return gts, dets


def test_ap_is_monotone_in_threshold():
    rng = np.random.default_rng(42)
    thresholds = np.linspace(0.05, 0.95, 19)
    for _ in range(100):
        gts, dets = _random_problem(rng)
        report = evaluate_map(dets, gts, thresholds)
        for aps in report.per_class_ap.values():
            seq = [aps[t] for t in report.thresholds if aps[t] is not None]
            assert all(a >= b for a, b in zip(seq, seq[1:]))


def test_report_round_trip_and_table(tmp_path):
    report = evaluate_map(DETS, GTS)
    path = tmp_path / "report.json"
    save_report(path, report)
    back = load_report(path)
    assert back.to_dict() == report.to_dict()
    table = back.table()
    header, row = table.splitlines()
    assert header.split()[1:] == ["0.3", "0.4", "0.5", "0.6", "0.7", "Avg."]
    assert row.split()[3] == "0.8333"
