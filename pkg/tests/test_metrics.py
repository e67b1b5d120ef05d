import math

import numpy as np
import pytest
import scipy.linalg

from polypgen.metrics import (
    DetectionSet,
    GaussianStats,
    ProbRecord,
    detection_metrics,
    fid,
    gaussian_stats,
    inception_score,
    iou,
    read_detections,
    read_prob_records,
    write_prob_records,
)


def test_gaussian_stats_two_points():
    stats = gaussian_stats([[0.0], [2.0]])
    np.testing.assert_array_equal(stats.mean, [1.0])
    np.testing.assert_array_equal(stats.cov, [[2.0]])
    assert stats.sample_count == 2


def test_gaussian_stats_identical_vectors():
    stats = gaussian_stats([[1.0, 2.0]] * 5)
    np.testing.assert_allclose(stats.cov, 0.0, atol=1e-15)


def test_gaussian_stats_matches_fsum_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((100, 4))
    stats = gaussian_stats(x)
    mean = np.array([math.fsum(col) / 100 for col in x.T])
    np.testing.assert_allclose(stats.mean, mean, atol=1e-9)
    for i in range(4):
        for j in range(4):
            want = math.fsum((x[:, i] - mean[i]) * (x[:, j] - mean[j])) / 99
            assert abs(stats.cov[i, j] - want) < 1e-9


def test_gaussian_stats_needs_two():
    with pytest.raises(ValueError):
        gaussian_stats([[1.0]])


def _random_spd(rng, dim):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + dim * np.eye(dim) * 0.1


def test_fid_identical_stats_is_zero():
    rng = np.random.default_rng(1)
    stats = GaussianStats(rng.standard_normal(4), _random_spd(rng, 4), 10)
    assert abs(fid(stats, stats)) < 1e-9


def test_fid_one_dimensional_analytic():
    a = GaussianStats(np.array([0.0]), np.array([[1.0]]), 10)
    b = GaussianStats(np.array([1.0]), np.array([[1.0]]), 10)
    assert abs(fid(a, b) - 1.0) < 1e-9


def test_fid_matches_scipy_sqrtm_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        dim = int(rng.integers(2, 6))
        a = GaussianStats(rng.standard_normal(dim), _random_spd(rng, dim), 10)
        b = GaussianStats(rng.standard_normal(dim), _random_spd(rng, dim), 10)
        diff = a.mean - b.mean
        cross = scipy.linalg.sqrtm(a.cov @ b.cov)
        want = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
                     - 2 * np.trace(np.real(cross)))
        got = fid(a, b)
        assert abs(got - want) < 1e-6
        assert abs(got - fid(b, a)) < 1e-6


def test_fid_rejects_non_finite():
    a = GaussianStats(np.array([np.nan]), np.array([[1.0]]), 5)
    b = GaussianStats(np.array([0.0]), np.array([[1.0]]), 5)
    with pytest.raises(ValueError):
        fid(a, b)


def test_inception_score_uniform_is_one():
    records = [ProbRecord(f"i{k}", np.full(5, 0.2)) for k in range(8)]
    assert inception_score(records) == 1.0


def test_inception_score_one_hot_is_class_count():
    n = 6
    records = []
    for k in range(n):
        p = np.zeros(n)
        p[k] = 1.0
        records.append(ProbRecord(f"i{k}", p))
    assert abs(inception_score(records) - n) < 1e-9


def test_inception_score_matches_double_loop_oracle():
    rng = np.random.default_rng(3)
    probs = rng.dirichlet(np.ones(4), size=50)
    records = [ProbRecord(f"i{k}", p) for k, p in enumerate(probs)]
    marginal = probs.mean(axis=0)
    kls = []
    for p in probs:
        kl = 0.0
        for c in range(4):
            if p[c] > 0:
                kl += p[c] * math.log(p[c] / marginal[c])
        kls.append(kl)
    want = math.exp(sum(kls) / len(kls))
    assert abs(inception_score(records) - want) < 1e-9


def test_inception_score_bounds():
    rng = np.random.default_rng(4)
    probs = rng.dirichlet(np.ones(6), size=30)
    records = [ProbRecord(f"i{k}", p) for k, p in enumerate(probs)]
    value = inception_score(records)
    assert 1.0 <= value <= 6.0


def test_inception_score_splits_average_the_chunks():
    rng = np.random.default_rng(6)
    probs = rng.dirichlet(np.ones(3), size=20)
    records = [ProbRecord(f"i{k}", p) for k, p in enumerate(probs)]
    split_value = inception_score(records, splits=2)
    first = inception_score(records[:10])
    second = inception_score(records[10:])
    assert split_value == pytest.approx((first + second) / 2, rel=1e-12)


def test_iou_identities():
    assert iou((0, 0, 4, 4), (0, 0, 4, 4)) == 1.0
    assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == iou((1, 1, 3, 3), (0, 0, 2, 2))


def _perfect_set():
    gts = [("a", (0.0, 0.0, 10.0, 10.0)), ("a", (20.0, 20.0, 30.0, 30.0))]
    preds = [(img, 1.0, box) for img, box in gts]
    return DetectionSet(preds, gts)


def test_perfect_detector_scores_one():
    ap, p, r, f1 = detection_metrics(_perfect_set(), 0.5)
    assert (ap, p, r, f1) == (1.0, 1.0, 1.0, 1.0)


def test_no_predictions_conventions():
    det = DetectionSet([], [("a", (0.0, 0.0, 10.0, 10.0))])
    assert detection_metrics(det, 0.5) == (0.0, 0.0, 0.0, 0.0)


def test_no_ground_truth_rejected():
    det = DetectionSet([("a", 0.5, (0.0, 0.0, 1.0, 1.0))], [])
    with pytest.raises(ValueError):
        detection_metrics(det, 0.5)


def test_hand_computed_staircase():
    """5 predictions over 3 ground truths; the interpolated envelope is 1
    up to recall 2/3 and 3/4 beyond, so AP = 1/3 + 1/3 + 1/4 = 11/12."""
    gts = [
        ("img1", (0.0, 0.0, 10.0, 10.0)),
        ("img1", (20.0, 20.0, 30.0, 30.0)),
        ("img2", (0.0, 0.0, 10.0, 10.0)),
    ]
    preds = [
        ("img1", 0.9, (0.0, 0.0, 10.0, 10.0)),       # TP
        ("img1", 0.8, (20.0, 20.0, 30.0, 30.0)),     # TP
        ("img2", 0.7, (100.0, 100.0, 110.0, 110.0)), # FP
        ("img2", 0.6, (0.0, 0.0, 10.0, 10.0)),       # TP
        ("img1", 0.5, (0.0, 0.0, 10.0, 10.0)),       # FP (gt already matched)
    ]
    ap, p, r, f1 = detection_metrics(DetectionSet(preds, gts), 0.5)
    assert ap == pytest.approx(11 / 12, abs=1e-12)
    assert p == pytest.approx(3 / 5)
    assert r == 1.0
    assert f1 == pytest.approx(0.75)


def test_duplicate_tp_never_lowers_recall():
    base = _perfect_set()
    ap0, p0, r0, f0 = detection_metrics(base, 0.5)
    more = DetectionSet(base.predictions + [("a", 0.4, (0.0, 0.0, 10.0, 10.0))],
                        base.ground_truth)
    ap1, p1, r1, f1 = detection_metrics(more, 0.5)
    assert r1 >= r0
    assert 0.0 <= ap1 <= 1.0 and 0.0 <= p1 <= 1.0 and 0.0 <= f1 <= 1.0


def test_confidence_tie_broken_by_image_then_order():
    gts = [("a", (0.0, 0.0, 10.0, 10.0)), ("b", (0.0, 0.0, 10.0, 10.0))]
    preds = [
        ("b", 0.5, (0.0, 0.0, 10.0, 10.0)),
        ("a", 0.5, (100.0, 0.0, 110.0, 10.0)),  # FP, but image "a" ranks first
    ]
    ap, _, _, _ = detection_metrics(DetectionSet(preds, gts), 0.5)
    # ranked FP then TP: precision at the only recall step is 1/2
    assert ap == pytest.approx(0.25)


def test_prob_record_files_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    probs = rng.dirichlet(np.ones(3), size=4)
    records = [ProbRecord(f"i{k}", p) for k, p in enumerate(probs)]
    path = tmp_path / "probs.txt"
    write_prob_records(path, records)
    back = read_prob_records(path)
    assert [r.image_id for r in back] == [r.image_id for r in records]
    for a, b in zip(back, records):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_detection_files_roundtrip(tmp_path):
    preds = tmp_path / "preds.txt"
    gts = tmp_path / "gts.txt"
    preds.write_text("a\t0.9\t0\t0\t10\t10\n")
    gts.write_text("a\t0\t0\t10\t10\n")
    det = read_detections(preds, gts)
    assert detection_metrics(det, 0.5) == (1.0, 1.0, 1.0, 1.0)
