"""Confusion matrix and IoU tests against brute-force recomputation."""

import numpy as np
import pytest

from fuzzyseg.metrics import ConfusionMatrix, iou_per_class, mean_iou, pixel_accuracy


def test_hand_case_two_classes():
    cm = ConfusionMatrix(2)
    cm.counts[:] = [[3, 1], [2, 4]]
    iou, present = iou_per_class(cm)
    assert present.all()
    assert iou[0] == pytest.approx(3.0 / 6.0, abs=1e-12)
    assert iou[1] == pytest.approx(4.0 / 7.0, abs=1e-12)
    assert mean_iou(cm) == pytest.approx((3.0 / 6.0 + 4.0 / 7.0) / 2.0, abs=1e-12)
    assert pixel_accuracy(cm) == pytest.approx(7.0 / 10.0, abs=1e-12)


def test_update_counts_pairs():
    cm = ConfusionMatrix(3)
    truth = np.array([[0, 1], [2, 2]])
    pred = np.array([[0, 2], [2, 0]])
    cm.update(truth, pred)
    want = np.zeros((3, 3), dtype=np.int64)
    want[0, 0] = 1
    want[1, 2] = 1
    want[2, 2] = 1
    want[2, 0] = 1
    assert np.array_equal(cm.counts, want)


def test_ignore_value_drops_pixels():
    cm = ConfusionMatrix(2)
    truth = np.array([0, 255, 1])
    pred = np.array([0, 1, 1])
    cm.update(truth, pred, ignore_value=255)
    assert cm.counts.sum() == 2
    assert cm.counts[0, 0] == 1 and cm.counts[1, 1] == 1


def test_matches_brute_force_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = int(rng.integers(2, 7))
        h = int(rng.integers(3, 10))
        truth = rng.integers(0, c, size=(h, h))
        pred = rng.integers(0, c, size=(h, h))
        truth[rng.random((h, h)) < 0.15] = 255
        cm = ConfusionMatrix(c)
        cm.update(truth, pred, ignore_value=255)
        iou, present = iou_per_class(cm)
        keep = truth != 255
        vals = []
        for cls in range(c):
            t = keep & (truth == cls)
            p = keep & (pred == cls)
            union = (t | p).sum()
            assert present[cls] == (union > 0)
            if union:
                vals.append((t & p).sum() / union)
                assert iou[cls] == vals[-1]
            else:
                assert np.isnan(iou[cls])
        if vals:
            assert mean_iou(cm) == float(np.mean(vals))


def test_absent_class_is_nan_and_excluded():
    cm = ConfusionMatrix(3)
    cm.update(np.array([0, 0, 1]), np.array([0, 1, 1]))
    iou, present = iou_per_class(cm)
    assert present.tolist() == [True, True, False]
    assert np.isnan(iou[2])
    assert mean_iou(cm) == pytest.approx((0.5 + 0.5) / 2.0)


def test_empty_matrix_mean_is_nan():
    cm = ConfusionMatrix(2)
    assert np.isnan(mean_iou(cm))


def test_merge():
    a = ConfusionMatrix(2)
    b = ConfusionMatrix(2)
    a.update(np.array([0, 1]), np.array([0, 1]))
    b.update(np.array([1, 1]), np.array([0, 1]))
    a.merge(b)
    assert a.counts.sum() == 4
    with pytest.raises(ValueError):
        a.merge(ConfusionMatrix(3))


def test_update_validation():
    cm = ConfusionMatrix(2)
    with pytest.raises(ValueError):
        cm.update(np.array([0, 1]), np.array([0]))
    with pytest.raises(ValueError):
        cm.update(np.array([0, 2]), np.array([0, 1]))  # 2 out of range, no ignore
    with pytest.raises(ValueError):
        cm.update(np.array([0, 1]), np.array([0, -1]))
    with pytest.raises(ValueError):
        ConfusionMatrix(0)
