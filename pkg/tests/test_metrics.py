from fractions import Fraction

import numpy as np
import pytest

from landseg.metrics import (ConfusionMatrix, MetricsError, confusion_csv,
                             evaluate_pairs, format_report, mean_iou,
                             per_class_iou, pixel_accuracy)


def brute_force_iou(gt, pred):
    """Set-arithmetic oracle in exact rational arithmetic."""
    gt = np.asarray(gt).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    valid = gt != 255
    gt, pred = gt[valid], pred[valid]
    ious = {}
    for c in range(6):
        inter = int(((gt == c) & (pred == c)).sum())
        union = int(((gt == c) | (pred == c)).sum())
        if union > 0:
            ious[c] = Fraction(inter, union)
    in_gt = sorted({int(c) for c in gt})
    miou = sum(ious[c] for c in in_gt) / len(in_gt)
    return ious, miou


class TestConfusion:
    def test_identity_prediction(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 6, (30, 30)).astype(np.uint8)
        cm = ConfusionMatrix()
        cm.add(labels, labels)
        iou = per_class_iou(cm)
        np.testing.assert_allclose(iou, 1.0)
        assert mean_iou(cm) == 1.0
        assert pixel_accuracy(cm) == 1.0

    def test_disjoint_prediction(self):
        gt = np.zeros((10, 10), np.uint8)
        pred = np.ones((10, 10), np.uint8)
        cm = ConfusionMatrix()
        cm.add(gt, pred)
        iou = per_class_iou(cm)
        assert iou[0] == 0.0 and iou[1] == 0.0
        assert mean_iou(cm) == 0.0  # only class 0 in GT

    def test_ignore_excluded_everywhere(self):
        gt = np.array([[0, 255], [255, 1]], np.uint8)
        pred = np.array([[0, 3], [4, 1]], np.uint8)
        cm = ConfusionMatrix()
        cm.add(gt, pred)
        assert cm.total == 2
        assert cm.m[0, 0] == 1 and cm.m[1, 1] == 1

    def test_absent_class_is_nan_and_excluded(self):
        gt = np.zeros((4, 4), np.uint8)
        cm = ConfusionMatrix()
        cm.add(gt, gt)
        iou = per_class_iou(cm)
        assert iou[0] == 1.0
        assert np.isnan(iou[1:]).all()
        assert mean_iou(cm) == 1.0

    def test_total_equals_scored_pixels(self):
        rng = np.random.default_rng(1)
        gt = rng.integers(0, 7, (50, 50))
        gt[gt == 6] = 255
        pred = rng.integers(0, 6, (50, 50))
        cm = ConfusionMatrix()
        cm.add(gt, pred)
        assert cm.total == int((gt != 255).sum())

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 6, 400)
        pred = rng.integers(0, 6, 400)
        order = rng.permutation(400)
        cm1, cm2 = ConfusionMatrix(), ConfusionMatrix()
        cm1.add(gt, pred)
        cm2.add(gt[order], pred[order])
        assert (cm1.m == cm2.m).all()

    def test_mismatched_sizes_rejected(self):
        cm = ConfusionMatrix()
        with pytest.raises(MetricsError):
            cm.add(np.zeros(4), np.zeros(5))

    def test_out_of_range_rejected(self):
        cm = ConfusionMatrix()
        with pytest.raises(MetricsError):
            cm.add(np.array([7]), np.array([0]))


class TestBruteForceOracle:
    def test_random_maps_match_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            shape = (int(rng.integers(5, 40)), int(rng.integers(5, 40)))
            gt = rng.integers(0, 6, shape).astype(np.uint8)
            pred = rng.integers(0, 6, shape).astype(np.uint8)
            gt[rng.random(shape) < 0.1] = 255
            cm = ConfusionMatrix()
            cm.add(gt, pred)

            ious_frac, miou_frac = brute_force_iou(gt, pred)
            iou = per_class_iou(cm)
            # exact rational agreement: reconstruct fractions from the matrix
            for c, frac in ious_frac.items():
                inter = int(cm.m[c, c])
                union = int(cm.m[c].sum() + cm.m[:, c].sum() - cm.m[c, c])
                assert Fraction(inter, union) == frac
            assert abs(mean_iou(cm) - float(miou_frac)) <= 1e-12

    def test_evaluate_pairs(self):
        rng = np.random.default_rng(4)
        tiles = [(rng.integers(0, 255, (8, 8, 3)).astype(np.uint8),
                  rng.integers(0, 6, (8, 8)).astype(np.uint8)) for _ in range(3)]
        # predictor that returns ground truth via closure lookup
        gt_by_id = {id(img): lab for img, lab in tiles}
        iou, miou, cm = evaluate_pairs(tiles, lambda img: gt_by_id[id(img)])
        assert miou == 1.0
        assert cm.total == 3 * 64

    def test_empty_validation_rejected(self):
        with pytest.raises(MetricsError, match="empty"):
            evaluate_pairs([], lambda img: img)


class TestReports:
    def test_format_report_contains_classes_and_miou(self):
        cm = ConfusionMatrix()
        cm.add(np.zeros(10, np.uint8), np.zeros(10, np.uint8))
        text = format_report(per_class_iou(cm), mean_iou(cm), cm)
        assert "dense_forest" in text and "mIoU" in text and "1.0000" in text

    def test_confusion_csv_shape(self):
        cm = ConfusionMatrix()
        cm.add(np.array([0, 1]), np.array([0, 2]))
        lines = confusion_csv(cm).strip().splitlines()
        assert len(lines) == 7
        assert lines[0].startswith("gt\\pred,")
        assert lines[1].split(",")[1] == "1"
