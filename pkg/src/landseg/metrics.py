"""Confusion-matrix accumulation and intersection-over-union scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import CLASS_NAMES, NODATA, NUM_CLASSES


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """m[g][p] counts pixels of ground-truth class g predicted as p."""

    m: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES),
                                                           dtype=np.int64))

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.int64)
        if self.m.shape != (NUM_CLASSES, NUM_CLASSES) or (self.m < 0).any():
            raise MetricsError("confusion matrix must be 6x6 and non-negative")

    def add(self, ground_truth: np.ndarray, prediction: np.ndarray,
            ignore_index: int = NODATA) -> None:
        gt = np.asarray(ground_truth).reshape(-1)
        pred = np.asarray(prediction).reshape(-1)
        if gt.shape != pred.shape:
            raise MetricsError("prediction and ground truth differ in size")
        valid = gt != ignore_index
        gt = gt[valid].astype(np.int64)
        pred = pred[valid].astype(np.int64)
        if ((gt < 0) | (gt >= NUM_CLASSES) | (pred < 0) | (pred >= NUM_CLASSES)).any():
            raise MetricsError("labels outside 0..5 after ignore filtering")
        binned = np.bincount(gt * NUM_CLASSES + pred, minlength=NUM_CLASSES ** 2)
        self.m += binned.reshape(NUM_CLASSES, NUM_CLASSES)

    @property
    def total(self) -> int:
        return int(self.m.sum())


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN where the class appears in neither GT nor prediction."""
    diag = np.diag(cm.m).astype(np.float64)
    union = cm.m.sum(axis=1) + cm.m.sum(axis=0) - np.diag(cm.m)
    iou = np.full(NUM_CLASSES, np.nan)
    present = union > 0
    iou[present] = diag[present] / union[present]
    return iou


def mean_iou(cm: ConfusionMatrix) -> float:
    """Mean IoU over the classes present in the ground truth."""
    in_gt = cm.m.sum(axis=1) > 0
    if not in_gt.any():
        raise MetricsError("no scored pixels; mIoU undefined")
    return float(np.mean(per_class_iou(cm)[in_gt]))


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricsError("no scored pixels; accuracy undefined")
    return float(np.diag(cm.m).sum() / cm.total)


def evaluate_pairs(pairs, predict_fn) -> tuple[np.ndarray, float, ConfusionMatrix]:
    """Score (image, labels) pairs with ``predict_fn(image) -> label map``."""
    cm = ConfusionMatrix()
    count = 0
    for image, labels in pairs:
        cm.add(labels, predict_fn(image))
        count += 1
    if count == 0:
        raise MetricsError("empty validation set")
    return per_class_iou(cm), mean_iou(cm), cm


def format_report(iou: np.ndarray, miou: float, cm: ConfusionMatrix) -> str:
    lines = ["class             iou"]
    for c, name in enumerate(CLASS_NAMES):
        val = "   n/a" if np.isnan(iou[c]) else f"{iou[c]:.4f}"
        lines.append(f"{name:<16}  {val}")
    lines.append(f"mIoU              {miou:.4f}")
    lines.append(f"scored pixels     {cm.total}")
    return "\n".join(lines)


def confusion_csv(cm: ConfusionMatrix) -> str:
    header = "gt\\pred," + ",".join(CLASS_NAMES)
    rows = [header]
    for g, name in enumerate(CLASS_NAMES):
        rows.append(name + "," + ",".join(str(int(v)) for v in cm.m[g]))
    return "\n".join(rows) + "\n"
