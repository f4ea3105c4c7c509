"""Confusion-matrix accounting and IoU metrics.

Rows index the true class, columns the predicted class. IoU for class c is
TP / (TP + FP + FN); classes absent from both truth and prediction are
excluded from the mean rather than counted as 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConfusionMatrix", "iou_per_class", "mean_iou", "pixel_accuracy"]


@dataclass
class ConfusionMatrix:
    """Accumulating (C,C) integer confusion matrix; truth rows, prediction columns."""

    n_classes: int
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)

    def update(self, truth: np.ndarray, prediction: np.ndarray,
               ignore_value: int | None = None) -> None:
        """Accumulate one map pair; pixels with the ignore value drop out."""
        t = np.asarray(truth).ravel()
        p = np.asarray(prediction).ravel()
        if t.shape != p.shape:
            raise ValueError(f"shape mismatch: truth {truth.shape} vs prediction {prediction.shape}")
        if ignore_value is not None:
            keep = t != ignore_value
            t, p = t[keep], p[keep]
        if t.size and (t.min() < 0 or t.max() >= self.n_classes
                       or p.min() < 0 or p.max() >= self.n_classes):
            raise ValueError("class id out of range for this matrix")
        flat = t * self.n_classes + p
        self.counts += np.bincount(flat, minlength=self.n_classes ** 2).reshape(
            self.n_classes, self.n_classes)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts


def iou_per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-class IoU and a presence mask (class appears in truth or prediction).

    Absent classes get IoU nan and present=False.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    iou = np.full(cm.n_classes, np.nan)
    iou[present] = tp[present] / denom[present]
    return iou, present


def mean_iou(cm: ConfusionMatrix) -> float:
    """Mean IoU over present classes; nan when nothing was accumulated."""
    iou, present = iou_per_class(cm)
    if not present.any():
        return float("nan")
    return float(iou[present].mean())


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    if total == 0:
        return float("nan")
    return float(np.diag(cm.counts).sum() / total)
