"""Confusion-matrix segmentation metrics: OA, per-class IoU, mIoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, predictions, labels, num_classes: int) -> ConfusionMatrix:
        pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
        gt = np.asarray(labels, dtype=np.int64).reshape(-1)
        if pred.shape != gt.shape:
            raise ValueError(f"{pred.size} predictions for {gt.size} labels")
        for name, arr in (("prediction", pred), ("label", gt)):
            if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
                raise ValueError(f"{name} outside [0, {num_classes})")
        flat = np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes)
        return cls(flat.reshape(num_classes, num_classes))

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN for classes absent from both labels and predictions."""
        tp = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        out = np.full(tp.shape, np.nan)
        np.divide(tp, union, out=out, where=union > 0)
        return out

    def mean_iou(self) -> float:
        iou = self.iou()
        present = ~np.isnan(iou)
        return float(iou[present].mean()) if present.any() else 0.0


@dataclass
class Evaluation:
    oa: float
    iou: np.ndarray
    miou: float
    confusion: ConfusionMatrix


def evaluate(predictions, labels, num_classes: int) -> Evaluation:
    cm = ConfusionMatrix.from_labels(predictions, labels, num_classes)
    return Evaluation(cm.overall_accuracy(), cm.iou(), cm.mean_iou(), cm)
