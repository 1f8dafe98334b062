"""Segmentation metrics from an accumulated confusion matrix."""

from dataclasses import dataclass

import numpy as np


class ConfusionMatrix:
    """Rows = ground truth, columns = prediction. Pixels with the ignore
    label are excluded entirely."""

    def __init__(self, num_classes, ignore_label=-1):
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.matrix = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, target):
        pred = np.asarray(pred).ravel()
        target = np.asarray(target).ravel()
        if pred.shape != target.shape:
            raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
        valid = target != self.ignore_label
        pred, target = pred[valid], target[valid]
        for arr, what in ((pred, "prediction"), (target, "target")):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                bad = arr[(arr < 0) | (arr >= self.num_classes)][0]
                raise ValueError(f"{what} label {int(bad)} outside "
                                 f"[0,{self.num_classes})")
        idx = target * self.num_classes + pred
        self.matrix += np.bincount(idx, minlength=self.num_classes ** 2) \
            .reshape(self.num_classes, self.num_classes)

    def pixel_accuracy(self):
        total = self.matrix.sum()
        if total == 0:
            return 0.0
        return float(np.trace(self.matrix) / total)

    def iou_per_class(self):
        """IoU per class; classes absent from both prediction and ground
        truth get NaN (excluded from the mean)."""
        tp = np.diag(self.matrix).astype(np.float64)
        gt = self.matrix.sum(axis=1).astype(np.float64)
        pr = self.matrix.sum(axis=0).astype(np.float64)
        union = gt + pr - tp
        iou = np.full(self.num_classes, np.nan)
        present = union > 0
        iou[present] = tp[present] / union[present]
        return iou

    def mean_iou(self, skip_background=False):
        iou = self.iou_per_class()
        if skip_background:
            iou = iou[1:]
        valid = ~np.isnan(iou)
        if not valid.any():
            return 0.0
        return float(iou[valid].mean())


@dataclass
class MetricsReport:
    pix_acc: float
    mean_iou: float
    iou_per_class: np.ndarray

    def __str__(self):
        per_class = ", ".join(
            "-" if np.isnan(v) else f"{v:.4f}" for v in self.iou_per_class)
        return (f"pixAcc {self.pix_acc:.4f}  mIoU {self.mean_iou:.4f}  "
                f"per-class [{per_class}]")


def evaluate_predictions(preds, targets, num_classes, ignore_label=-1,
                         skip_background=False):
    cm = ConfusionMatrix(num_classes, ignore_label)
    for p, t in zip(preds, targets):
        cm.update(p, t)
    return MetricsReport(cm.pixel_accuracy(), cm.mean_iou(skip_background),
                         cm.iou_per_class())
