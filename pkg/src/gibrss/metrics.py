"""Segmentation metrics: overall accuracy, per-class F1 and IoU, and
their macro means over a confusion matrix (rows truth, columns prediction).

Classes absent from both truth and prediction are excluded from the
means; a class present in either scores its (possibly zero) ratio.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray           # [classes, classes] int64

    @property
    def classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def add(self, other):
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred, truth, classes):
    """Per-pixel tally of (truth, prediction) pairs."""
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    if p.shape != t.shape:
        raise ContractError(f"pred has {p.shape[0]} pixels, truth {t.shape[0]}")
    for name, arr in (("pred", p), ("truth", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise ContractError(f"{name} label outside [0, {classes})")
    flat = t * classes + p
    counts = np.bincount(flat, minlength=classes * classes).reshape(classes, classes)
    return ConfusionMatrix(counts.astype(np.int64))


@dataclass
class MetricReport:
    oa: float
    per_class_f1: np.ndarray     # nan for classes excluded from the mean
    mean_f1: float
    per_class_iou: np.ndarray
    miou: float


def metrics(cm):
    """All metrics of a confusion matrix; see module docstring for the
    averaging convention."""
    counts = np.asarray(cm.counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ContractError("confusion matrix is empty")
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    iou = np.full(cm.classes, np.nan)
    f1 = np.full(cm.classes, np.nan)
    iou[present] = tp[present] / (tp + fp + fn)[present]
    f1[present] = 2.0 * tp[present] / (2.0 * tp + fp + fn)[present]
    return MetricReport(
        oa=float(tp.sum() / total),
        per_class_f1=f1,
        mean_f1=float(np.nanmean(f1)),
        per_class_iou=iou,
        miou=float(np.nanmean(iou)),
    )
