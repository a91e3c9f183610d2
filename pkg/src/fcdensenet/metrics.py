"""Segmentation metrics: per-class IoU, mean IoU, and global accuracy.

All statistics come from a single confusion matrix accumulated over every
pixel of the dataset (not averaged per image). Void pixels are never
counted on either axis.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError, UndefinedMetricError


class ConfusionAccumulator:
    """c x c integer confusion matrix; rows are targets, columns predictions.

    Accumulators over disjoint pixel sets merge by elementwise addition,
    which makes parallel evaluation trivial.
    """

    def __init__(self, n_classes):
        if n_classes < 1:
            raise ValueError(f"need at least one class, got {n_classes}")
        self.n_classes = n_classes
        self.matrix = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, predictions, targets, void_label=None):
        predictions = np.asarray(predictions)
        targets = np.asarray(targets)
        if predictions.shape != targets.shape:
            raise ShapeError(
                f"prediction shape {predictions.shape} != target shape "
                f"{targets.shape}"
            )
        valid = np.ones(targets.shape, dtype=bool) if void_label is None \
            else targets != void_label
        t = targets[valid].astype(np.int64)
        p = predictions[valid].astype(np.int64)
        c = self.n_classes
        if t.size and (t.min() < 0 or t.max() >= c):
            raise ShapeError(f"target class outside [0, {c})")
        if p.size and (p.min() < 0 or p.max() >= c):
            raise ShapeError(f"predicted class outside [0, {c})")
        counts = np.bincount(t * c + p, minlength=c * c)
        self.matrix += counts.reshape(c, c)
        return self

    def merge(self, other):
        if other.n_classes != self.n_classes:
            raise ShapeError("cannot merge accumulators with different class counts")
        self.matrix += other.matrix
        return self

    @property
    def total(self):
        return int(self.matrix.sum())

    def iou(self, c):
        """Intersection over union for one class: diag / (row + col - diag)."""
        m = self.matrix
        inter = int(m[c, c])
        union = int(m[c, :].sum() + m[:, c].sum() - m[c, c])
        if union == 0:
            raise UndefinedMetricError(
                f"IoU undefined for class {c}: never predicted and never targeted"
            )
        return inter / union

    def per_class_iou(self):
        """IoU per class, None where the union is empty."""
        out = []
        for c in range(self.n_classes):
            m = self.matrix
            union = int(m[c, :].sum() + m[:, c].sum() - m[c, c])
            out.append(None if union == 0 else int(m[c, c]) / union)
        return out

    def mean_iou(self):
        """Mean over classes with a nonzero union; absent classes are
        excluded rather than scored 0 or 1."""
        if self.total == 0:
            raise UndefinedMetricError("mean IoU undefined: no pixels accumulated")
        defined = [v for v in self.per_class_iou() if v is not None]
        if not defined:
            raise UndefinedMetricError("mean IoU undefined: all class unions empty")
        return float(np.mean(defined))

    def global_accuracy(self):
        if self.total == 0:
            raise UndefinedMetricError("accuracy undefined: no pixels accumulated")
        return float(np.trace(self.matrix) / self.total)


def predictions_from_probs(probs):
    """Per-pixel argmax over the channel axis; ties go to the lowest index."""
    return np.argmax(np.asarray(probs), axis=1)


def format_metric_report(acc, class_names=None):
    """Per-class IoU table followed by mean IoU and global accuracy."""
    names = class_names or [f"class_{c}" for c in range(acc.n_classes)]
    width = max(len(n) for n in names) + 2
    lines = ["Per-class IoU:"]
    for name, value in zip(names, acc.per_class_iou()):
        shown = "  (absent)" if value is None else f"{value:8.4f}"
        lines.append(f"  {name:<{width}}{shown}")
    lines.append(f"Mean IoU:        {acc.mean_iou():.4f}")
    lines.append(f"Global accuracy: {acc.global_accuracy():.4f}")
    return "\n".join(lines)


def metric_report_dict(acc, class_names=None):
    names = class_names or [f"class_{c}" for c in range(acc.n_classes)]
    return {
        "per_class_iou": {
            name: value for name, value in zip(names, acc.per_class_iou())
        },
        "mean_iou": acc.mean_iou(),
        "global_accuracy": acc.global_accuracy(),
        "pixels": acc.total,
    }
