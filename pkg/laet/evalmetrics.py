"""
Accuracy, F1, MCC and RMSE over prediction/label sequences.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


def _check_pair(preds, labels):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.ndim != 1 or labels.ndim != 1 or len(preds) != len(labels):
        raise InvalidArgument("predictions and labels must be equal-length sequences")
    if len(preds) == 0:
        raise InvalidArgument("cannot score an empty sequence")
    return preds, labels


@dataclass
class ConfusionMatrix:
    """k x k counts; rows are true classes, columns predicted classes"""
    counts: np.ndarray

    @classmethod
    def build(cls, preds, labels, num_classes=None):
        preds, labels = _check_pair(preds, labels)
        preds = preds.astype(np.int64)
        labels = labels.astype(np.int64)
        if min(preds.min(), labels.min()) < 0:
            raise InvalidArgument("class indices must be non-negative")
        k = int(max(preds.max(), labels.max())) + 1
        if num_classes is not None:
            if num_classes < k:
                raise InvalidArgument(f"class index beyond {num_classes} classes")
            k = num_classes
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (labels, preds), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def true_positives(self):
        return np.diag(self.counts)

    def false_positives(self):
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def false_negatives(self):
        return self.counts.sum(axis=1) - np.diag(self.counts)


def accuracy(preds, labels):
    matrix = ConfusionMatrix.build(preds, labels)
    return int(np.trace(matrix.counts)) / matrix.total


def _f1(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_scores(preds, labels, num_classes=None):
    """(micro F1, macro F1, per-class F1); macro averages classes present in labels"""
    matrix = ConfusionMatrix.build(preds, labels, num_classes)
    tp = matrix.true_positives()
    fp = matrix.false_positives()
    fn = matrix.false_negatives()
    per_class = [_f1(int(tp[c]), int(fp[c]), int(fn[c])) for c in range(matrix.num_classes)]
    present = np.unique(np.asarray(labels).astype(np.int64))
    macro = float(np.mean([per_class[c] for c in present]))
    pooled_tp, pooled_fp, pooled_fn = int(tp.sum()), int(fp.sum()), int(fn.sum())
    micro = 2 * pooled_tp / (2 * pooled_tp + pooled_fp + pooled_fn)
    return micro, macro, per_class


def mcc(preds, labels):
    """Binary MCC on {0, 1}; the multiclass generalization otherwise. 0 on a zero denominator"""
    matrix = ConfusionMatrix.build(preds, labels)
    c = matrix.counts
    if matrix.num_classes <= 2:
        c = ConfusionMatrix.build(preds, labels, num_classes=2).counts
        tn, fp, fn, tp = int(c[0, 0]), int(c[0, 1]), int(c[1, 0]), int(c[1, 1])
        denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        if denominator == 0:
            return 0.0
        return float((tp * tn - fp * fn) / np.sqrt(float(denominator)))
    total = int(c.sum())
    correct = int(np.trace(c))
    predicted = c.sum(axis=0).astype(object)
    actual = c.sum(axis=1).astype(object)
    numerator = correct * total - int(np.dot(predicted, actual))
    left = total * total - int(np.dot(predicted, predicted))
    right = total * total - int(np.dot(actual, actual))
    if left == 0 or right == 0:
        return 0.0
    return float(numerator / np.sqrt(float(left) * float(right)))


def rmse(preds, targets):
    preds, targets = _check_pair(preds, targets)
    diff = preds.astype(np.float64) - targets.astype(np.float64)
    return float(np.sqrt(np.mean(diff ** 2)))
