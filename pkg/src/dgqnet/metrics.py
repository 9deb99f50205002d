"""Binary classification metrics with macro averaging, rank AUC, ROC
curves, bootstrap confidence intervals, and per-domain breakdowns.

Precision, recall, and F1 are macro averaged: computed per class with the
other class as negative, then averaged with equal weight.  A per-class
value whose denominator is zero counts as 0.  AUC is the rank statistic
(probability that a random positive outscores a random negative, ties
worth half); roc_curve integrates the same quantity by trapezoid as an
independent route, and the two must agree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .tensor import Tensor

logger = logging.getLogger(__name__)

METRIC_KEYS = ("accuracy", "auc", "f1", "precision", "recall",
               "sensitivity", "specificity")

# rng stream tag for bootstrap resamples
_STREAM_BOOT = 3


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        counts = (self.tn, self.fp, self.fn, self.tp)
        if any(c < 0 for c in counts):
            raise ContractError(f"negative confusion counts: {counts}")
        if sum(counts) < 1:
            raise ContractError("empty confusion matrix")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def as_dict(self):
        return dict(tn=self.tn, fp=self.fp, fn=self.fn, tp=self.tp)


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    auc: Optional[float]
    f1: float
    precision: float
    recall: float
    sensitivity: float
    specificity: float

    def as_dict(self):
        return {key: getattr(self, key) for key in METRIC_KEYS}


def _validate_pair(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise DataError(
            f"labels and scores must be equal-length vectors, got "
            f"{labels.shape} and {scores.shape}"
        )
    if labels.size < 1:
        raise DataError("need at least one sample")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    if not np.isfinite(scores).all() or scores.min() < 0 or scores.max() > 1:
        raise DataError("scores must be probabilities in [0, 1]")
    return labels.astype(np.int64), scores


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def confusion_matrix(labels, predictions) -> ConfusionMatrix:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    return ConfusionMatrix(
        tn=int(((labels == 0) & (predictions == 0)).sum()),
        fp=int(((labels == 0) & (predictions == 1)).sum()),
        fn=int(((labels == 1) & (predictions == 0)).sum()),
        tp=int(((labels == 1) & (predictions == 1)).sum()),
    )


def metrics_from_confusion(cm: ConfusionMatrix,
                           auc: Optional[float] = None) -> MetricSet:
    sensitivity = _safe_div(cm.tp, cm.tp + cm.fn)
    specificity = _safe_div(cm.tn, cm.tn + cm.fp)
    prec_pos = _safe_div(cm.tp, cm.tp + cm.fp)
    prec_neg = _safe_div(cm.tn, cm.tn + cm.fn)

    def f1_of(p, r):
        return _safe_div(2.0 * p * r, p + r)

    return MetricSet(
        accuracy=(cm.tp + cm.tn) / cm.total,
        auc=auc,
        f1=0.5 * (f1_of(prec_pos, sensitivity) + f1_of(prec_neg, specificity)),
        precision=0.5 * (prec_pos + prec_neg),
        recall=0.5 * (sensitivity + specificity),
        sensitivity=sensitivity,
        specificity=specificity,
    )


def rank_auc(labels, scores) -> Optional[float]:
    """P(score of random positive > score of random negative), ties half.

    Computed from tie-averaged ranks; returns None when only one class is
    present.
    """
    labels, scores = _validate_pair(labels, scores)
    pos = labels == 1
    p = int(pos.sum())
    n = labels.size - p
    if p == 0 or n == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(labels.size, dtype=np.float64)
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[pos].sum() - p * (p + 1) / 2.0) / (p * n))


def compute_metrics(labels, scores, predictions=None) -> MetricSet:
    """Full metric set from labels and positive-class probabilities.

    Predictions default to thresholding the scores at 0.5.  AUC is None
    when the labels contain a single class; the other metrics still hold.
    """
    labels, scores = _validate_pair(labels, scores)
    if predictions is None:
        predictions = (scores >= 0.5).astype(np.int64)
    else:
        predictions = np.asarray(predictions)
        if predictions.shape != labels.shape:
            raise DataError("predictions must match labels in length")
    cm = confusion_matrix(labels, predictions)
    return metrics_from_confusion(cm, auc=rank_auc(labels, scores))


def roc_curve(labels, scores) -> List[Tuple[float, float, float]]:
    """(fpr, tpr, threshold) at every distinct score, descending.

    Starts at (0, 0, inf) and ends at (1, 1, min score); both coordinates
    are nondecreasing along the curve.
    """
    labels, scores = _validate_pair(labels, scores)
    p = int((labels == 1).sum())
    n = labels.size - p
    if p == 0 or n == 0:
        raise DataError("ROC curve needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    ls = labels[order]
    ss = scores[order]
    points = [(0.0, 0.0, math.inf)]
    tp = fp = 0
    i = 0
    while i < ls.size:
        j = i
        while j + 1 < ls.size and ss[j + 1] == ss[i]:
            j += 1
        hits = int(ls[i:j + 1].sum())
        tp += hits
        fp += (j - i + 1) - hits
        points.append((fp / n, tp / p, float(ss[i])))
        i = j + 1
    return points


def auc_from_roc(points: Sequence[Tuple[float, float, float]]) -> float:
    """Trapezoidal area under an roc_curve result."""
    area = 0.0
    for (x0, y0, _), (x1, y1, _) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) * 0.5
    return area


@dataclass(frozen=True)
class BootstrapResult:
    point: MetricSet
    lower: Dict[str, float]
    upper: Dict[str, float]
    samples: Dict[str, np.ndarray]
    n_boot: int

    def as_dict(self):
        return dict(point=self.point.as_dict(), lower=dict(self.lower),
                    upper=dict(self.upper), n_boot=self.n_boot)


def bootstrap_ci(labels, scores, n_boot: int = 500,
                 seed: int = 0) -> BootstrapResult:
    """Percentile bootstrap over resamples with replacement.

    Each resample draws from its own rng stream keyed by (seed, index),
    so results are deterministic and order-independent.  Resamples that
    lose a class skip AUC only.
    """
    labels, scores = _validate_pair(labels, scores)
    if labels.size < 10:
        raise ConfigError(
            f"bootstrap needs at least 10 samples, got {labels.size}"
        )
    if n_boot < 1:
        raise ConfigError(f"n_boot must be >= 1, got {n_boot}")
    point = compute_metrics(labels, scores)
    pools: Dict[str, list] = {key: [] for key in METRIC_KEYS}
    for i in range(n_boot):
        rng = np.random.default_rng([seed, _STREAM_BOOT, i])
        idx = rng.integers(0, labels.size, size=labels.size)
        m = compute_metrics(labels[idx], scores[idx])
        for key in METRIC_KEYS:
            value = getattr(m, key)
            if value is not None:
                pools[key].append(value)
    lower, upper, samples = {}, {}, {}
    for key, values in pools.items():
        if not values:
            continue
        arr = np.array(values)
        samples[key] = arr
        lower[key] = float(np.percentile(arr, 2.5))
        upper[key] = float(np.percentile(arr, 97.5))
    return BootstrapResult(point=point, lower=lower, upper=upper,
                           samples=samples, n_boot=n_boot)


def predict_scores(model, images, batch_size: int = 64) -> np.ndarray:
    """Positive-class probabilities from the model in eval mode."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    images = [np.asarray(im, dtype=np.float64) for im in images]
    scores = []
    for start in range(0, len(images), batch_size):
        x = np.stack(images[start:start + batch_size])[:, None, :, :]
        h = model.encode(Tensor(x), mode="eval")
        logits = model.classify(model.enhance(h)).data
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        scores.append(e[:, 1] / e.sum(axis=1))
    return np.concatenate(scores)


@dataclass(frozen=True)
class PerDomainReport:
    rows: Dict[int, MetricSet]
    accuracy_variance: float

    def as_dict(self):
        return dict(
            rows={d: m.as_dict() for d, m in self.rows.items()},
            accuracy_variance=self.accuracy_variance,
        )


def per_domain_report(model, grouped: Mapping[int, Sequence],
                      batch_size: int = 64) -> PerDomainReport:
    """Metric set per domain group plus the population variance of the
    per-domain accuracies; empty groups are dropped with a warning."""
    rows: Dict[int, MetricSet] = {}
    for domain in sorted(grouped):
        group = list(grouped[domain])
        if not group:
            logger.warning("domain %d has no samples, omitting", domain)
            continue
        labels = np.array([s.label for s in group], dtype=np.int64)
        scores = predict_scores(model, [s.image for s in group], batch_size)
        rows[domain] = compute_metrics(labels, scores)
    if not rows:
        raise DataError("every domain group was empty")
    accs = np.array([m.accuracy for m in rows.values()])
    return PerDomainReport(rows=rows, accuracy_variance=float(np.var(accs)))
