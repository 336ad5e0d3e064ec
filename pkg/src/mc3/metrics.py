"""Ranking and classification metrics.

Tie conventions: ROC-AUC uses average ranks, so a block of tied scores counts as half
correctly ordered. Average precision treats a block of tied scores as one threshold,
i.e. all tied items are admitted at once.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.stats import rankdata

from .common import DegenerateLabels, NonFiniteValue, OutOfRange, ShapeMismatch
from .numerics import Array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredLabel:
    score: float
    label: int
    sample_id: str = ""

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise OutOfRange(f"Label must be 0 or 1, got {self.label!r}")
        if not np.isfinite(self.score):
            raise NonFiniteValue(f"Score for {self.sample_id or 'sample'} is not finite")


def _arrays(scored: Sequence[ScoredLabel]) -> tuple[Array, npt.NDArray[np.int64]]:
    scores = np.fromiter((s.score for s in scored), dtype=np.float64, count=len(scored))
    labels = np.fromiter((s.label for s in scored), dtype=np.int64, count=len(scored))
    return scores, labels


def roc_auc_arrays(scores: Array, labels: npt.ArrayLike) -> float:
    labels = np.asarray(labels)
    positives = int(np.sum(labels == 1))
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise DegenerateLabels(
            f"ROC-AUC needs both classes, got {positives} positives and {negatives} negatives"
        )
    # Mann-Whitney U from average ranks
    ranks = rankdata(scores, method="average")
    u = float(np.sum(ranks[labels == 1])) - positives * (positives + 1) / 2.0
    return u / (positives * negatives)


def roc_auc(scored: Sequence[ScoredLabel]) -> float:
    return roc_auc_arrays(*_arrays(scored))


def _threshold_counts(scores: Array, labels: npt.ArrayLike) -> tuple[Array, Array, Array]:
    """Distinct thresholds in descending order, with cumulative true and false
    positives when everything scoring >= threshold is predicted positive."""
    labels = np.asarray(labels)
    thresholds, inverse = np.unique(-scores, return_inverse=True)
    tp = np.bincount(inverse, weights=(labels == 1).astype(np.float64), minlength=len(thresholds))
    fp = np.bincount(inverse, weights=(labels != 1).astype(np.float64), minlength=len(thresholds))
    return -thresholds, np.cumsum(tp), np.cumsum(fp)


def pr_auc_arrays(scores: Array, labels: npt.ArrayLike) -> float:
    labels = np.asarray(labels)
    positives = int(np.sum(labels == 1))
    if positives == 0:
        raise DegenerateLabels("Average precision needs at least one positive")
    _, tp, fp = _threshold_counts(scores, labels)
    delta_tp = np.diff(tp, prepend=0.0)
    precision = tp / (tp + fp)
    return float(np.sum(delta_tp / positives * precision))


def pr_auc(scored: Sequence[ScoredLabel]) -> float:
    """Average precision with tied scores grouped."""
    return pr_auc_arrays(*_arrays(scored))


def roc_curve(scored: Sequence[ScoredLabel]) -> pd.DataFrame:
    """ROC points, one per distinct threshold plus the origin."""
    scores, labels = _arrays(scored)
    positives = int(np.sum(labels == 1))
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise DegenerateLabels("ROC curve needs both classes")
    thresholds, tp, fp = _threshold_counts(scores, labels)
    return pd.DataFrame(
        {
            "threshold": np.concatenate([[np.inf], thresholds]),
            "tpr": np.concatenate([[0.0], tp / positives]),
            "fpr": np.concatenate([[0.0], fp / negatives]),
        }
    )


def pr_curve(scored: Sequence[ScoredLabel]) -> pd.DataFrame:
    scores, labels = _arrays(scored)
    positives = int(np.sum(labels == 1))
    if positives == 0:
        raise DegenerateLabels("PR curve needs at least one positive")
    _, tp, fp = _threshold_counts(scores, labels)
    return pd.DataFrame({"recall": tp / positives, "precision": tp / (tp + fp)})


@dataclass(frozen=True)
class ClassMetrics:
    top1: float
    top5: float
    mca: float
    """Mean per-class accuracy."""
    map: float
    """Mean one-vs-rest average precision."""
    mauc: float
    """Mean one-vs-rest ROC-AUC."""

    def as_dict(self) -> dict[str, float]:
        return {
            "top1": self.top1,
            "top5": self.top5,
            "mca": self.mca,
            "map": self.map,
            "mauc": self.mauc,
        }


def top_k_accuracy(probabilities: Array, labels: npt.ArrayLike, k: int) -> float:
    labels = np.asarray(labels)
    # Stable sort on negated scores, so ties go to the lower class index
    order = np.argsort(-probabilities, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == labels[:, None], axis=1)))


def class_metrics(probabilities: Array, labels: npt.ArrayLike) -> ClassMetrics:
    """Metrics for an (n x C) score matrix against integer labels in [0, C).

    Classes without positives in `labels` are skipped for mCA and mAP; classes
    without both positives and negatives are skipped for mAUC."""
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim != 2 or probabilities.shape[0] != len(labels):
        raise ShapeMismatch(
            f"Scores have shape {probabilities.shape}, expected ({len(labels)}, C)"
        )
    n, num_classes = probabilities.shape
    if n == 0:
        raise DegenerateLabels("No samples to score")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise OutOfRange(f"Labels must lie in [0, {num_classes})")

    predicted = np.argmax(probabilities, axis=1)
    per_class_accuracy, aps, aucs = [], [], []
    for c in range(num_classes):
        is_c = labels == c
        if not np.any(is_c):
            continue
        per_class_accuracy.append(float(np.mean(predicted[is_c] == c)))
        aps.append(pr_auc_arrays(probabilities[:, c], is_c.astype(np.int64)))
        if not np.all(is_c):
            aucs.append(roc_auc_arrays(probabilities[:, c], is_c.astype(np.int64)))
    if not aucs:
        raise DegenerateLabels("Need at least two classes present to compute mAUC")

    return ClassMetrics(
        top1=top_k_accuracy(probabilities, labels, 1),
        top5=top_k_accuracy(probabilities, labels, min(5, num_classes)),
        mca=float(np.mean(per_class_accuracy)),
        map=float(np.mean(aps)),
        mauc=float(np.mean(aucs)),
    )
