"""
Shadow-trained attack thresholds.

For each class the threshold is chosen by exhaustive search over every cut
point that can change a decision: the -inf sentinel, the midpoints between
consecutive distinct metric values, and the +inf sentinel. Ties in accuracy
go to the smallest threshold.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.core.errors import EmptyShadow, UnsupportedMetric
from app.core.metrics import Direction, MetricKind, PredictionSet, metric_values

DEFAULT_MIN_CLASS_SUPPORT = 5


class ClassThreshold(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    threshold: float
    # None when balanced accuracy is undefined for a fallback class missing one side.
    shadow_accuracy: Optional[float]
    n_member: int
    n_nonmember: int
    # True when the class had too few shadow samples and uses the global threshold.
    fallback: bool = False


class ThresholdTable(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    metric: MetricKind
    per_class: Dict[int, ClassThreshold]
    global_threshold: float
    global_accuracy: float
    min_class_support: int = DEFAULT_MIN_CLASS_SUPPORT
    balanced: bool = False

    @property
    def direction(self) -> Direction:
        return self.metric.direction

    def threshold_for(self, label: int, class_dependent: bool = True) -> float:
        entry = self.per_class.get(int(label))
        if not class_dependent or entry is None:
            return self.global_threshold
        return entry.threshold

    def thresholds_for(self, labels: np.ndarray, class_dependent: bool = True) -> np.ndarray:
        thresholds = np.full(labels.shape, self.global_threshold, dtype=np.float64)
        if class_dependent:
            for label, entry in self.per_class.items():
                thresholds[labels == label] = entry.threshold
        return thresholds


# --- Search ---
def _candidates(values: np.ndarray) -> np.ndarray:
    distinct = np.unique(values)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([-np.inf], midpoints, [np.inf]))


def _confusion_counts(
    values: np.ndarray, is_member: np.ndarray, direction: Direction, thresholds: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """True-positive and true-negative counts for every threshold, via sorted counting."""
    member_values = np.sort(values[is_member], kind="stable")
    nonmember_values = np.sort(values[~is_member], kind="stable")
    if direction is Direction.AT_LEAST:
        true_pos = member_values.size - np.searchsorted(member_values, thresholds, side="left")
        true_neg = np.searchsorted(nonmember_values, thresholds, side="left")
    else:
        true_pos = np.searchsorted(member_values, thresholds, side="right")
        true_neg = nonmember_values.size - np.searchsorted(nonmember_values, thresholds, side="right")
    return true_pos, true_neg


def accuracy_from_counts(true_pos: int, true_neg: int, n_member: int, n_nonmember: int, balanced: bool) -> float:
    if balanced:
        return 0.5 * (true_pos / n_member + true_neg / n_nonmember)
    return (true_pos + true_neg) / (n_member + n_nonmember)


def best_threshold(
    values: np.ndarray, is_member: np.ndarray, direction: Direction, balanced: bool = False
) -> Tuple[float, float]:
    """
    Threshold maximizing distinguishing accuracy on (values, is_member).

    Args:
        values: metric value per sample
        is_member: membership truth per sample; both classes must be present
        direction: comparison that decides 'member'
        balanced: maximize the mean of TPR and TNR instead of raw accuracy

    Returns:
        (threshold, accuracy) of the best candidate, smallest threshold on ties.
    """
    values = np.asarray(values, dtype=np.float64)
    is_member = np.asarray(is_member, dtype=bool)
    n_member = int(is_member.sum())
    n_nonmember = int(is_member.size - n_member)
    candidates = _candidates(values)
    true_pos, true_neg = _confusion_counts(values, is_member, direction, candidates)
    if balanced:
        # Integer form of 0.5 * (tp / M + tn / N), so ties compare exactly.
        scores = true_pos.astype(np.int64) * n_nonmember + true_neg.astype(np.int64) * n_member
    else:
        scores = true_pos + true_neg
    best = int(np.argmax(scores))
    accuracy = accuracy_from_counts(int(true_pos[best]), int(true_neg[best]), n_member, n_nonmember, balanced)
    return float(candidates[best]), accuracy


def accuracy_at(
    values: np.ndarray, is_member: np.ndarray, direction: Direction, threshold: float, balanced: bool = False
) -> float:
    is_member = np.asarray(is_member, dtype=bool)
    true_pos, true_neg = _confusion_counts(values, is_member, direction, np.asarray([threshold]))
    n_member = int(is_member.sum())
    return accuracy_from_counts(int(true_pos[0]), int(true_neg[0]), n_member, int(is_member.size - n_member), balanced)


# --- Learners ---
def _tagged_values(shadow: PredictionSet, metric: MetricKind) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not metric.is_thresholded:
        raise UnsupportedMetric(f"{metric.value} attacks are threshold-free")
    if shadow.n_member == 0 or shadow.n_nonmember == 0:
        raise EmptyShadow(
            f"shadow set needs members and non-members, got {shadow.n_member} and {shadow.n_nonmember}"
        )
    tagged = shadow.is_member | shadow.is_nonmember
    if not tagged.all():
        logging.warning(f"Ignoring {int((~tagged).sum())} shadow records with unknown membership.")
    values = metric_values(shadow, metric)
    return values[tagged], shadow.is_member[tagged], shadow.labels[tagged]


def learn_global_threshold(shadow: PredictionSet, metric: MetricKind, balanced: bool = False) -> float:
    """Single class-independent threshold learned over all shadow classes pooled."""
    values, is_member, _ = _tagged_values(shadow, metric)
    threshold, _ = best_threshold(values, is_member, metric.direction, balanced)
    return threshold


def learn_class_thresholds(
    shadow: PredictionSet,
    metric: MetricKind,
    min_class_support: int = DEFAULT_MIN_CLASS_SUPPORT,
    balanced: bool = False,
    workers: int = 1,
) -> ThresholdTable:
    """
    Learn one threshold per class present in the shadow set.

    Classes with fewer than `min_class_support` members or non-members keep
    an entry marked as fallback that carries the pooled global threshold.
    """
    values, is_member, labels = _tagged_values(shadow, metric)
    direction = metric.direction
    global_threshold, global_accuracy = best_threshold(values, is_member, direction, balanced)
    logging.info(
        f"Global {metric.value} threshold {global_threshold:.6g} "
        f"(shadow accuracy {global_accuracy:.4f}, {values.size} samples)"
    )

    classes: List[int] = [int(c) for c in np.unique(labels)]

    def _learn(label: int) -> ClassThreshold:
        in_class = labels == label
        class_values, class_members = values[in_class], is_member[in_class]
        n_member = int(class_members.sum())
        n_nonmember = int(class_members.size - n_member)
        if n_member < min_class_support or n_nonmember < min_class_support:
            accuracy = None
            if n_member and n_nonmember or not balanced:
                accuracy = accuracy_at(class_values, class_members, direction, global_threshold, balanced)
            return ClassThreshold(
                threshold=global_threshold,
                shadow_accuracy=accuracy,
                n_member=n_member,
                n_nonmember=n_nonmember,
                fallback=True,
            )
        threshold, accuracy = best_threshold(class_values, class_members, direction, balanced)
        return ClassThreshold(
            threshold=threshold, shadow_accuracy=accuracy, n_member=n_member, n_nonmember=n_nonmember
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_learn, classes))
    else:
        entries = [_learn(label) for label in classes]

    per_class = dict(zip(classes, entries))
    fallbacks = [label for label, entry in per_class.items() if entry.fallback]
    if fallbacks:
        logging.warning(
            f"{len(fallbacks)} classes below min support {min_class_support}, using the global threshold: {fallbacks}"
        )
    return ThresholdTable(
        metric=metric,
        per_class=per_class,
        global_threshold=global_threshold,
        global_accuracy=global_accuracy,
        min_class_support=min_class_support,
        balanced=balanced,
    )
