"""
Benchmark metric-based membership inference attacks.

Each attack decides 'member' by comparing a per-sample metric with a
shadow-learned threshold (or, for correctness, by whether the prediction is
right). The suite runs all of them against a target set and scores them.
"""
import enum
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import confusion_matrix

from app.core.config import AuditConfig
from app.core.errors import ClassCountMismatch, MetricMismatch, UnknownMembership, UsageError
from app.core.metrics import (
    MEMBER_CODE,
    NONMEMBER_CODE,
    THRESHOLD_METRICS,
    Membership,
    MetricKind,
    PredictionSet,
    correctness_array,
    metric_values,
    model_accuracy,
)
from app.core.thresholds import ThresholdTable, learn_class_thresholds


class AttackVariant(str, enum.Enum):
    CLASS_DEPENDENT = "class-dependent"
    CLASS_INDEPENDENT = "class-independent"
    THRESHOLD_FREE = "threshold-free"


class AttackReport(BaseModel):
    """
    Accuracy, precision and recall of one attack, members being the positive class.
    Precision (or recall) is None when undefined, i.e. no positive predictions (or no members).
    """
    metric: MetricKind
    variant: AttackVariant
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    per_class_accuracy: Dict[int, float]
    n_member: int
    n_nonmember: int

    @property
    def name(self) -> str:
        return f"I_{self.metric.short_name}"

    @property
    def is_balanced(self) -> bool:
        return self.n_member == self.n_nonmember


def truth_codes(truth: Sequence) -> np.ndarray:
    """Membership truth as a boolean array; rejects unknown tags."""
    codes = np.array(
        [tag.code if isinstance(tag, Membership) else int(tag) for tag in truth], dtype=np.int8
    ).reshape(-1)
    unknown = np.flatnonzero((codes != MEMBER_CODE) & (codes != NONMEMBER_CODE))
    if unknown.size:
        raise UnknownMembership(
            f"{unknown.size} evaluation records have unknown membership (first at row {int(unknown[0])})"
        )
    return codes == MEMBER_CODE


def infer_membership(
    target: PredictionSet,
    table: Optional[ThresholdTable] = None,
    metric: Optional[MetricKind] = None,
    class_dependent: bool = True,
) -> np.ndarray:
    """
    Per-record membership decisions.

    The correctness attack ignores the table. For thresholded metrics the
    table must have been learned for the same metric; classes absent from the
    table use its global threshold.
    """
    if metric is None:
        if table is None:
            raise UsageError("infer_membership needs a metric or a threshold table")
        metric = table.metric
    if metric is MetricKind.CORRECTNESS:
        return correctness_array(target.probs, target.labels)
    if table is None:
        raise UsageError(f"the {metric.value} attack needs a threshold table")
    if table.metric is not metric:
        raise MetricMismatch(f"threshold table was learned for {table.metric.value}, not {metric.value}")
    values = metric_values(target, metric)
    return table.direction.decide(values, table.thresholds_for(target.labels, class_dependent))


def evaluate_attack(
    decisions: Sequence[bool],
    truth: Sequence,
    labels: Optional[Sequence[int]] = None,
    metric: MetricKind = MetricKind.CORRECTNESS,
    variant: AttackVariant = AttackVariant.THRESHOLD_FREE,
) -> AttackReport:
    decisions = np.asarray(decisions, dtype=bool).reshape(-1)
    is_member = truth_codes(truth)
    if decisions.size != is_member.size:
        raise UsageError(f"{decisions.size} decisions for {is_member.size} truth tags")
    if not decisions.size:
        raise UsageError("cannot evaluate an attack on an empty set")

    (true_neg, false_pos), (false_neg, true_pos) = confusion_matrix(
        is_member, decisions, labels=[False, True]
    )
    n_member = int(true_pos + false_neg)
    n_nonmember = int(true_neg + false_pos)
    predicted = int(true_pos + false_pos)

    per_class: Dict[int, float] = {}
    if labels is not None:
        labels = np.asarray(labels).reshape(-1)
        correct = decisions == is_member
        for label in np.unique(labels):
            per_class[int(label)] = float(correct[labels == label].mean())

    if n_member != n_nonmember:
        logging.info(
            f"Evaluation set is imbalanced ({n_member} members, {n_nonmember} non-members); "
            "accuracy is not comparable with the 50% baseline."
        )
    return AttackReport(
        metric=metric,
        variant=variant,
        accuracy=float((true_pos + true_neg) / decisions.size),
        precision=float(true_pos / predicted) if predicted else None,
        recall=float(true_pos / n_member) if n_member else None,
        per_class_accuracy=per_class,
        n_member=n_member,
        n_nonmember=n_nonmember,
    )


# --- Benchmark suite ---
class BenchmarkSuite(BaseModel):
    """All benchmark attacks against one target, plus the target model's accuracy."""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    reports: List[AttackReport]
    thresholds: Dict[MetricKind, ThresholdTable]
    train_accuracy: Optional[float]
    test_accuracy: Optional[float]

    def report(self, metric: MetricKind, variant: Optional[AttackVariant] = None) -> AttackReport:
        for report in self.reports:
            if report.metric is metric and (variant is None or report.variant is variant):
                return report
        raise KeyError(f"no {metric.value} report for variant {variant}")

    def class_dependent_gain(self, metric: MetricKind) -> float:
        """Accuracy of class-dependent minus class-independent thresholds for one metric."""
        dependent = self.report(metric, AttackVariant.CLASS_DEPENDENT).accuracy
        independent = self.report(metric, AttackVariant.CLASS_INDEPENDENT).accuracy
        return dependent - independent

    def best_report(self) -> AttackReport:
        return max(self.reports, key=lambda report: report.accuracy)


def _evaluate(target: PredictionSet, decisions: np.ndarray, metric: MetricKind, variant: AttackVariant) -> AttackReport:
    tagged = target.is_member | target.is_nonmember
    return evaluate_attack(
        decisions[tagged],
        target.membership[tagged],
        labels=target.labels[tagged],
        metric=metric,
        variant=variant,
    )


def run_benchmark_suite(
    shadow: PredictionSet,
    target: PredictionSet,
    config: Optional[AuditConfig] = None,
    tables: Optional[Dict[MetricKind, ThresholdTable]] = None,
) -> BenchmarkSuite:
    """
    Learn thresholds on the shadow set and attack the target with every
    benchmark attack: correctness once, and confidence, entropy and modified
    entropy with both class-dependent and class-independent thresholds.

    Pre-learned `tables` are used as given for the metrics they cover.
    """
    config = config or AuditConfig()
    if shadow.num_classes != target.num_classes:
        raise ClassCountMismatch(
            f"shadow has {shadow.num_classes} classes but target has {target.num_classes}"
        )
    if target.n_member + target.n_nonmember == 0:
        raise UnknownMembership("target set has no membership tags to evaluate against")
    if target.has_unknown:
        logging.warning("Target records with unknown membership are excluded from evaluation.")

    learned: Dict[MetricKind, ThresholdTable] = dict(tables or {})
    reports = [
        _evaluate(
            target,
            infer_membership(target, metric=MetricKind.CORRECTNESS),
            MetricKind.CORRECTNESS,
            AttackVariant.THRESHOLD_FREE,
        )
    ]
    for metric in THRESHOLD_METRICS:
        if metric not in learned:
            learned[metric] = learn_class_thresholds(
                shadow,
                metric,
                min_class_support=config.min_class_support,
                balanced=config.balanced,
                workers=config.workers,
            )
        table = learned[metric]
        for variant, class_dependent in (
            (AttackVariant.CLASS_DEPENDENT, True),
            (AttackVariant.CLASS_INDEPENDENT, False),
        ):
            decisions = infer_membership(target, table, metric, class_dependent=class_dependent)
            reports.append(_evaluate(target, decisions, metric, variant))

    train_accuracy, test_accuracy = model_accuracy(target)
    suite = BenchmarkSuite(
        reports=reports,
        thresholds=learned,
        train_accuracy=train_accuracy,
        test_accuracy=test_accuracy,
    )
    best = suite.best_report()
    logging.info(f"Benchmark suite done: best attack {best.name} ({best.variant.value}) at {best.accuracy:.4f}")
    return suite
