"""
Cross-cutting analyses: per-class risk vs. generalization error, and
early-stopping sweeps over per-epoch prediction dumps.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy import stats

from app.core.attacks import run_benchmark_suite
from app.core.config import AuditConfig
from app.core.errors import EmptySweep, FewerThanTwoClasses, InvariantViolation, UsageError
from app.core.metrics import PredictionSet, correctness_array, model_accuracy
from app.core.riskscore import RiskScoreTable


# --- Risk vs. generalization ---
class ClassRiskRow(BaseModel):
    label: int
    avg_member_risk: float
    member_accuracy: float
    nonmember_accuracy: float
    generalization_error: float
    n_member: int
    n_nonmember: int


class RiskGeneralizationReport(BaseModel):
    rows: List[ClassRiskRow]
    skipped_classes: List[int]
    # None when either axis has zero variance.
    pearson: Optional[float]
    p_value: Optional[float]


def per_class_risk_vs_generalization(target: PredictionSet, scores: RiskScoreTable) -> RiskGeneralizationReport:
    """
    Average member risk score and generalization error (member accuracy minus
    non-member accuracy) per class, with their Pearson correlation.

    `scores` must be the risk scores of `target`, in the same record order.
    Classes lacking members or non-members are skipped and listed.
    """
    if len(scores) != len(target):
        raise UsageError(f"{len(scores)} risk scores for {len(target)} target records")
    if not np.array_equal(scores.labels, target.labels):
        raise UsageError("risk scores are not aligned with the target records")

    correct = correctness_array(target.probs, target.labels)
    risk = np.asarray(scores.scores)
    rows: List[ClassRiskRow] = []
    skipped: List[int] = []
    for label in np.unique(target.labels):
        in_class = target.labels == label
        members = in_class & target.is_member
        nonmembers = in_class & target.is_nonmember
        if not members.any() or not nonmembers.any():
            skipped.append(int(label))
            continue
        member_accuracy = float(correct[members].mean())
        nonmember_accuracy = float(correct[nonmembers].mean())
        rows.append(
            ClassRiskRow(
                label=int(label),
                avg_member_risk=float(risk[members].mean()),
                member_accuracy=member_accuracy,
                nonmember_accuracy=nonmember_accuracy,
                generalization_error=member_accuracy - nonmember_accuracy,
                n_member=int(members.sum()),
                n_nonmember=int(nonmembers.sum()),
            )
        )

    if skipped:
        logging.warning(f"Skipped {len(skipped)} classes without both members and non-members: {skipped}")
    if len(rows) < 2:
        raise FewerThanTwoClasses(f"correlation needs at least two usable classes, got {len(rows)}")

    risks = np.array([row.avg_member_risk for row in rows])
    gaps = np.array([row.generalization_error for row in rows])
    pearson = p_value = None
    if np.ptp(risks) > 0 and np.ptp(gaps) > 0:
        result = stats.pearsonr(risks, gaps)
        pearson, p_value = float(result[0]), float(result[1])
    else:
        logging.warning("Pearson correlation undefined: zero variance across classes.")
    return RiskGeneralizationReport(rows=rows, skipped_classes=skipped, pearson=pearson, p_value=p_value)


# --- Early-stopping sweep ---
SHARED_SHADOW = "shared"
PER_EPOCH_SHADOW = "per-epoch"


@dataclass(frozen=True, eq=False)
class EpochSnapshot:
    """Predictions of one saved training epoch; accuracies are computed, never supplied."""
    epoch: int
    predictions: PredictionSet

    def __post_init__(self):
        if self.epoch < 0:
            raise InvariantViolation(f"epoch must be non-negative, got {self.epoch}")

    @property
    def accuracies(self) -> Tuple[Optional[float], Optional[float]]:
        return model_accuracy(self.predictions)

    @property
    def train_accuracy(self) -> Optional[float]:
        return self.accuracies[0]

    @property
    def test_accuracy(self) -> Optional[float]:
        return self.accuracies[1]


class SweepRow(BaseModel):
    epoch: int
    train_accuracy: Optional[float]
    test_accuracy: Optional[float]
    best_attack_accuracy: float
    best_attack: str
    shadow_pairing: str


class SweepResult(BaseModel):
    rows: List[SweepRow]
    reference_accuracy: Optional[float]
    closest_epoch: Optional[int]
    shadow_pairing: str


def closest_epoch(rows: Sequence[SweepRow], reference_accuracy: float) -> Optional[int]:
    """Epoch whose test accuracy is nearest the reference; earlier epochs win ties."""
    best: Optional[SweepRow] = None
    for row in rows:
        if row.test_accuracy is None:
            continue
        if best is None or abs(row.test_accuracy - reference_accuracy) < abs(best.test_accuracy - reference_accuracy):
            best = row
    return best.epoch if best is not None else None


def early_stopping_sweep(
    snapshots: Sequence[EpochSnapshot],
    shadows: Union[PredictionSet, Sequence[PredictionSet]],
    reference_accuracy: Optional[float] = None,
    config: Optional[AuditConfig] = None,
) -> SweepResult:
    """
    Run the benchmark suite on every saved epoch of an undefended model.

    Args:
        snapshots: one snapshot per saved epoch
        shadows: a single shadow set shared by all epochs, or one per snapshot (same order)
        reference_accuracy: test accuracy of the defended model to compare against
        config: pipeline settings forwarded to the benchmark suite

    Returns:
        Rows in increasing epoch order, and the epoch closest to the reference accuracy.
    """
    config = config or AuditConfig()
    if not snapshots:
        raise EmptySweep("early-stopping sweep needs at least one snapshot")
    if isinstance(shadows, PredictionSet):
        pairing = SHARED_SHADOW
        pairs = [(snapshot, shadows) for snapshot in snapshots]
    else:
        if len(shadows) != len(snapshots):
            raise UsageError(f"{len(shadows)} shadow sets for {len(snapshots)} snapshots")
        pairing = PER_EPOCH_SHADOW
        pairs = list(zip(snapshots, shadows))

    pairs.sort(key=lambda pair: pair[0].epoch)
    epochs = [snapshot.epoch for snapshot, _ in pairs]
    if any(later <= earlier for earlier, later in zip(epochs, epochs[1:])):
        raise InvariantViolation(f"snapshot epochs must be distinct, got {epochs}")

    def _evaluate(pair: Tuple[EpochSnapshot, PredictionSet]) -> SweepRow:
        snapshot, shadow = pair
        suite = run_benchmark_suite(shadow, snapshot.predictions, config)
        best = suite.best_report()
        logging.info(f"Epoch {snapshot.epoch}: test accuracy {suite.test_accuracy}, best attack {best.accuracy:.4f}")
        return SweepRow(
            epoch=snapshot.epoch,
            train_accuracy=suite.train_accuracy,
            test_accuracy=suite.test_accuracy,
            best_attack_accuracy=best.accuracy,
            best_attack=f"{best.name} ({best.variant.value})",
            shadow_pairing=pairing,
        )

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_evaluate, pairs))
    else:
        rows = [_evaluate(pair) for pair in pairs]

    selected = closest_epoch(rows, reference_accuracy) if reference_accuracy is not None else None
    return SweepResult(
        rows=rows,
        reference_accuracy=reference_accuracy,
        closest_epoch=selected,
        shadow_pairing=pairing,
    )
