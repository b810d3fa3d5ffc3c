import numpy as np
import pytest

from app.core.config import AuditConfig
from app.core.errors import EmptySweep, FewerThanTwoClasses, InvariantViolation, UsageError
from app.core.report import (
    PER_EPOCH_SHADOW,
    SHARED_SHADOW,
    EpochSnapshot,
    SweepRow,
    closest_epoch,
    early_stopping_sweep,
    per_class_risk_vs_generalization,
)
from app.core.riskscore import RiskScoreTable
from app.core.synth import GeneratorSpec, generate


def scores_for(target, risks):
    return RiskScoreTable(
        ids=tuple(target.row_ids()),
        labels=target.labels,
        values=np.zeros(len(target)),
        scores=np.asarray(risks, dtype=np.float64),
        membership=target.membership,
    )


@pytest.fixture
def two_class_target(make_predictions):
    # Class 0 non-members are all wrong (gap 1), class 1 non-members all right (gap 0).
    probs = [[0.9, 0.1], [0.9, 0.1], [0.2, 0.8], [0.1, 0.9], [0.1, 0.9], [0.3, 0.7]]
    labels = [0, 0, 0, 1, 1, 1]
    return make_predictions(probs, labels, ["m", "m", "n", "m", "m", "n"])


def small_split(seed, boost=20.0):
    return generate(GeneratorSpec(num_classes=4, n_member=300, n_nonmember=300, member_boost=boost, seed=seed))


# --- risk vs. generalization ---
def test_two_classes_correlate_perfectly(two_class_target):
    scores = scores_for(two_class_target, [0.9, 0.9, 0.2, 0.6, 0.6, 0.4])
    report = per_class_risk_vs_generalization(two_class_target, scores)
    assert [row.label for row in report.rows] == [0, 1]
    assert report.rows[0].generalization_error == 1.0
    assert report.rows[1].generalization_error == 0.0
    assert report.rows[0].avg_member_risk == pytest.approx(0.9)
    assert report.pearson == pytest.approx(1.0)


def test_zero_variance_leaves_correlation_undefined(two_class_target):
    scores = scores_for(two_class_target, [0.7] * 6)
    report = per_class_risk_vs_generalization(two_class_target, scores)
    assert report.pearson is None
    assert report.p_value is None


def test_classes_without_both_tags_are_skipped(make_predictions):
    probs = [[0.9, 0.05, 0.05], [0.2, 0.7, 0.1], [0.1, 0.8, 0.1], [0.5, 0.3, 0.2], [0.1, 0.1, 0.8]]
    target = make_predictions(probs, [0, 0, 1, 1, 2], ["m", "n", "m", "n", "m"])
    report = per_class_risk_vs_generalization(target, scores_for(target, [0.9, 0.3, 0.6, 0.4, 0.8]))
    assert report.skipped_classes == [2]
    assert len(report.rows) == 2


def test_one_usable_class_is_not_enough(make_predictions):
    target = make_predictions([[0.9, 0.1], [0.4, 0.6], [0.2, 0.8]], [0, 0, 1], ["m", "n", "m"])
    with pytest.raises(FewerThanTwoClasses):
        per_class_risk_vs_generalization(target, scores_for(target, [0.8, 0.3, 0.7]))


def test_scores_must_align_with_target(two_class_target, make_predictions):
    other = make_predictions([[0.5, 0.5]], [0], ["m"])
    with pytest.raises(UsageError):
        per_class_risk_vs_generalization(two_class_target, scores_for(other, [0.5]))


# --- closest epoch ---
def row(epoch, test_accuracy):
    return SweepRow(
        epoch=epoch,
        train_accuracy=1.0,
        test_accuracy=test_accuracy,
        best_attack_accuracy=0.6,
        best_attack="I_conf (class-dependent)",
        shadow_pairing=SHARED_SHADOW,
    )


def test_closest_epoch_to_reference():
    rows = [row(10, 0.74), row(20, 0.764), row(30, 0.809)]
    assert closest_epoch(rows, 0.766) == 20


def test_closest_epoch_tie_goes_to_earlier_epoch():
    assert closest_epoch([row(1, 0.5), row(2, 1.0)], 0.75) == 1


def test_closest_epoch_skips_missing_accuracy():
    assert closest_epoch([row(1, None), row(2, 0.3)], 0.9) == 2
    assert closest_epoch([row(1, None)], 0.9) is None


# --- sweep ---
def test_single_snapshot_is_its_own_closest_epoch():
    result = early_stopping_sweep([EpochSnapshot(5, small_split(1))], small_split(2), reference_accuracy=0.4)
    assert [r.epoch for r in result.rows] == [5]
    assert result.closest_epoch == 5
    assert result.shadow_pairing == SHARED_SHADOW
    assert 0.0 <= result.rows[0].best_attack_accuracy <= 1.0


def test_rows_come_back_in_epoch_order():
    snapshots = [EpochSnapshot(epoch, small_split(epoch, boost)) for epoch, boost in ((30, 40.0), (10, 2.0), (20, 10.0))]
    result = early_stopping_sweep(snapshots, small_split(99), config=AuditConfig(workers=2))
    assert [r.epoch for r in result.rows] == [10, 20, 30]
    assert result.closest_epoch is None
    assert all(r.test_accuracy is not None for r in result.rows)


def test_per_epoch_shadows():
    snapshots = [EpochSnapshot(1, small_split(1)), EpochSnapshot(2, small_split(2))]
    result = early_stopping_sweep(snapshots, [small_split(11), small_split(12)])
    assert result.shadow_pairing == PER_EPOCH_SHADOW
    assert {r.shadow_pairing for r in result.rows} == {PER_EPOCH_SHADOW}


def test_shadow_list_must_match_snapshots():
    snapshots = [EpochSnapshot(1, small_split(1)), EpochSnapshot(2, small_split(2))]
    with pytest.raises(UsageError):
        early_stopping_sweep(snapshots, [small_split(11)])


def test_empty_sweep():
    with pytest.raises(EmptySweep):
        early_stopping_sweep([], small_split(1))


def test_duplicate_epochs_rejected():
    snapshots = [EpochSnapshot(3, small_split(1)), EpochSnapshot(3, small_split(2))]
    with pytest.raises(InvariantViolation):
        early_stopping_sweep(snapshots, small_split(9))


def test_negative_epoch_rejected():
    with pytest.raises(InvariantViolation):
        EpochSnapshot(-1, small_split(1))
