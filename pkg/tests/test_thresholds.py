import time

import numpy as np
import pytest

from app.core.attacks import evaluate_attack, infer_membership
from app.core.errors import EmptyShadow, UnsupportedMetric
from app.core.metrics import Direction, MetricKind
from app.core.synth import GeneratorSpec, generate, oracle_best_threshold
from app.core.thresholds import (
    ThresholdTable,
    accuracy_at,
    best_threshold,
    learn_class_thresholds,
    learn_global_threshold,
)


def test_class_threshold_separates_confidences(confidence_shadow):
    table = learn_class_thresholds(confidence_shadow, MetricKind.CONFIDENCE, min_class_support=1)
    entry = table.per_class[0]
    assert entry.threshold == pytest.approx(0.7)
    assert entry.shadow_accuracy == 1.0
    assert not entry.fallback
    assert (entry.n_member, entry.n_nonmember) == (2, 2)


def test_identical_values_pick_the_lower_sentinel():
    threshold, accuracy = best_threshold(
        np.array([0.5, 0.5, 0.5, 0.5]), np.array([True, True, False, False]), Direction.AT_LEAST
    )
    assert threshold == -np.inf
    assert accuracy == 0.5


def test_modified_entropy_threshold_between_groups():
    threshold, accuracy = best_threshold(
        np.array([1.0, 2.0, 3.0, 4.0]), np.array([True, True, False, False]), Direction.AT_MOST
    )
    assert threshold == 2.5
    assert accuracy == 1.0


def test_inverted_separation_falls_back_to_sentinel():
    threshold, accuracy = best_threshold(
        np.array([3.0, 4.0, 1.0, 2.0]), np.array([True, True, False, False]), Direction.AT_MOST
    )
    assert threshold == -np.inf
    assert accuracy == 0.5


def test_single_class_global_equals_class_threshold(confidence_shadow):
    table = learn_class_thresholds(confidence_shadow, MetricKind.CONFIDENCE, min_class_support=1)
    assert learn_global_threshold(confidence_shadow, MetricKind.CONFIDENCE) == table.per_class[0].threshold


@pytest.mark.parametrize("balanced", [False, True])
def test_matches_brute_force_oracle(balanced):
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        # Coarse grid so that ties between values are common.
        values = rng.integers(0, 12, size=n) / 4.0
        is_member = rng.random(n) < 0.5
        is_member[0], is_member[1] = True, False
        direction = Direction.AT_LEAST if rng.random() < 0.5 else Direction.AT_MOST
        expected = oracle_best_threshold(values.tolist(), is_member.tolist(), direction, balanced)
        assert best_threshold(values, is_member, direction, balanced) == expected
    assert time.perf_counter() - started < 5.0


def test_shadow_accuracy_never_below_half(strong_split):
    for metric in (MetricKind.CONFIDENCE, MetricKind.ENTROPY, MetricKind.MODIFIED_ENTROPY):
        table = learn_class_thresholds(strong_split, metric)
        for entry in table.per_class.values():
            if not entry.fallback:
                assert entry.shadow_accuracy >= 0.5


def test_class_dependent_at_least_global_in_sample(strong_split):
    truth = strong_split.membership
    for metric in (MetricKind.CONFIDENCE, MetricKind.ENTROPY, MetricKind.MODIFIED_ENTROPY):
        table = learn_class_thresholds(strong_split, metric)
        dependent = evaluate_attack(infer_membership(strong_split, table, metric, class_dependent=True), truth)
        independent = evaluate_attack(infer_membership(strong_split, table, metric, class_dependent=False), truth)
        assert dependent.accuracy >= independent.accuracy


def test_scaling_values_scales_threshold():
    rng = np.random.default_rng(5)
    values = rng.integers(1, 40, size=60).astype(np.float64)
    is_member = rng.random(60) < 0.5
    is_member[:2] = [True, False]
    threshold, accuracy = best_threshold(values, is_member, Direction.AT_MOST)
    scaled_threshold, scaled_accuracy = best_threshold(values * 3.0, is_member, Direction.AT_MOST)
    assert scaled_accuracy == accuracy
    assert scaled_threshold == pytest.approx(3.0 * threshold)


def test_learning_is_deterministic(strong_split):
    first = learn_class_thresholds(strong_split, MetricKind.MODIFIED_ENTROPY)
    second = learn_class_thresholds(strong_split, MetricKind.MODIFIED_ENTROPY)
    assert first == second


def test_parallel_learning_matches_serial(strong_split):
    serial = learn_class_thresholds(strong_split, MetricKind.CONFIDENCE)
    parallel = learn_class_thresholds(strong_split, MetricKind.CONFIDENCE, workers=4)
    assert serial == parallel


def test_sparse_class_uses_global_threshold(make_predictions):
    probs = [[0.9, 0.1]] * 6 + [[0.3, 0.7]] * 6 + [[0.2, 0.8], [0.6, 0.4]]
    labels = [0] * 12 + [1, 1]
    membership = ["m"] * 6 + ["n"] * 6 + ["m", "n"]
    table = learn_class_thresholds(make_predictions(probs, labels, membership), MetricKind.CONFIDENCE)
    assert set(table.per_class) == {0, 1}
    assert table.per_class[1].fallback
    assert table.per_class[1].threshold == table.global_threshold
    assert table.threshold_for(1) == table.global_threshold
    assert not table.per_class[0].fallback


def test_classes_missing_from_table_use_global_threshold(confidence_shadow):
    table = learn_class_thresholds(confidence_shadow, MetricKind.CONFIDENCE, min_class_support=1)
    assert table.threshold_for(7) == table.global_threshold
    assert table.threshold_for(0, class_dependent=False) == table.global_threshold


def test_accuracy_at_matches_search(confidence_shadow):
    values = np.array([0.9, 0.8, 0.6, 0.4])
    is_member = np.array([True, True, False, False])
    assert accuracy_at(values, is_member, Direction.AT_LEAST, 0.7) == 1.0
    assert accuracy_at(values, is_member, Direction.AT_LEAST, 0.85) == 0.75


def test_requires_both_memberships(make_predictions):
    members_only = make_predictions([[0.9, 0.1], [0.8, 0.2]], [0, 0], ["m", "m"])
    with pytest.raises(EmptyShadow):
        learn_class_thresholds(members_only, MetricKind.CONFIDENCE)


def test_rejects_correctness(confidence_shadow):
    with pytest.raises(UnsupportedMetric):
        learn_class_thresholds(confidence_shadow, MetricKind.CORRECTNESS)


def test_table_survives_json_with_infinite_thresholds(make_predictions):
    shadow = make_predictions([[0.5, 0.5]] * 4, [0] * 4, ["m", "m", "n", "n"])
    table = learn_class_thresholds(shadow, MetricKind.CONFIDENCE, min_class_support=1)
    assert table.global_threshold == -np.inf
    assert ThresholdTable.model_validate_json(table.model_dump_json()) == table


def test_balanced_objective_handles_imbalanced_shadow():
    spec = GeneratorSpec(num_classes=4, n_member=3000, n_nonmember=600, member_boost=8.0, seed=3)
    shadow = generate(spec)
    table = learn_class_thresholds(shadow, MetricKind.CONFIDENCE, balanced=True)
    assert table.balanced
    assert 0.5 <= table.global_accuracy <= 1.0
