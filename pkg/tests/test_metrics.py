import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from app.core.errors import InvariantViolation, UnsupportedMetric
from app.core.metrics import (
    EPSILON,
    Direction,
    Membership,
    MetricKind,
    PredictionRecord,
    PredictionSet,
    confidence,
    correctness,
    entropy,
    entropy_array,
    metric_value,
    metric_values,
    model_accuracy,
    modified_entropy,
    modified_entropy_array,
)


def record(probs, label, membership="u"):
    return PredictionRecord(probs=probs, label=label, membership=membership)


# --- correctness ---
def test_correctness_argmax_matches_label():
    assert correctness(record([0.7, 0.2, 0.1], 0)) is True


def test_correctness_argmax_mismatch():
    assert correctness(record([0.1, 0.9], 0)) is False


def test_correctness_tie_goes_to_lowest_index():
    assert correctness(record([0.5, 0.5], 1)) is False
    assert correctness(record([0.5, 0.5], 0)) is True


# --- confidence ---
@pytest.mark.parametrize(
    "probs, label, expected",
    [([0.7, 0.2, 0.1], 0, 0.7), ([0.0, 1.0], 0, 0.0), ([0.25, 0.25, 0.25, 0.25], 3, 0.25)],
)
def test_confidence_reads_label_component(probs, label, expected):
    assert confidence(record(probs, label)) == expected


# --- entropy ---
def test_entropy_of_uniform_four():
    assert entropy(record([0.25] * 4, 0)) == pytest.approx(math.log(4), abs=1e-6)


def test_entropy_of_one_hot_is_near_zero():
    assert entropy(record([1.0, 0.0], 0)) < 1e-10


def test_entropy_of_skewed_binary():
    assert entropy(record([0.9, 0.1], 0)) == pytest.approx(0.325083, abs=1e-6)


@pytest.mark.parametrize("k", [2, 10, 100])
def test_entropy_of_uniform_is_log_k(k):
    probs = np.full((1, k), 1.0 / k)
    assert abs(entropy_array(probs)[0] - math.log(k)) <= 1e-10


# --- modified entropy ---
def test_modified_entropy_confident_correct_is_zero():
    assert modified_entropy(record([1.0, 0.0], 0)) <= 1e-10


def test_modified_entropy_symmetric_binary_is_log_two():
    assert modified_entropy(record([0.5, 0.5], 0)) == pytest.approx(math.log(2), abs=1e-6)


def test_modified_entropy_confident_wrong_is_large_and_finite():
    value = modified_entropy(record([1.0, 0.0], 1))
    assert math.isfinite(value)
    assert value == pytest.approx(-2 * (1 - EPSILON) * math.log(EPSILON), abs=1e-6)
    assert value == pytest.approx(55.262, abs=1e-3)


def test_modified_entropy_separates_right_and_wrong_where_entropy_cannot():
    right, wrong = record([1.0, 0.0], 0), record([1.0, 0.0], 1)
    assert modified_entropy(right) < modified_entropy(wrong)
    assert entropy(right) == pytest.approx(entropy(wrong), abs=1e-10)


def test_modified_entropy_decreases_with_true_label_probability():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        k = int(rng.integers(2, 21))
        wrong_share = rng.dirichlet(np.ones(k - 1))
        p_low = rng.uniform(0.01, 0.98)
        delta = rng.uniform(1e-3, 0.99 - p_low)
        rows = []
        for p_y in (p_low, p_low + delta):
            rows.append(np.concatenate(([p_y], (1.0 - p_y) * wrong_share)))
        values = modified_entropy_array(np.array(rows), np.array([0, 0]))
        assert values[0] > values[1]


def test_modified_entropy_increases_when_a_wrong_class_takes_mass():
    probs = np.array([[0.6, 0.2, 0.2], [0.5, 0.3, 0.2]])
    values = modified_entropy_array(probs, np.array([0, 0]))
    assert values[1] > values[0]


probability_vectors = st.integers(min_value=3, max_value=12).flatmap(
    lambda k: st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=k, max_size=k)
)


@settings(max_examples=200, deadline=None)
@given(weights=probability_vectors, label=st.integers(min_value=0, max_value=2), seed=st.integers(0, 2**16))
def test_metrics_ignore_order_of_wrong_classes(weights, label, seed):
    probs = np.asarray(weights) / np.sum(weights)
    others = [i for i in range(len(probs)) if i != label]
    shuffled = probs.copy()
    shuffled[others] = probs[np.random.default_rng(seed).permutation(others)]
    original, permuted = record(tuple(probs), label), record(tuple(shuffled), label)

    assert correctness(original) == correctness(permuted) or np.sum(probs == probs.max()) > 1
    assert confidence(original) == confidence(permuted)
    assert entropy(original) == pytest.approx(entropy(permuted), abs=1e-12)
    assert modified_entropy(original) == pytest.approx(modified_entropy(permuted), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(weights=probability_vectors)
def test_entropy_and_modified_entropy_stay_in_range(weights):
    probs = np.asarray([weights]) / np.sum(weights)
    k = probs.shape[1]
    assert 0.0 <= entropy_array(probs)[0] <= math.log(k) + 1e-9
    assert modified_entropy_array(probs, np.array([0]))[0] >= -1e-12


# --- dispatch ---
def test_metric_value_dispatch():
    assert metric_value(record([0.7, 0.3], 0), MetricKind.CONFIDENCE) == 0.7
    assert metric_value(record([0.25] * 4, 0), MetricKind.ENTROPY) == pytest.approx(1.386294, abs=1e-6)
    assert metric_value(record([0.5, 0.5], 0), MetricKind.MODIFIED_ENTROPY) == pytest.approx(0.693147, abs=1e-6)


def test_metric_value_rejects_correctness():
    with pytest.raises(UnsupportedMetric):
        metric_value(record([0.5, 0.5], 0), MetricKind.CORRECTNESS)


def test_metric_directions():
    assert MetricKind.CONFIDENCE.direction is Direction.AT_LEAST
    assert MetricKind.ENTROPY.direction is Direction.AT_MOST
    assert MetricKind.MODIFIED_ENTROPY.direction is Direction.AT_MOST
    assert MetricKind.CORRECTNESS.direction is None


# --- records and sets ---
def test_record_rejects_bad_sum():
    with pytest.raises(ValidationError):
        record([0.5, 0.3], 0)


def test_record_tolerance_can_be_widened():
    row = {"probs": [0.5, 0.50001], "label": 0}
    with pytest.raises(ValidationError):
        PredictionRecord.model_validate(row)
    assert PredictionRecord.model_validate(row, context={"tolerance": 1e-4}).label == 0


def test_record_rejects_label_out_of_range():
    with pytest.raises(ValidationError):
        record([0.5, 0.5], 2)


def test_record_needs_two_classes():
    with pytest.raises(ValidationError):
        record([1.0], 0)


def test_prediction_set_names_offending_row(make_predictions):
    with pytest.raises(InvariantViolation, match="row b"):
        make_predictions([[0.5, 0.5], [0.4, 0.4]], [0, 1], ["m", "n"], ids=["a", "b"])


def test_prediction_set_is_read_only(make_predictions):
    predictions = make_predictions([[0.5, 0.5]], [0], ["m"])
    with pytest.raises(ValueError):
        predictions.probs[0, 0] = 1.0


def test_prediction_set_views(make_predictions):
    predictions = make_predictions(
        [[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.5, 0.5]], [0, 1, 1, 0], ["m", "m", "n", "u"]
    )
    assert predictions.num_classes == 2
    assert predictions.n_member == 2
    assert predictions.n_nonmember == 1
    assert predictions.has_unknown
    assert predictions.class_counts() == {0: 2, 1: 2}
    assert len(predictions.members()) == 2
    assert predictions.record(2).membership is Membership.NONMEMBER
    assert model_accuracy(predictions) == (1.0, 0.0)


def test_from_records_requires_shared_class_count():
    with pytest.raises(InvariantViolation):
        PredictionSet.from_records([record([0.5, 0.5], 0), record([0.2, 0.3, 0.5], 0)])


def test_metric_values_match_single_record_forms(strong_split):
    values = metric_values(strong_split, MetricKind.MODIFIED_ENTROPY)
    for index in (0, 17, 3999):
        assert values[index] == pytest.approx(modified_entropy(strong_split.record(index)), abs=1e-12)
