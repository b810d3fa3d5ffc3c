import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import UsageError
from app.core.metrics import Direction
from app.core.synth import BLOCK_SIZE, GeneratorSpec, generate, oracle_best_threshold, oracle_exact_risk


def test_same_seed_same_records():
    spec = GeneratorSpec(num_classes=5, n_member=300, n_nonmember=200, seed=7)
    first, second = generate(spec), generate(spec)
    assert np.array_equal(first.probs, second.probs)
    assert np.array_equal(first.labels, second.labels)


def test_different_seeds_differ():
    first = generate(GeneratorSpec(n_member=50, n_nonmember=50, seed=1))
    second = generate(GeneratorSpec(n_member=50, n_nonmember=50, seed=2))
    assert not np.array_equal(first.probs, second.probs)


def test_parallel_blocks_match_serial():
    spec = GeneratorSpec(num_classes=3, n_member=BLOCK_SIZE + 500, n_nonmember=BLOCK_SIZE, seed=4)
    serial, parallel = generate(spec), generate(spec, workers=3)
    assert np.array_equal(serial.probs, parallel.probs)
    assert np.array_equal(serial.membership, parallel.membership)


def test_members_come_first_and_rows_are_distributions():
    spec = GeneratorSpec(num_classes=6, n_member=120, n_nonmember=80, seed=3)
    predictions = generate(spec)
    assert predictions.is_member[:120].all()
    assert predictions.is_nonmember[120:].all()
    assert np.all(predictions.probs >= 0.0)
    assert np.allclose(predictions.probs.sum(axis=1), 1.0, atol=1e-9)
    assert predictions.labels.min() >= 0 and predictions.labels.max() < 6


def test_member_boost_raises_confidence():
    predictions = generate(GeneratorSpec(num_classes=10, n_member=2000, n_nonmember=2000, seed=5))
    confidence = predictions.probs[np.arange(len(predictions)), predictions.labels]
    assert confidence[predictions.is_member].mean() > confidence[predictions.is_nonmember].mean() + 0.3


def test_heterogeneity_scales_boost_per_class():
    spec = GeneratorSpec(num_classes=2, n_member=4000, n_nonmember=0, member_boost=2.0, heterogeneity=[1.0, 20.0])
    predictions = generate(spec)
    confidence = predictions.probs[np.arange(len(predictions)), predictions.labels]
    assert confidence[predictions.labels == 1].mean() > confidence[predictions.labels == 0].mean()
    assert list(spec.multipliers) == [1.0, 20.0]


@pytest.mark.parametrize(
    "fields",
    [
        {"member_boost": 1.0, "nonmember_boost": 2.0},
        {"num_classes": 3, "heterogeneity": [1.0, 2.0]},
        {"num_classes": 2, "heterogeneity": [1.0, 0.0]},
        {"n_member": 0, "n_nonmember": 0},
        {"num_classes": 1},
        {"base_concentration": 0.0},
    ],
)
def test_invalid_specs(fields):
    with pytest.raises(ValidationError):
        GeneratorSpec(**fields)


# --- oracles ---
def test_oracle_threshold_examples():
    threshold, accuracy = oracle_best_threshold([0.9, 0.8, 0.6, 0.4], [True, True, False, False], Direction.AT_LEAST)
    assert threshold == pytest.approx(0.7) and accuracy == 1.0
    assert oracle_best_threshold([1.0, 2.0, 3.0, 4.0], [True, True, False, False], Direction.AT_MOST) == (2.5, 1.0)
    threshold, accuracy = oracle_best_threshold([0.5] * 4, [True, True, False, False], Direction.AT_LEAST)
    assert threshold == -math.inf and accuracy == 0.5


def test_oracle_threshold_needs_both_tags():
    with pytest.raises(UsageError):
        oracle_best_threshold([0.1, 0.2], [True, True], Direction.AT_LEAST)


def test_exact_risk_examples():
    assert oracle_exact_risk([8, 2], [2, 8], 0, 0.5) == pytest.approx(0.8)
    assert oracle_exact_risk([8, 2], [2, 8], 0, 0.1) == pytest.approx(0.3077, abs=1e-4)
    assert oracle_exact_risk([5, 5], [5, 5], 1, 0.5) == 0.5


def test_exact_risk_without_evidence_is_prior():
    assert oracle_exact_risk([4, 0], [4, 0], 1, 0.3) == 0.3
    assert oracle_exact_risk([4, 0], [4, 0], 1, 0.3, pseudo_count=1.0) == pytest.approx(0.3)
