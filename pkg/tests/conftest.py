import logging
from typing import Optional, Sequence

import numpy as np
import pytest

from app.core.metrics import Membership, PredictionSet
from app.core.synth import GeneratorSpec, generate


def _make_predictions(
    probs: Sequence[Sequence[float]],
    labels: Sequence[int],
    membership: Sequence[str],
    ids: Optional[Sequence[str]] = None,
) -> PredictionSet:
    return PredictionSet(
        probs=np.asarray(probs, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        membership=np.asarray([Membership(tag).code for tag in membership], dtype=np.int8),
        ids=tuple(ids) if ids is not None else None,
    )


@pytest.fixture
def make_predictions():
    """Build a PredictionSet from plain lists, membership given as 'm' / 'n' / 'u'."""
    return _make_predictions


@pytest.fixture
def confidence_shadow():
    # One class: members at 0.9 and 0.8 confidence, non-members at 0.6 and 0.4.
    return _make_predictions(
        probs=[[0.9, 0.1], [0.8, 0.2], [0.6, 0.4], [0.4, 0.6]],
        labels=[0, 0, 0, 0],
        membership=["m", "m", "n", "n"],
    )


@pytest.fixture(scope="session")
def strong_split():
    """Well separated synthetic data: members far more confident than non-members."""
    return generate(GeneratorSpec(num_classes=10, n_member=2000, n_nonmember=2000, seed=11))


@pytest.fixture(scope="session")
def strong_split_target():
    return generate(GeneratorSpec(num_classes=10, n_member=2000, n_nonmember=2000, seed=12))


@pytest.fixture(autouse=True)
def _quiet_logging():
    logging.getLogger().setLevel(logging.WARNING)
    yield
