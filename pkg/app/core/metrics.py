"""
Prediction data types and the four per-sample membership signals.

All metrics are computed in nats. Probabilities are clamped to [EPSILON, 1]
before every logarithm so that the metrics stay finite.
"""
import enum
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationInfo, field_validator, model_validator

from app.core.errors import InvariantViolation, UnsupportedMetric

EPSILON = 1e-12
PROB_SUM_TOLERANCE = 1e-6


class Membership(str, enum.Enum):
    MEMBER = "m"
    NONMEMBER = "n"
    UNKNOWN = "u"

    @property
    def code(self) -> int:
        return _MEMBERSHIP_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "Membership":
        return _CODE_MEMBERSHIPS[int(code)]


_MEMBERSHIP_CODES = {Membership.MEMBER: 1, Membership.NONMEMBER: 0, Membership.UNKNOWN: -1}
_CODE_MEMBERSHIPS = {code: tag for tag, code in _MEMBERSHIP_CODES.items()}

MEMBER_CODE = 1
NONMEMBER_CODE = 0
UNKNOWN_CODE = -1


class Direction(str, enum.Enum):
    """How a metric value is compared against a threshold to decide 'member'."""
    AT_LEAST = ">="
    AT_MOST = "<="

    def decide(self, values: np.ndarray, thresholds) -> np.ndarray:
        if self is Direction.AT_LEAST:
            return values >= thresholds
        return values <= thresholds


class MetricKind(str, enum.Enum):
    CORRECTNESS = "correctness"
    CONFIDENCE = "confidence"
    ENTROPY = "entropy"
    MODIFIED_ENTROPY = "modified_entropy"

    @property
    def direction(self) -> Optional[Direction]:
        # Correctness is threshold-free.
        if self is MetricKind.CORRECTNESS:
            return None
        if self is MetricKind.CONFIDENCE:
            return Direction.AT_LEAST
        return Direction.AT_MOST

    @property
    def is_thresholded(self) -> bool:
        return self is not MetricKind.CORRECTNESS

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    MetricKind.CORRECTNESS: "corr",
    MetricKind.CONFIDENCE: "conf",
    MetricKind.ENTROPY: "entr",
    MetricKind.MODIFIED_ENTROPY: "Mentr",
}

THRESHOLD_METRICS: Tuple[MetricKind, ...] = (
    MetricKind.CONFIDENCE,
    MetricKind.ENTROPY,
    MetricKind.MODIFIED_ENTROPY,
)


# --- Records ---
class PredictionRecord(BaseModel):
    """
    One sample's prediction vector, true label and membership tag.

    The probability-sum tolerance defaults to PROB_SUM_TOLERANCE and can be
    widened through the validation context, e.g.
    `PredictionRecord.model_validate(row, context={"tolerance": 1e-4})`.
    """
    model_config = ConfigDict(frozen=True)

    probs: Tuple[float, ...]
    label: int
    membership: Membership = Membership.UNKNOWN
    id: Optional[str] = None

    @field_validator("probs")
    @classmethod
    def _check_probs(cls, probs: Tuple[float, ...], info: ValidationInfo) -> Tuple[float, ...]:
        tolerance = (info.context or {}).get("tolerance", PROB_SUM_TOLERANCE)
        if len(probs) < 2:
            raise ValueError(f"probs must have at least 2 entries, got {len(probs)}")
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError("every probability must lie in [0, 1]")
        total = sum(probs)
        if abs(total - 1.0) > tolerance:
            raise ValueError(f"probabilities sum to {total!r}, outside tolerance {tolerance}")
        return probs

    @model_validator(mode="after")
    def _check_label(self) -> "PredictionRecord":
        if not 0 <= self.label < len(self.probs):
            raise ValueError(f"label {self.label} outside [0, {len(self.probs)})")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.probs)


def check_prediction_arrays(
    probs: np.ndarray,
    labels: np.ndarray,
    ids: Optional[Sequence[str]] = None,
    tolerance: float = PROB_SUM_TOLERANCE,
) -> None:
    """
    Vectorized form of the PredictionRecord invariants.
    Raises InvariantViolation naming the first offending row.
    """
    def _row_id(index: int) -> str:
        return ids[index] if ids is not None else str(index)

    if probs.ndim != 2 or probs.shape[1] < 2:
        raise InvariantViolation(f"probs must be an (n, k>=2) matrix, got shape {probs.shape}")
    out_of_range = np.flatnonzero(~np.all((probs >= 0.0) & (probs <= 1.0), axis=1))
    if out_of_range.size:
        raise InvariantViolation("probability outside [0, 1]", _row_id(int(out_of_range[0])))
    sums = probs.sum(axis=1)
    bad_sums = np.flatnonzero(np.abs(sums - 1.0) > tolerance)
    if bad_sums.size:
        row = int(bad_sums[0])
        raise InvariantViolation(
            f"probabilities sum to {sums[row]!r}, outside tolerance {tolerance}", _row_id(row)
        )
    bad_labels = np.flatnonzero((labels < 0) | (labels >= probs.shape[1]))
    if bad_labels.size:
        row = int(bad_labels[0])
        raise InvariantViolation(f"label {labels[row]} outside [0, {probs.shape[1]})", _row_id(row))


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """
    An ordered, immutable collection of prediction records sharing one class count.

    Stored column-wise: `probs` is (n, k), `labels` is (n,), and `membership`
    holds the integer codes 1 (member), 0 (non-member) and -1 (unknown).
    """
    probs: np.ndarray
    labels: np.ndarray
    membership: np.ndarray
    ids: Optional[Tuple[str, ...]] = None
    tolerance: float = PROB_SUM_TOLERANCE

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        membership = np.array(self.membership, dtype=np.int8, copy=True).reshape(-1)
        ids = tuple(str(i) for i in self.ids) if self.ids is not None else None

        if probs.ndim != 2:
            raise InvariantViolation(f"probs must be two dimensional, got shape {probs.shape}")
        n = probs.shape[0]
        if labels.shape[0] != n or membership.shape[0] != n:
            raise InvariantViolation("probs, labels and membership must have the same length")
        if ids is not None and len(ids) != n:
            raise InvariantViolation("ids must have one entry per record")
        if not np.isin(membership, (MEMBER_CODE, NONMEMBER_CODE, UNKNOWN_CODE)).all():
            raise InvariantViolation("membership codes must be 1, 0 or -1")
        check_prediction_arrays(probs, labels, ids, self.tolerance)

        for array in (probs, labels, membership):
            array.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "membership", membership)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_records(
        cls,
        records: Sequence[PredictionRecord],
        num_classes: Optional[int] = None,
        tolerance: float = PROB_SUM_TOLERANCE,
    ) -> "PredictionSet":
        if not records and num_classes is None:
            raise InvariantViolation("cannot infer the class count of an empty record list")
        k = num_classes if num_classes is not None else records[0].num_classes
        for index, record in enumerate(records):
            if record.num_classes != k:
                raise InvariantViolation(
                    f"expected {k} classes, got {record.num_classes}", record.id or str(index)
                )
        probs = np.array([r.probs for r in records], dtype=np.float64).reshape(len(records), k)
        has_ids = any(r.id is not None for r in records)
        return cls(
            probs=probs,
            labels=np.array([r.label for r in records], dtype=np.int64),
            membership=np.array([r.membership.code for r in records], dtype=np.int8),
            ids=tuple(r.id if r.id is not None else str(i) for i, r in enumerate(records)) if has_ids else None,
            tolerance=tolerance,
        )

    # --- Basic accessors ---
    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])

    def __len__(self) -> int:
        return int(self.probs.shape[0])

    def __iter__(self) -> Iterator[PredictionRecord]:
        for index in range(len(self)):
            yield self.record(index)

    def record(self, index: int) -> PredictionRecord:
        return PredictionRecord.model_validate(
            {
                "probs": tuple(float(p) for p in self.probs[index]),
                "label": int(self.labels[index]),
                "membership": Membership.from_code(self.membership[index]),
                "id": self.ids[index] if self.ids is not None else None,
            },
            context={"tolerance": self.tolerance},
        )

    def row_id(self, index: int) -> str:
        return self.ids[index] if self.ids is not None else str(index)

    def row_ids(self) -> List[str]:
        return list(self.ids) if self.ids is not None else [str(i) for i in range(len(self))]

    # --- Membership views ---
    @property
    def is_member(self) -> np.ndarray:
        return self.membership == MEMBER_CODE

    @property
    def is_nonmember(self) -> np.ndarray:
        return self.membership == NONMEMBER_CODE

    @property
    def n_member(self) -> int:
        return int(self.is_member.sum())

    @property
    def n_nonmember(self) -> int:
        return int(self.is_nonmember.sum())

    @property
    def has_unknown(self) -> bool:
        return bool((self.membership == UNKNOWN_CODE).any())

    def subset(self, mask: np.ndarray) -> "PredictionSet":
        mask = np.asarray(mask, dtype=bool)
        ids = tuple(np.asarray(self.ids, dtype=object)[mask]) if self.ids is not None else None
        return PredictionSet(
            probs=self.probs[mask],
            labels=self.labels[mask],
            membership=self.membership[mask],
            ids=ids,
            tolerance=self.tolerance,
        )

    def members(self) -> "PredictionSet":
        return self.subset(self.is_member)

    def nonmembers(self) -> "PredictionSet":
        return self.subset(self.is_nonmember)

    def class_counts(self) -> Dict[int, int]:
        classes, counts = np.unique(self.labels, return_counts=True)
        return {int(c): int(n) for c, n in zip(classes, counts)}


# --- Vectorized metrics ---
def correctness_array(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class index.
    return np.argmax(probs, axis=1) == labels


def confidence_array(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return probs[np.arange(probs.shape[0]), labels]


def entropy_array(probs: np.ndarray) -> np.ndarray:
    clamped = np.clip(probs, EPSILON, 1.0)
    return -np.sum(clamped * np.log(clamped), axis=1)


def modified_entropy_array(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Label-aware uncertainty: zero for a confident correct prediction and large
    (but finite, because of clamping) for a confident wrong one.
    """
    rows = np.arange(probs.shape[0])
    clamped = np.clip(probs, EPSILON, 1.0)
    terms = -clamped * np.log(np.clip(1.0 - clamped, EPSILON, 1.0))
    true_probs = clamped[rows, labels]
    terms[rows, labels] = -(1.0 - true_probs) * np.log(true_probs)
    return np.sum(terms, axis=1)


def metric_values(predictions: PredictionSet, kind: MetricKind) -> np.ndarray:
    """Thresholded metric values for every record of a set."""
    if kind is MetricKind.CONFIDENCE:
        return confidence_array(predictions.probs, predictions.labels)
    if kind is MetricKind.ENTROPY:
        return entropy_array(predictions.probs)
    if kind is MetricKind.MODIFIED_ENTROPY:
        return modified_entropy_array(predictions.probs, predictions.labels)
    raise UnsupportedMetric(f"{kind.value} is boolean and has no metric value; use correctness()")


# --- Single-record metrics ---
def _as_arrays(record: PredictionRecord) -> Tuple[np.ndarray, np.ndarray]:
    return np.asarray([record.probs], dtype=np.float64), np.asarray([record.label], dtype=np.int64)


def correctness(record: PredictionRecord) -> bool:
    probs, labels = _as_arrays(record)
    return bool(correctness_array(probs, labels)[0])


def confidence(record: PredictionRecord) -> float:
    return float(record.probs[record.label])


def entropy(record: PredictionRecord) -> float:
    probs, _ = _as_arrays(record)
    return float(entropy_array(probs)[0])


def modified_entropy(record: PredictionRecord) -> float:
    probs, labels = _as_arrays(record)
    return float(modified_entropy_array(probs, labels)[0])


def metric_value(record: PredictionRecord, kind: MetricKind) -> float:
    if kind is MetricKind.CONFIDENCE:
        return confidence(record)
    if kind is MetricKind.ENTROPY:
        return entropy(record)
    if kind is MetricKind.MODIFIED_ENTROPY:
        return modified_entropy(record)
    raise UnsupportedMetric(f"{kind.value} is boolean and has no metric value; use correctness()")


def model_accuracy(predictions: PredictionSet) -> Tuple[Optional[float], Optional[float]]:
    """
    Train and test accuracy of the model that produced the predictions,
    i.e. the fraction of correctly predicted members and non-members.
    """
    correct = correctness_array(predictions.probs, predictions.labels)
    train = float(correct[predictions.is_member].mean()) if predictions.n_member else None
    test = float(correct[predictions.is_nonmember].mean()) if predictions.n_nonmember else None
    logging.debug(f"Model accuracy on {len(predictions)} records: train={train}, test={test}")
    return train, test
