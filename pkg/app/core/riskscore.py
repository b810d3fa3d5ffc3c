"""
Privacy risk scores.

A sample's risk score is the posterior probability that it was a training
member, given its modified prediction entropy and its class:

    r = p_train * d_tr / (p_train * d_tr + p_test * d_te)

where d_tr and d_te are the member and non-member densities of the metric
value, estimated per class with smoothed equal-width histograms fitted on
shadow data.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.errors import (
    DegenerateBins,
    EmptyShadow,
    NoMembers,
    UnknownMembership,
    UnsupportedMetric,
    UsageError,
)
from app.core.metrics import (
    MEMBER_CODE,
    NONMEMBER_CODE,
    Membership,
    MetricKind,
    PredictionRecord,
    PredictionSet,
    metric_values,
)

DEFAULT_BINS = 20
DEFAULT_PSEUDO_COUNT = 1.0
DEFAULT_MIN_CLASS_SUPPORT = 5
DEFAULT_CLAMP_QUANTILE = 99.5
DEFAULT_CALIBRATION_BINS = 20

# Where a class histogram puts its pseudo-counts: spread evenly over the bins,
# or in proportion to the pooled histogram of the same side.
UNIFORM_SMOOTHING = "uniform"
POOLED_SMOOTHING = "pooled"
SMOOTHING_MODES = (POOLED_SMOOTHING, UNIFORM_SMOOTHING)


class Priors(BaseModel):
    model_config = ConfigDict(frozen=True)

    p_train: float = Field(0.5, gt=0.0, lt=1.0)

    @property
    def p_test(self) -> float:
        return 1.0 - self.p_train


# --- Class-conditional densities ---
class Histogram(BaseModel):
    counts: List[int]
    densities: List[float]


class ClassHistograms(BaseModel):
    member: Histogram
    nonmember: Histogram


class ClassConditionalModel(BaseModel):
    """
    Member and non-member histograms of a metric, per class plus pooled.

    `edges` holds the lower edge of every bin; bins are [edges[i], edges[i+1])
    and the last bin is the overflow bin [clamp_max, +inf). All classes share
    the same edges. Classes listed in `fallback_classes` (too few shadow
    samples) and classes never seen in the shadow set use `pooled`.
    `smoothing` records how class histograms placed their pseudo-counts.
    """
    metric: MetricKind = MetricKind.MODIFIED_ENTROPY
    edges: List[float]
    clamp_max: float
    pseudo_count: float
    min_class_support: int
    smoothing: str = POOLED_SMOOTHING
    per_class: Dict[int, ClassHistograms]
    pooled: ClassHistograms
    fallback_classes: List[int] = []

    @property
    def bins(self) -> int:
        return len(self.edges)

    def bin_index(self, values: np.ndarray) -> np.ndarray:
        indices = np.searchsorted(np.asarray(self.edges), values, side="right") - 1
        return np.clip(indices, 0, self.bins - 1)

    def histograms_for(self, label: int) -> ClassHistograms:
        return self.per_class.get(int(label), self.pooled)

    def densities(self, labels: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Member and non-member densities of each value under its class histograms."""
        indices = self.bin_index(values)
        member = np.asarray(self.pooled.member.densities)[indices]
        nonmember = np.asarray(self.pooled.nonmember.densities)[indices]
        for label, histograms in self.per_class.items():
            in_class = labels == label
            member[in_class] = np.asarray(histograms.member.densities)[indices[in_class]]
            nonmember[in_class] = np.asarray(histograms.nonmember.densities)[indices[in_class]]
        return member, nonmember


def _histogram(
    indices: np.ndarray, bins: int, pseudo_count: float, prior: Optional[Histogram] = None
) -> Histogram:
    """
    Smoothed bin masses. The pseudo_count * bins pseudo-observations go one per
    bin, or follow the densities of `prior` when one is given.
    """
    counts = np.bincount(indices, minlength=bins)
    if prior is None:
        pseudo = np.full(bins, pseudo_count)
    else:
        pseudo = pseudo_count * bins * np.asarray(prior.densities)
    densities = (counts + pseudo) / (counts.sum() + pseudo_count * bins)
    return Histogram(counts=[int(c) for c in counts], densities=[float(d) for d in densities])


def fit_conditionals(
    shadow: PredictionSet,
    bins: int = DEFAULT_BINS,
    pseudo_count: float = DEFAULT_PSEUDO_COUNT,
    min_class_support: int = DEFAULT_MIN_CLASS_SUPPORT,
    metric: MetricKind = MetricKind.MODIFIED_ENTROPY,
    clamp_quantile: float = DEFAULT_CLAMP_QUANTILE,
    clamp_max: Optional[float] = None,
    smoothing: str = POOLED_SMOOTHING,
) -> ClassConditionalModel:
    """
    Estimate per-class member / non-member densities of `metric` from shadow data.

    Pooled histograms are always smoothed uniformly. With "pooled" smoothing a
    class histogram spreads its pseudo-counts in proportion to the pooled
    histogram of the same side; with "uniform" it adds pseudo_count to every bin.

    Args:
        shadow: shadow predictions with member and non-member tags
        bins: total number of bins, the overflow bin included (>= 2)
        pseudo_count: additive smoothing per bin (0 disables smoothing)
        smoothing: "pooled" or "uniform" placement of the class pseudo-counts
        min_class_support: minimum members and non-members for a class to get its own histograms
        metric: metric whose distribution is modelled
        clamp_quantile: percentile of pooled shadow values where the overflow bin starts
        clamp_max: explicit start of the overflow bin, overriding clamp_quantile

    Returns:
        The fitted ClassConditionalModel.
    """
    if bins < 2:
        raise UsageError(f"bins must be at least 2, got {bins}")
    if pseudo_count < 0:
        raise UsageError(f"pseudo_count must be non-negative, got {pseudo_count}")
    if smoothing not in SMOOTHING_MODES:
        raise UsageError(f"smoothing must be one of {', '.join(SMOOTHING_MODES)}, got '{smoothing}'")
    if not metric.is_thresholded:
        raise UnsupportedMetric(f"{metric.value} has no continuous distribution to model")
    if shadow.n_member == 0 or shadow.n_nonmember == 0:
        raise EmptyShadow(
            f"shadow set needs members and non-members, got {shadow.n_member} and {shadow.n_nonmember}"
        )

    tagged = shadow.is_member | shadow.is_nonmember
    values = metric_values(shadow, metric)[tagged]
    is_member = shadow.is_member[tagged]
    labels = shadow.labels[tagged]
    if np.all(values == values[0]):
        raise DegenerateBins(f"every shadow {metric.value} value equals {values[0]!r}; no bins can be formed")

    if clamp_max is None:
        clamp_max = float(np.percentile(values, clamp_quantile))
        if clamp_max <= 0.0:
            clamp_max = float(values.max())
    if clamp_max <= 0.0:
        raise DegenerateBins(f"overflow edge must be positive, got {clamp_max}")
    edges = np.linspace(0.0, clamp_max, bins)

    indices = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    pooled = ClassHistograms(
        member=_histogram(indices[is_member], bins, pseudo_count),
        nonmember=_histogram(indices[~is_member], bins, pseudo_count),
    )

    member_prior = pooled.member if smoothing == POOLED_SMOOTHING else None
    nonmember_prior = pooled.nonmember if smoothing == POOLED_SMOOTHING else None
    per_class: Dict[int, ClassHistograms] = {}
    fallback_classes: List[int] = []
    for label in np.unique(labels):
        in_class = labels == label
        class_members = in_class & is_member
        class_nonmembers = in_class & ~is_member
        if class_members.sum() < min_class_support or class_nonmembers.sum() < min_class_support:
            fallback_classes.append(int(label))
            continue
        per_class[int(label)] = ClassHistograms(
            member=_histogram(indices[class_members], bins, pseudo_count, member_prior),
            nonmember=_histogram(indices[class_nonmembers], bins, pseudo_count, nonmember_prior),
        )

    if fallback_classes:
        logging.warning(
            f"{len(fallback_classes)} classes below min support {min_class_support} use pooled histograms: "
            f"{fallback_classes}"
        )
    logging.info(
        f"Fitted {metric.value} conditionals: {bins} bins up to {clamp_max:.6g}, "
        f"{len(per_class)} class-specific models"
    )
    return ClassConditionalModel(
        metric=metric,
        edges=[float(e) for e in edges],
        clamp_max=float(clamp_max),
        pseudo_count=float(pseudo_count),
        min_class_support=min_class_support,
        smoothing=smoothing,
        per_class=per_class,
        pooled=pooled,
        fallback_classes=fallback_classes,
    )


# --- Scores ---
def posterior(d_tr, d_te, p_train: float):
    """
    Bayes posterior of membership from the two densities and the training prior.
    Returns p_train where both densities are zero (no evidence either way).
    """
    d_tr = np.asarray(d_tr, dtype=np.float64)
    d_te = np.asarray(d_te, dtype=np.float64)
    numerator = p_train * d_tr
    denominator = numerator + (1.0 - p_train) * d_te
    safe = np.where(denominator > 0.0, denominator, 1.0)
    return np.where(denominator > 0.0, numerator / safe, p_train)


@dataclass(frozen=True, eq=False)
class RiskScoreTable:
    """Per-record risk scores, with the metric value and membership tag they came from."""
    ids: Tuple[str, ...]
    labels: np.ndarray
    values: np.ndarray
    scores: np.ndarray
    membership: np.ndarray
    metric: MetricKind = MetricKind.MODIFIED_ENTROPY
    p_train: float = 0.5

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        for name, dtype in (("labels", np.int64), ("values", np.float64), ("scores", np.float64), ("membership", np.int8)):
            array = np.asarray(getattr(self, name), dtype=dtype)
            if array.shape != (n,):
                raise UsageError(f"risk score column '{name}' has shape {array.shape}, expected ({n},)")
            object.__setattr__(self, name, array)
        if np.any((self.scores < 0.0) | (self.scores > 1.0)):
            raise UsageError("risk scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def is_member(self) -> np.ndarray:
        return np.asarray(self.membership) == MEMBER_CODE

    def member_scores(self) -> np.ndarray:
        scores = np.asarray(self.scores)[self.is_member]
        if not scores.size:
            raise NoMembers("risk score table contains no member records")
        return scores


def score_predictions(
    predictions: PredictionSet, model: ClassConditionalModel, priors: Optional[Priors] = None
) -> RiskScoreTable:
    priors = priors or Priors()
    values = metric_values(predictions, model.metric)
    d_tr, d_te = model.densities(predictions.labels, values)
    scores = posterior(d_tr, d_te, priors.p_train)
    logging.info(f"Scored {len(predictions)} records at p_train={priors.p_train}")
    return RiskScoreTable(
        ids=tuple(predictions.row_ids()),
        labels=np.asarray(predictions.labels),
        values=values,
        scores=scores,
        membership=np.asarray(predictions.membership),
        metric=model.metric,
        p_train=priors.p_train,
    )


def risk_score(record: PredictionRecord, model: ClassConditionalModel, priors: Optional[Priors] = None) -> float:
    predictions = PredictionSet.from_records([record])
    return float(score_predictions(predictions, model, priors).scores[0])


# --- Calibration ---
class CalibrationBin(BaseModel):
    center: float
    mean_score: float
    member_fraction: float
    n_member: int
    n_nonmember: int


class CalibrationCurve(BaseModel):
    bins: int
    rows: List[CalibrationBin]
    rmse: float


def _truth(scores: RiskScoreTable, truth: Optional[Sequence]) -> np.ndarray:
    codes = np.asarray(scores.membership) if truth is None else np.array(
        [tag.code if isinstance(tag, Membership) else int(tag) for tag in truth], dtype=np.int8
    )
    if codes.shape != (len(scores),):
        raise UsageError(f"{codes.size} truth tags for {len(scores)} risk scores")
    if np.any((codes != MEMBER_CODE) & (codes != NONMEMBER_CODE)):
        raise UnknownMembership("calibration and precision/recall need every membership tag")
    return codes == MEMBER_CODE


def calibration_curve(
    scores: RiskScoreTable, truth: Optional[Sequence] = None, bins: int = DEFAULT_CALIBRATION_BINS
) -> CalibrationCurve:
    """
    Compare risk scores against the observed fraction of members, per
    equal-width score bin over [0, 1]. Empty bins are left out of the RMSE.
    """
    if bins < 2:
        raise UsageError(f"calibration needs at least 2 bins, got {bins}")
    is_member = _truth(scores, truth)
    values = np.asarray(scores.scores)
    indices = np.minimum((values * bins).astype(np.int64), bins - 1)

    rows: List[CalibrationBin] = []
    for index in np.unique(indices):
        in_bin = indices == index
        n_member = int(is_member[in_bin].sum())
        n_nonmember = int(in_bin.sum() - n_member)
        rows.append(
            CalibrationBin(
                center=(index + 0.5) / bins,
                mean_score=float(values[in_bin].mean()),
                member_fraction=n_member / (n_member + n_nonmember),
                n_member=n_member,
                n_nonmember=n_nonmember,
            )
        )
    errors = np.array([row.mean_score - row.member_fraction for row in rows])
    rmse = float(np.sqrt(np.mean(errors ** 2))) if rows else 0.0
    logging.info(f"Calibration over {len(rows)} occupied bins of {bins}: RMSE {rmse:.4f}")
    return CalibrationCurve(bins=bins, rows=rows, rmse=rmse)


class PrecisionRecallPoint(BaseModel):
    threshold: float
    precision: Optional[float]
    recall: Optional[float]
    n_predicted: int


def precision_recall_at_thresholds(
    scores: RiskScoreTable, thresholds: Sequence[float], truth: Optional[Sequence] = None
) -> List[PrecisionRecallPoint]:
    """High-confidence attacks: infer 'member' iff the risk score is at least the threshold."""
    is_member = _truth(scores, truth)
    values = np.asarray(scores.scores)
    n_member = int(is_member.sum())
    points = []
    for threshold in thresholds:
        if not 0.0 <= threshold <= 1.0:
            raise UsageError(f"risk threshold {threshold} outside [0, 1]")
        predicted = values >= threshold
        true_pos = int((predicted & is_member).sum())
        n_predicted = int(predicted.sum())
        points.append(
            PrecisionRecallPoint(
                threshold=float(threshold),
                precision=true_pos / n_predicted if n_predicted else None,
                recall=true_pos / n_member if n_member else None,
                n_predicted=n_predicted,
            )
        )
    return points


# --- Member score distribution ---
def empirical_cdf(values: Sequence[float]) -> List[Tuple[float, float]]:
    values = np.asarray(values, dtype=np.float64)
    if not values.size:
        raise NoMembers("empirical CDF of an empty sample")
    distinct, counts = np.unique(values, return_counts=True)
    cumulative = np.cumsum(counts) / values.size
    return [(float(v), float(c)) for v, c in zip(distinct, cumulative)]


def risk_cdf(scores: RiskScoreTable) -> List[Tuple[float, float]]:
    """Empirical CDF of the members' risk scores, one step per distinct score."""
    return empirical_cdf(scores.member_scores())


def risk_histogram(scores: RiskScoreTable, bins: int = DEFAULT_CALIBRATION_BINS) -> List[Tuple[float, float, int]]:
    """Distribution of members' risk scores as (bin lower edge, bin upper edge, count)."""
    counts, edges = np.histogram(scores.member_scores(), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def fraction_above(scores: RiskScoreTable, cutoff: float) -> float:
    """Share of members whose risk score exceeds `cutoff`."""
    return float(np.mean(scores.member_scores() > cutoff))


def prior_leakage_distance(scores: RiskScoreTable, priors: Optional[Priors] = None) -> float:
    """Mean excess of members' risk scores over the training prior."""
    p_train = priors.p_train if priors is not None else scores.p_train
    return float(np.mean(scores.member_scores() - p_train))


def prior_leakage_sweep(
    predictions: PredictionSet, model: ClassConditionalModel, priors: Sequence[float]
) -> Dict[float, float]:
    """Rescore the same records under each training prior and report the leakage distance."""
    distances = {}
    for p_train in priors:
        prior = Priors(p_train=p_train)
        distances[float(p_train)] = prior_leakage_distance(score_predictions(predictions, model, prior), prior)
    return distances
