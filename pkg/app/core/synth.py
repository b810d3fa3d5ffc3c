"""
Synthetic prediction sets and brute-force oracles for testing.

Prediction vectors are drawn from a Dirichlet whose true-label coordinate
gets an extra concentration ("boost"); members get a larger boost than
non-members, so their predictions are more confident and more often correct.

Random streams: the generator splits `SeedSequence(seed)` into one child
stream per block of BLOCK_SIZE records (records are laid out members first,
then non-members). Each block only reads its own stream, so blocks can be
generated in any order or in parallel with identical results.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.core.errors import UsageError
from app.core.metrics import MEMBER_CODE, NONMEMBER_CODE, Direction, PredictionSet

BLOCK_SIZE = 4096


class GeneratorSpec(BaseModel):
    num_classes: int = Field(10, ge=2)
    n_member: int = Field(1000, ge=0)
    n_nonmember: int = Field(1000, ge=0)
    member_boost: float = Field(50.0, gt=0.0)
    nonmember_boost: float = Field(1.0, gt=0.0)
    base_concentration: float = Field(1.0, gt=0.0)
    # Per-class multiplier applied to the boost; None means 1 for every class.
    heterogeneity: Optional[List[float]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "GeneratorSpec":
        if self.member_boost < self.nonmember_boost:
            raise ValueError("member_boost must be at least nonmember_boost")
        if self.heterogeneity is not None:
            if len(self.heterogeneity) != self.num_classes:
                raise ValueError(
                    f"heterogeneity needs {self.num_classes} multipliers, got {len(self.heterogeneity)}"
                )
            if any(m <= 0 for m in self.heterogeneity):
                raise ValueError("heterogeneity multipliers must be positive")
        if self.n_member + self.n_nonmember == 0:
            raise ValueError("generator needs at least one record")
        return self

    @property
    def multipliers(self) -> np.ndarray:
        if self.heterogeneity is None:
            return np.ones(self.num_classes)
        return np.asarray(self.heterogeneity, dtype=np.float64)


def _generate_block(spec: GeneratorSpec, seed: np.random.SeedSequence, start: int, stop: int):
    rng = np.random.default_rng(seed)
    size = stop - start
    rows = np.arange(size)
    is_member = np.arange(start, stop) < spec.n_member
    labels = rng.integers(0, spec.num_classes, size=size)

    boost = np.where(is_member, spec.member_boost, spec.nonmember_boost) * spec.multipliers[labels]
    alpha = np.full((size, spec.num_classes), spec.base_concentration)
    alpha[rows, labels] += boost
    # Dirichlet draws as normalized Gamma variates, one concentration vector per row.
    gammas = rng.standard_gamma(alpha)
    totals = gammas.sum(axis=1)
    underflow = totals <= 0.0
    if underflow.any():
        gammas[underflow] = 0.0
        gammas[underflow, labels[underflow]] = 1.0
        totals[underflow] = 1.0
    probs = gammas / totals[:, None]
    membership = np.where(is_member, MEMBER_CODE, NONMEMBER_CODE)
    return probs, labels, membership


def generate(spec: GeneratorSpec, workers: int = 1) -> PredictionSet:
    """Deterministic synthetic prediction set: same GeneratorSpec (seed included), same records."""
    total = spec.n_member + spec.n_nonmember
    n_blocks = math.ceil(total / BLOCK_SIZE)
    children = np.random.SeedSequence(spec.seed).spawn(n_blocks)
    jobs = [
        (children[index], index * BLOCK_SIZE, min((index + 1) * BLOCK_SIZE, total))
        for index in range(n_blocks)
    ]

    def _run(job):
        return _generate_block(spec, *job)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_run, jobs))
    else:
        blocks = [_run(job) for job in jobs]

    return PredictionSet(
        probs=np.concatenate([block[0] for block in blocks]),
        labels=np.concatenate([block[1] for block in blocks]),
        membership=np.concatenate([block[2] for block in blocks]),
    )


# --- Oracles ---
def oracle_best_threshold(
    values: Sequence[float], is_member: Sequence[bool], direction: Direction, balanced: bool = False
) -> Tuple[float, float]:
    """
    Brute-force threshold search: tries every candidate cut (sentinels and
    midpoints between distinct values) and counts decisions one by one.
    Same tie-break as the learner: the smallest best threshold wins.
    """
    values = [float(v) for v in values]
    tags = [bool(t) for t in is_member]
    n_member = sum(tags)
    n_nonmember = len(tags) - n_member
    if not values or n_member == 0 or n_nonmember == 0:
        raise UsageError("oracle needs a non-empty sample with both members and non-members")

    distinct = sorted(set(values))
    candidates = [-math.inf] + [(a + b) / 2.0 for a, b in zip(distinct, distinct[1:])] + [math.inf]

    best_threshold, best_counts, best_score = None, None, None
    for threshold in candidates:
        true_pos = true_neg = 0
        for value, member in zip(values, tags):
            says_member = value >= threshold if direction is Direction.AT_LEAST else value <= threshold
            if member and says_member:
                true_pos += 1
            elif not member and not says_member:
                true_neg += 1
        score = true_pos * n_nonmember + true_neg * n_member if balanced else true_pos + true_neg
        if best_score is None or score > best_score:
            best_threshold, best_counts, best_score = threshold, (true_pos, true_neg), score

    true_pos, true_neg = best_counts
    if balanced:
        accuracy = 0.5 * (true_pos / n_member + true_neg / n_nonmember)
    else:
        accuracy = (true_pos + true_neg) / (n_member + n_nonmember)
    return best_threshold, accuracy


def oracle_exact_risk(
    member_counts: Sequence[int],
    nonmember_counts: Sequence[int],
    bin_index: int,
    p_train: float,
    pseudo_count: float = 0.0,
    pooled_member_counts: Optional[Sequence[int]] = None,
    pooled_nonmember_counts: Optional[Sequence[int]] = None,
) -> float:
    """
    Exact rational Bayes posterior of membership for a record falling in `bin_index`.

    Without pooled counts every bin gets `pseudo_count` extra observations.
    With them, the pseudo_count * bins extra observations follow the
    uniformly smoothed pooled histogram of the same side.
    """
    if len(member_counts) != len(nonmember_counts):
        raise UsageError("member and non-member histograms need the same number of bins")
    if (pooled_member_counts is None) != (pooled_nonmember_counts is None):
        raise UsageError("pooled counts are needed for both sides or neither")
    bins = len(member_counts)
    smoothing = Fraction(pseudo_count)

    def density(counts, pooled):
        if pooled is None:
            pseudo = smoothing
        else:
            shape = (Fraction(pooled[bin_index]) + smoothing) / (sum(pooled) + smoothing * bins)
            pseudo = smoothing * bins * shape
        return (Fraction(counts[bin_index]) + pseudo) / (sum(counts) + smoothing * bins)

    d_tr = density(member_counts, pooled_member_counts)
    d_te = density(nonmember_counts, pooled_nonmember_counts)
    prior = Fraction(p_train)
    numerator = prior * d_tr
    denominator = numerator + (1 - prior) * d_te
    if denominator == 0:
        return p_train
    return float(numerator / denominator)
