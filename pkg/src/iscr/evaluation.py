"""Ranking and behavioral metrics: AP/MAP, entropy, KL divergence, action distributions."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .retrieval import RankedList

_SUM_TOL = 1e-9

RANK_LABELS = ("1st", "2nd", "3rd", "4th")


@dataclass(frozen=True)
class ActionDistribution:
    labels: tuple[str, ...]
    probabilities: tuple[float, ...]
    n_samples: int = 0

    def __post_init__(self):
        p = np.asarray(self.probabilities)
        if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError("probabilities must be non-negative and sum to 1")
        if len(self.labels) != len(self.probabilities):
            raise ValueError("labels and probabilities must align")

    @classmethod
    def from_counts(cls, counts: Sequence[int], labels: tuple[str, ...] = RANK_LABELS) -> "ActionDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise ValueError("cannot form a distribution from zero samples")
        return cls(labels=tuple(labels), probabilities=tuple(counts / total), n_samples=int(total))


def average_precision(ranked: RankedList, relevant: set[str] | frozenset[str]) -> float:
    """Standard AP: un-retrieved relevant documents contribute zero.

    AP is a rational number; accumulating exactly and converting to float
    once makes the result independent of summation order.
    """
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    hits = 0
    precision_sum = Fraction(0)
    for rank, (doc_id, _) in enumerate(ranked.entries, start=1):
        if doc_id in relevant:
            hits += 1
            precision_sum += Fraction(hits, rank)
    return float(precision_sum / len(relevant))


def mean_average_precision(per_query: Iterable[tuple[RankedList, set[str]]]) -> float:
    aps = [average_precision(ranked, relevant) for ranked, relevant in per_query]
    if not aps:
        raise ValueError("mean average precision over an empty query set")
    return float(np.mean(aps))


def entropy(p: ActionDistribution) -> float:
    """Natural-log entropy with 0·ln 0 = 0."""
    probs = np.asarray(p.probabilities)
    positive = probs[probs > 0]
    return float(-(positive * np.log(positive)).sum()) + 0.0  # avoid IEEE -0.0


def kl_divergence(p: ActionDistribution, q: ActionDistribution,
                  epsilon_smooth: float = 1e-6) -> float:
    """KL(p||q) after add-epsilon smoothing and renormalization of both sides.

    Smoothing is required because deterministic responders produce zero
    probabilities that would otherwise make the divergence infinite.
    """
    if p.labels != q.labels:
        raise ValueError("distributions have mismatched outcome labels")
    ps = np.asarray(p.probabilities) + epsilon_smooth
    qs = np.asarray(q.probabilities) + epsilon_smooth
    ps /= ps.sum()
    qs /= qs.sum()
    return float((ps * np.log(ps / qs)).sum())


def action_distribution(responder: Callable[[object, np.random.Generator], int],
                        scenarios: Sequence[object],
                        n_samples: int,
                        rng: np.random.Generator,
                        labels: tuple[str, ...] = RANK_LABELS) -> ActionDistribution:
    """Empirical outcome distribution of a responder pooled over scenarios.

    ``responder(scenario, rng)`` must return an outcome index; each scenario
    is sampled ``n_samples`` times.
    """
    if not scenarios or n_samples < 1:
        raise ValueError("need at least one scenario and one sample")
    counts = np.zeros(len(labels), dtype=int)
    for scenario in scenarios:
        for _ in range(n_samples):
            outcome = responder(scenario, rng)
            if not 0 <= outcome < len(labels):
                raise ValueError(f"responder produced out-of-range outcome {outcome}")
            counts[outcome] += 1
    return ActionDistribution.from_counts(counts, labels=labels)
