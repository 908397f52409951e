"""State vectors for the dialogue manager and the user simulator.

The manager sees normalized top-N retrieval scores ("raw" mode) optionally
extended with three hand-crafted retrieval-quality features (clarity,
ambiguity, weighted information gain), plus a scaled turn index.  The
simulator sees the binary relevance pattern of the top-K ranked documents,
known only on its side of the interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .retrieval import QueryModel, RankedList, _log_mixture


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "raw"            # "raw" | "human_raw"
    n_raw: int = 49
    pool_depth: int = 10         # docs pooled for clarity / ambiguity / WIG
    smoothing: float = 0.5
    max_turns: int = 4

    def __post_init__(self):
        if self.mode not in ("raw", "human_raw"):
            raise ValueError(f"unknown feature mode {self.mode!r}")

    @property
    def dimension(self) -> int:
        return self.n_raw + (3 if self.mode == "human_raw" else 0) + 1


@dataclass(frozen=True)
class ManagerState:
    raw: np.ndarray
    human: np.ndarray | None
    turn_index: int

    def vector(self, max_turns: int) -> np.ndarray:
        parts = [self.raw]
        if self.human is not None:
            parts.append(self.human)
        parts.append(np.array([self.turn_index / max_turns]))
        return np.concatenate(parts)


@dataclass(frozen=True)
class SimulatorState:
    relevance_bits: np.ndarray

    def vector(self) -> np.ndarray:
        return self.relevance_bits.astype(float)


def raw_features(ranked: RankedList, n: int) -> np.ndarray:
    """Top-n scores min-max normalized into [0, 1] by the full list's range.

    All-equal score lists (and empty lists) map to zeros; shorter lists are
    zero-padded so the feature width never varies.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = np.zeros(n)
    if len(ranked) == 0:
        return out
    scores = ranked.scores()
    lo, hi = scores.min(), scores.max()
    if hi > lo:
        top = scores[:n]
        out[: len(top)] = (top - lo) / (hi - lo)
    return out


def clarity_score(q: QueryModel, ranked: RankedList, corpus: Corpus,
                  pool_depth: int = 10, smoothing: float = 0.5) -> float:
    """KL of the smoothed top-k pooled document model from the collection model."""
    if len(ranked) == 0:
        raise ValueError("clarity_score needs a non-empty ranked list")
    rows = [corpus.doc_index[doc_id] for doc_id in ranked.doc_ids()[:pool_depth]]
    pooled = corpus.count_matrix[rows].sum(axis=0)
    total = pooled.sum()
    if total <= 0:
        return 0.0
    pool_model = (1.0 - smoothing) * (pooled / total) + smoothing * corpus.collection_vector
    support = pool_model > 0
    return float((pool_model[support]
                  * np.log(pool_model[support] / corpus.collection_vector[support])).sum())


def ambiguity_score(ranked: RankedList, k: int) -> float:
    """Normalized entropy of the softmax over the top-k scores, in [0, 1].

    High values mean the engine cannot separate the top candidates.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    scores = ranked.scores()[:k]
    if scores.size < 2:
        return 0.0
    shifted = scores - scores.max()
    weights = np.exp(shifted)
    p = weights / weights.sum()
    positive = p[p > 0]
    h = float(-(positive * np.log(positive)).sum())
    return h / np.log(scores.size)


def wig_score(q: QueryModel, ranked: RankedList, corpus: Corpus, k: int,
              smoothing: float = 0.5) -> float:
    """Mean top-k retrieval-score gain over the collection-model baseline."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked) == 0:
        raise ValueError("wig_score needs a non-empty ranked list")
    q_vec = q.vector(corpus)
    baseline = float(q_vec @ np.log(corpus.collection_vector))
    rows = [corpus.doc_index[doc_id] for doc_id in ranked.doc_ids()[:k]]
    doc_scores = _log_mixture(corpus, smoothing)[rows] @ q_vec
    return float(np.mean(doc_scores - baseline))


def manager_state(q: QueryModel, ranked: RankedList, corpus: Corpus,
                  turn_index: int, config: FeatureConfig) -> ManagerState:
    raw = raw_features(ranked, config.n_raw)
    human = None
    if config.mode == "human_raw":
        human = np.array([
            clarity_score(q, ranked, corpus, config.pool_depth, config.smoothing),
            ambiguity_score(ranked, max(2, config.pool_depth)),
            wig_score(q, ranked, corpus, config.pool_depth, config.smoothing),
        ])
    return ManagerState(raw=raw, human=human, turn_index=turn_index)


def simulator_state(ranked: RankedList, relevant: set[str] | frozenset[str], k: int) -> SimulatorState:
    """Bit i is 1 iff the i-th ranked document is relevant; short lists pad with 0."""
    bits = np.zeros(k, dtype=np.int8)
    for i, doc_id in enumerate(ranked.doc_ids()[:k]):
        if doc_id in relevant:
            bits[i] = 1
    return SimulatorState(relevance_bits=bits)
