"""Language-model retrieval and feedback-driven query updating.

Scoring is query likelihood with Jelinek-Mercer interpolation against the
collection model.  Feedback folds user evidence back into the query model:
relevant-document evidence runs a two-component mixture EM to pull the
document's distinctive terms out from under the collection background, term
evidence is an additive boost (or removal), and topic evidence interpolates
the query with the chosen topic distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .corpus import Corpus, Document

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class QueryModel:
    """Distribution over terms, plus the original query it was grown from."""

    weights: dict[str, float]
    origin: dict[str, float]

    @classmethod
    def from_terms(cls, terms: dict[str, float]) -> "QueryModel":
        weights = _normalized(terms)
        return cls(weights=weights, origin=dict(weights))

    def vector(self, corpus: Corpus) -> np.ndarray:
        """Project onto the corpus vocabulary; out-of-vocabulary mass is dropped."""
        return _project(self.weights, corpus)


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(doc_id for doc_id, _ in self.entries)

    def scores(self) -> np.ndarray:
        return np.array([score for _, score in self.entries])

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RelevantDoc:
    doc_id: str


@dataclass(frozen=True)
class KeyTermAnswer:
    term: str
    yes: bool


@dataclass(frozen=True)
class RequestTerm:
    term: str


@dataclass(frozen=True)
class TopicChoice:
    topic_id: str


FeedbackEvidence = Union[RelevantDoc, KeyTermAnswer, RequestTerm, TopicChoice]


@dataclass(frozen=True)
class FeedbackParams:
    smoothing: float = 0.5        # Jelinek-Mercer collection weight
    em_background: float = 0.5    # mixture weight of the collection model in EM
    alpha: float = 0.5            # document-feedback interpolation vs. q.origin
    beta: float = 0.3             # additive boost for term evidence
    alpha_topic: float = 0.3      # topic-distribution interpolation
    em_max_iters: int = 30
    em_tol: float = 1e-6


def _normalized(weights: dict[str, float]) -> dict[str, float]:
    total = sum(weights.values())
    if total <= 0:
        raise ValueError("query model has no positive mass")
    return {t: w / total for t, w in sorted(weights.items()) if w > 0}


def _project(weights: dict[str, float], corpus: Corpus) -> np.ndarray:
    vec = np.zeros(len(corpus.vocabulary))
    for term, w in weights.items():
        j = corpus.term_index.get(term)
        if j is not None:
            vec[j] = w
    return vec


def _log_mixture(corpus: Corpus, smoothing: float) -> np.ndarray:
    """log((1-s)·P_ml(t|d) + s·P_c(t)), cached per corpus and smoothing."""
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing must lie strictly inside (0, 1)")
    cached = corpus.score_cache.get(smoothing)
    if cached is None:
        cached = np.log((1.0 - smoothing) * corpus.p_ml
                        + smoothing * corpus.collection_vector[None, :])
        corpus.score_cache[smoothing] = cached
    return cached


def score_all(q: QueryModel, corpus: Corpus, smoothing: float) -> np.ndarray:
    return _log_mixture(corpus, smoothing) @ q.vector(corpus)


def score_document(q: QueryModel, d: Document | str, corpus: Corpus, smoothing: float) -> float:
    doc_id = d.id if isinstance(d, Document) else d
    row = corpus.doc_index[doc_id]
    return float(_log_mixture(corpus, smoothing)[row] @ q.vector(corpus))


def retrieve(q: QueryModel, corpus: Corpus, depth: int | None = None,
             smoothing: float = 0.5) -> RankedList:
    """Top-``depth`` documents by score; ties broken by ascending doc id."""
    if depth is not None and depth < 1:
        raise ValueError("depth must be >= 1")
    scores = score_all(q, corpus, smoothing)
    ids = np.array(corpus.doc_ids)
    order = np.lexsort((ids, -scores))
    if depth is not None:
        order = order[:depth]
    return RankedList(entries=tuple((corpus.doc_ids[i], float(scores[i])) for i in order))


def em_feedback_model(counts: np.ndarray, background: np.ndarray, em_background: float,
                      max_iters: int = 30, tol: float = 1e-6) -> tuple[np.ndarray, list[float]]:
    """Estimate the feedback term distribution of one document by EM.

    The document's counts are modeled as draws from
    (1-mu)·theta + mu·background; EM maximizes the count log-likelihood over
    theta.  Returns (theta, per-iteration log-likelihood history).  The
    history is checked to be non-decreasing (classic EM guarantee).
    """
    mu = em_background
    support = counts > 0
    c = counts[support]
    bg = background[support]
    theta = np.zeros_like(counts)
    theta_s = c / c.sum()

    def loglik(theta_s: np.ndarray) -> float:
        return float(c @ np.log((1.0 - mu) * theta_s + mu * bg))

    history = [loglik(theta_s)]
    for _ in range(max_iters):
        signal = (1.0 - mu) * theta_s
        w = signal / (signal + mu * bg)
        mass = c * w
        theta_s = mass / mass.sum()
        ll = loglik(theta_s)
        # EM must not decrease the likelihood (tolerance covers float noise)
        assert ll >= history[-1] - 1e-9 * max(1.0, abs(history[-1])), "EM log-likelihood decreased"
        converged = ll - history[-1] < tol
        history.append(ll)
        if converged:
            break
    theta[support] = theta_s
    return theta, history


def apply_feedback(q: QueryModel, evidence: FeedbackEvidence, corpus: Corpus,
                   params: FeedbackParams) -> QueryModel:
    """Fold one piece of user evidence into the query model.

    Evidence terms outside the vocabulary are a no-op (the query is returned
    unchanged) so free-text responses never abort an episode.  The returned
    model always sums to 1 and keeps ``origin`` intact.
    """
    if isinstance(evidence, RelevantDoc):
        row = corpus.doc_index.get(evidence.doc_id)
        if row is None:
            raise ValueError(f"feedback names unknown document {evidence.doc_id!r}")
        theta, _ = em_feedback_model(corpus.count_matrix[row], corpus.collection_vector,
                                     params.em_background, params.em_max_iters, params.em_tol)
        origin_vec = _project(q.origin, corpus)
        origin_total = origin_vec.sum()
        if origin_total > 0:
            origin_vec = origin_vec / origin_total
        mixed = (1.0 - params.alpha) * origin_vec + params.alpha * theta
        weights = {corpus.vocabulary[j]: float(v) for j, v in enumerate(mixed) if v > 0}
        return QueryModel(weights=_normalized(weights), origin=q.origin)

    if isinstance(evidence, RequestTerm) or (isinstance(evidence, KeyTermAnswer) and evidence.yes):
        term = evidence.term
        if term not in corpus.term_index:
            return q
        weights = dict(q.weights)
        weights[term] = weights.get(term, 0.0) + params.beta
        return QueryModel(weights=_normalized(weights), origin=q.origin)

    if isinstance(evidence, KeyTermAnswer):  # the "no" branch
        term = evidence.term
        if q.weights.get(term, 0.0) <= 0.0:
            return q
        weights = {t: w for t, w in q.weights.items() if t != term}
        if sum(weights.values()) <= 0:
            return q  # degenerate one-term query: removal would empty the model
        return QueryModel(weights=_normalized(weights), origin=q.origin)

    if isinstance(evidence, TopicChoice):
        topic = corpus.topic_catalog.get(evidence.topic_id)
        if topic is None:
            raise ValueError(f"feedback names unknown topic {evidence.topic_id!r}")
        weights = {t: (1.0 - params.alpha_topic) * w for t, w in q.weights.items()}
        for t, w in topic.terms.items():
            weights[t] = weights.get(t, 0.0) + params.alpha_topic * w
        return QueryModel(weights=_normalized(weights), origin=q.origin)

    raise TypeError(f"unknown evidence type {type(evidence).__name__}")
