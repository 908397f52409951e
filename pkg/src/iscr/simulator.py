"""The user side of the dialogue: four trainable decision makers over the
binary top-K relevance state, the deterministic rule baseline, termination,
and terminal rewards.

The simulator knows the true relevant set but can only help by answering the
system's prompts: picking a relevant document by rank, confirming or denying
a key term (truthfully with a learnable probability), providing a term from
its importance ranking, or picking a topic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from .corpus import Corpus, QueryRecord, idf
from .dqn import QLearner
from .features import SimulatorState
from .manager import SystemAction, SystemPrompt
from .retrieval import RankedList

KEYTERM_PROBS = (1.0, 0.95, 0.90, 0.85)


@dataclass(frozen=True)
class PickDocument:
    doc_id: str


@dataclass(frozen=True)
class YesNo:
    yes: bool


@dataclass(frozen=True)
class ProvideTerm:
    term: str


@dataclass(frozen=True)
class PickTopic:
    topic_id: str


@dataclass(frozen=True)
class Terminate:
    success: bool


UserResponse = Union[PickDocument, YesNo, ProvideTerm, PickTopic, Terminate]


class Outcome(str, Enum):
    CONTINUE = "continue"
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class TerminationPolicy:
    map_threshold: float = 0.6
    max_turns: int = 4
    success_reward: float = 30.0
    failure_reward: float = -30.0

    def __post_init__(self):
        if not 0.0 < self.map_threshold <= 1.0:
            raise ValueError("map_threshold must lie in (0, 1]")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.success_reward <= 0 or self.failure_reward >= 0:
            raise ValueError("rewards must be positive (success) / negative (failure)")


def term_score(term: str, relevant: frozenset[str] | set[str], corpus: Corpus) -> float:
    """Sum over relevant docs of manual term count times ln(1 + idf)."""
    j = corpus.term_index.get(term)
    if j is None:
        return 0.0
    rows = [corpus.doc_index[d] for d in sorted(relevant)]
    count = float(corpus.manual_matrix[rows, j].sum())
    return count * math.log(1.0 + idf(corpus, term))


def term_ranking(relevant: frozenset[str] | set[str], corpus: Corpus) -> list[str]:
    """All vocabulary terms by descending score, ties by ascending term."""
    rows = [corpus.doc_index[d] for d in sorted(relevant)]
    counts = corpus.manual_matrix[rows].sum(axis=0)
    n_docs = len(corpus.documents)
    idf_vec = np.log(n_docs / np.array([corpus.df[t] for t in corpus.vocabulary]))
    scores = counts * np.log1p(idf_vec)
    order = np.lexsort((np.array(corpus.vocabulary), -scores))
    return [corpus.vocabulary[i] for i in order]


def keyterm_membership(term: str, relevant: frozenset[str] | set[str], corpus: Corpus) -> float:
    """Fraction of relevant documents whose manual transcription contains the term."""
    j = corpus.term_index.get(term)
    if j is None:
        return 0.0
    rows = [corpus.doc_index[d] for d in sorted(relevant)]
    return float((corpus.manual_matrix[rows, j] > 0).mean())


class DecisionMakerBank:
    """One Q-learner per system action, each with a 4-way output head."""

    def __init__(self, learners: dict[SystemAction, QLearner]):
        if set(learners) != set(SystemAction):
            raise ValueError("bank needs exactly one decision maker per system action")
        widths = {l.arch.input_dim for l in learners.values()}
        heads = {l.arch.n_actions for l in learners.values()}
        if len(widths) != 1 or heads != {4}:
            raise ValueError("decision makers must share input width and have 4-way heads")
        self.learners = learners

    @classmethod
    def create(cls, k: int, variant: str, hidden_dims: tuple[int, ...],
               gamma: float, learning_rate: float, sync_period: int,
               rng: np.random.Generator) -> "DecisionMakerBank":
        learners = {
            action: QLearner(input_dim=k, n_actions=4, variant=variant,
                             hidden_dims=hidden_dims, gamma=gamma,
                             learning_rate=learning_rate, sync_period=sync_period, rng=rng)
            for action in SystemAction
        }
        return cls(learners)

    def __getitem__(self, action: SystemAction) -> QLearner:
        return self.learners[action]


def _relevant_in_ranking(ranked: RankedList, relevant: frozenset[str]) -> list[str]:
    return [doc_id for doc_id in ranked.doc_ids() if doc_id in relevant]


def _candidate_terms(relevant: frozenset[str], corpus: Corpus,
                     given_terms: set[str]) -> list[str]:
    fresh = [t for t in term_ranking(relevant, corpus) if t not in given_terms]
    if fresh:
        return fresh[:4]
    # every term already given: fall back to the unfiltered ranking
    return term_ranking(relevant, corpus)[:4]


def _resolve_choice(prompt: SystemPrompt, choice: int, ranked: RankedList,
                    query: QueryRecord, corpus: Corpus, given_terms: set[str],
                    rng: np.random.Generator, truth_probability: float) -> UserResponse:
    """Map a decision-maker index to a typed response, with graceful fallbacks
    when fewer than four candidates exist."""
    if prompt.action == SystemAction.RETURN_DOCUMENTS:
        candidates = _relevant_in_ranking(ranked, query.relevant_docs)[:4]
        if not candidates:
            # nothing relevant retrieved: help through the request pathway instead
            terms = _candidate_terms(query.relevant_docs, corpus, given_terms)
            return ProvideTerm(terms[choice] if choice < len(terms) else terms[0])
        return PickDocument(candidates[choice] if choice < len(candidates) else candidates[0])
    if prompt.action == SystemAction.RETURN_REQUEST:
        terms = _candidate_terms(query.relevant_docs, corpus, given_terms)
        return ProvideTerm(terms[choice] if choice < len(terms) else terms[0])
    if prompt.action == SystemAction.RETURN_TOPIC:
        shortlist = prompt.payload or tuple(query.topic_ranking[:4])
        return PickTopic(shortlist[choice] if choice < len(shortlist) else shortlist[0])
    if prompt.action == SystemAction.RETURN_KEYTERM:
        truthful = keyterm_membership(prompt.payload, query.relevant_docs, corpus) > 0.5
        answer = truthful if rng.random() < truth_probability else not truthful
        return YesNo(answer)
    raise ValueError(f"unrealizable prompt action {prompt.action!r}")


def respond(action: SystemAction, prompt: SystemPrompt, state: SimulatorState,
            bank: DecisionMakerBank, query: QueryRecord, corpus: Corpus,
            epsilon: float, rng: np.random.Generator,
            given_terms: Optional[set[str]] = None,
            ranked: Optional[RankedList] = None) -> tuple[UserResponse, int]:
    """Trainable response: the prompt's decision maker picks an index in 0..3.

    Returns the response together with the chosen index (the bank's training
    signal).  ``ranked`` is the full current ranking; ``given_terms`` are the
    terms already sent this episode.
    """
    if prompt.action != action:
        raise ValueError("prompt does not match the announced action")
    learner = bank[prompt.action]
    choice = learner.act(state.vector(), epsilon, rng)
    truth_probability = KEYTERM_PROBS[choice]
    response = _resolve_choice(prompt, choice, ranked or RankedList(entries=()),
                               query, corpus, given_terms or set(), rng, truth_probability)
    return response, choice


def rule_based_respond(action: SystemAction, prompt: SystemPrompt, query: QueryRecord,
                       corpus: Corpus, ranked: RankedList,
                       given_terms: Optional[set[str]] = None) -> UserResponse:
    """Deterministic rank-1 baseline: first relevant document, best term, top
    topic, truthful key-term answer with probability 1.  Zero entropy by
    construction."""
    class _NeverRandom:
        def random(self) -> float:
            return 0.0
    return _resolve_choice(prompt, 0, ranked, query, corpus, given_terms or set(),
                           _NeverRandom(), truth_probability=1.0)


def check_termination(current_map: float, turn: int, policy: TerminationPolicy) -> Outcome:
    """Termination check with ``turn`` the 1-based index of the upcoming turn.

    Success (threshold reached) takes precedence over giving up; episodes run
    at most ``max_turns`` turns because the check after turn t is made with
    turn = t + 1.
    """
    if turn < 0:
        raise ValueError("turn must be >= 0")
    if current_map >= policy.map_threshold:
        return Outcome.SUCCESS
    if turn > policy.max_turns:
        return Outcome.FAILURE
    return Outcome.CONTINUE


def simulator_reward(outcome: Outcome, policy: TerminationPolicy) -> float:
    """Terminal-only credit, no per-action cost on the user side."""
    if outcome == Outcome.SUCCESS:
        return policy.success_reward
    if outcome == Outcome.FAILURE:
        return policy.failure_reward
    return 0.0
