"""The system-side dialogue agent: four feedback actions, their realization
as prompts, and the per-turn reward (action cost plus scaled MAP change)."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np

from .corpus import Corpus, QueryRecord, idf
from .dqn import QLearner
from .retrieval import RankedList


class SystemAction(IntEnum):
    RETURN_DOCUMENTS = 0
    RETURN_KEYTERM = 1
    RETURN_REQUEST = 2
    RETURN_TOPIC = 3


UTTERANCES = {
    SystemAction.RETURN_DOCUMENTS: "Please view the list and select one item relevant to your need.",
    SystemAction.RETURN_REQUEST: "Please provide more information.",
    SystemAction.RETURN_TOPIC: "Which topic is related?",
}


@dataclass(frozen=True)
class ActionCost:
    costs: dict[SystemAction, float]

    def __post_init__(self):
        for action in SystemAction:
            if action not in self.costs:
                raise ValueError(f"missing cost for {action.name}")
            if self.costs[action] > 0:
                raise ValueError(f"cost for {action.name} must be <= 0")

    @classmethod
    def uniform(cls, cost: float = -1.0) -> "ActionCost":
        return cls(costs={action: cost for action in SystemAction})

    def of(self, action: SystemAction) -> float:
        return self.costs[action]


# payload: top-of-ranking page | key term | topic shortlist | None
PromptPayload = Union[tuple[tuple[str, float], ...], str, tuple[str, ...], None]


@dataclass(frozen=True)
class SystemPrompt:
    action: SystemAction
    payload: PromptPayload
    utterance: str


@dataclass
class EpisodeContext:
    """Per-episode state the realization step needs."""

    query: QueryRecord
    ranked: RankedList
    asked_key_terms: set[str] = field(default_factory=set)
    page_size: int = 10


def select_action(state_vector: np.ndarray, learner: QLearner, epsilon: float,
                  rng: np.random.Generator) -> SystemAction:
    return SystemAction(learner.act(state_vector, epsilon, rng))


def _pick_key_term(context: EpisodeContext, corpus: Corpus) -> Optional[str]:
    """Highest idf x pseudo-feedback-tf unasked key term; the tf is the term's
    pooled retrieval count in the current top of the ranking, so the question
    tracks what the engine currently believes."""
    pool_rows = [corpus.doc_index[d] for d in context.ranked.doc_ids()[:context.page_size]]
    best_term, best_score = None, -1.0
    for term in corpus.key_terms:
        if term in context.asked_key_terms:
            continue
        j = corpus.term_index.get(term)
        if j is None:
            continue
        tf = float(corpus.count_matrix[pool_rows, j].sum()) if pool_rows else 0.0
        score = tf * idf(corpus, term)
        if score > best_score:
            best_term, best_score = term, score
    return best_term


def realize_action(action: SystemAction, context: EpisodeContext, corpus: Corpus) -> SystemPrompt:
    """Turn a chosen action into the concrete prompt shown to the user.

    Falls back to a plain request when the action cannot be realized (key
    terms exhausted, no topic ranking on record) so an episode never stalls.
    """
    if action == SystemAction.RETURN_KEYTERM:
        term = _pick_key_term(context, corpus)
        if term is None:
            return realize_action(SystemAction.RETURN_REQUEST, context, corpus)
        return SystemPrompt(action=action, payload=term, utterance=f"Is it related to {term}?")
    if action == SystemAction.RETURN_TOPIC:
        shortlist = tuple(context.query.topic_ranking[:4])
        if not shortlist:
            return realize_action(SystemAction.RETURN_REQUEST, context, corpus)
        return SystemPrompt(action=action, payload=shortlist, utterance=UTTERANCES[action])
    if action == SystemAction.RETURN_DOCUMENTS:
        page = tuple(context.ranked.entries[: context.page_size])
        return SystemPrompt(action=action, payload=page, utterance=UTTERANCES[action])
    return SystemPrompt(action=SystemAction.RETURN_REQUEST, payload=None,
                        utterance=UTTERANCES[SystemAction.RETURN_REQUEST])


def turn_reward(action: SystemAction, map_before: float, map_after: float,
                costs: ActionCost, lam: float) -> float:
    """Tailored negative action cost plus lambda-weighted MAP improvement."""
    if not (0.0 <= map_before <= 1.0 and 0.0 <= map_after <= 1.0):
        raise ValueError("MAP values must lie in [0, 1]")
    return costs.of(action) + lam * (map_after - map_before)
