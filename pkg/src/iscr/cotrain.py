"""Episode rollouts, alternating joint training, and cross-validation.

An episode is the dialogue loop: first-pass retrieval, then per turn the
manager picks an action, the user answers, the query model absorbs the
feedback, retrieval reruns, and termination is checked against the MAP
threshold / turn budget.  Joint training alternates C gradient updates on
the manager (simulator frozen) with C updates spread over the simulator's
four decision makers (manager frozen).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Corpus, QueryRecord
from .dqn import Experience, QLearner, ReplayBuffer
from .evaluation import average_precision
from .features import FeatureConfig, manager_state, simulator_state
from .manager import (ActionCost, EpisodeContext, SystemAction, SystemPrompt,
                      realize_action, turn_reward)
from .retrieval import (FeedbackParams, KeyTermAnswer, QueryModel, RankedList,
                        RelevantDoc, RequestTerm, TopicChoice, apply_feedback, retrieve)
from .simulator import (DecisionMakerBank, Outcome, PickDocument, PickTopic,
                        ProvideTerm, Terminate, TerminationPolicy, UserResponse,
                        YesNo, check_termination, respond, rule_based_respond,
                        simulator_reward)


@dataclass(frozen=True)
class EnvParams:
    """Everything an episode needs besides the agents themselves."""

    feature_config: FeatureConfig = FeatureConfig()
    feedback: FeedbackParams = FeedbackParams()
    costs: ActionCost = None
    policy: TerminationPolicy = TerminationPolicy()
    lam: float = 100.0
    k_sim: int = 49
    retrieval_depth: Optional[int] = None
    page_size: int = 10

    def __post_init__(self):
        if self.costs is None:
            object.__setattr__(self, "costs", ActionCost.uniform(-1.0))


class RuleSimulator:
    kind = "rule"
    trainable = False

    def respond(self, prompt: SystemPrompt, sim_state, ranked: RankedList,
                query: QueryRecord, corpus: Corpus, given_terms: set[str],
                epsilon: float, rng: np.random.Generator) -> tuple[UserResponse, Optional[int]]:
        return rule_based_respond(prompt.action, prompt, query, corpus, ranked, given_terms), None


class DqnSimulator:
    kind = "dqn"
    trainable = True

    def __init__(self, bank: DecisionMakerBank):
        self.bank = bank

    def respond(self, prompt: SystemPrompt, sim_state, ranked: RankedList,
                query: QueryRecord, corpus: Corpus, given_terms: set[str],
                epsilon: float, rng: np.random.Generator) -> tuple[UserResponse, Optional[int]]:
        return respond(prompt.action, prompt, sim_state, self.bank, query, corpus,
                       epsilon, rng, given_terms=given_terms, ranked=ranked)


def response_to_evidence(response: UserResponse, prompt: SystemPrompt):
    if isinstance(response, PickDocument):
        return RelevantDoc(response.doc_id)
    if isinstance(response, ProvideTerm):
        return RequestTerm(response.term)
    if isinstance(response, YesNo):
        return KeyTermAnswer(term=prompt.payload, yes=response.yes)
    if isinstance(response, PickTopic):
        return TopicChoice(response.topic_id)
    if isinstance(response, Terminate):
        return None
    raise TypeError(f"unknown response type {type(response).__name__}")


def _response_to_dict(response: UserResponse) -> dict:
    if isinstance(response, PickDocument):
        return {"type": "pick_document", "doc_id": response.doc_id}
    if isinstance(response, ProvideTerm):
        return {"type": "provide_term", "term": response.term}
    if isinstance(response, YesNo):
        return {"type": "yes_no", "yes": response.yes}
    if isinstance(response, PickTopic):
        return {"type": "pick_topic", "topic_id": response.topic_id}
    if isinstance(response, Terminate):
        return {"type": "terminate", "success": response.success}
    raise TypeError(type(response).__name__)


def response_from_dict(payload: dict) -> UserResponse:
    kind = payload.get("type")
    if kind == "pick_document":
        return PickDocument(payload["doc_id"])
    if kind == "provide_term":
        return ProvideTerm(payload["term"])
    if kind == "yes_no":
        return YesNo(bool(payload["yes"]))
    if kind == "pick_topic":
        return PickTopic(payload["topic_id"])
    if kind == "terminate":
        return Terminate(bool(payload.get("success", False)))
    raise ValueError(f"unknown response type {kind!r}")


@dataclass
class TurnRecord:
    turn: int
    manager_state: list[float]
    action: SystemAction
    prompt_action: SystemAction
    prompt_payload: object
    utterance: str
    sim_state: list[int]
    sim_choice: Optional[int]
    top_relevant: list[str]
    response: dict
    map_before: float
    map_after: float
    manager_reward: float
    simulator_reward: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["action"] = self.action.name.lower()
        d["prompt_action"] = self.prompt_action.name.lower()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TurnRecord":
        d = dict(d)
        d["action"] = SystemAction[d["action"].upper()]
        d["prompt_action"] = SystemAction[d["prompt_action"].upper()]
        if isinstance(d.get("prompt_payload"), list):
            payload = d["prompt_payload"]
            d["prompt_payload"] = tuple(tuple(x) if isinstance(x, list) else x for x in payload)
        return cls(**d)


@dataclass
class EpisodeTrace:
    query_id: str
    initial_map: float
    turns: list[TurnRecord]
    outcome: Outcome
    manager_return: float
    simulator_return: float

    def map_sequence(self) -> list[float]:
        return [self.initial_map] + [t.map_after for t in self.turns]

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "initial_map": self.initial_map,
                "turns": [t.to_dict() for t in self.turns], "outcome": self.outcome.value,
                "manager_return": self.manager_return,
                "simulator_return": self.simulator_return}

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeTrace":
        return cls(query_id=d["query_id"], initial_map=d["initial_map"],
                   turns=[TurnRecord.from_dict(t) for t in d["turns"]],
                   outcome=Outcome(d["outcome"]),
                   manager_return=d["manager_return"],
                   simulator_return=d["simulator_return"])


def run_episode(query: QueryRecord, corpus: Corpus, manager: QLearner, simulator,
                env: EnvParams, rng: np.random.Generator,
                manager_epsilon: float = 0.0, simulator_epsilon: float = 0.0
                ) -> tuple[EpisodeTrace, list[Experience], dict[SystemAction, list[Experience]]]:
    """Roll one dialogue; returns the trace plus both sides' experiences."""
    fc = env.feature_config
    q = QueryModel.from_terms(query.terms)
    ranked = retrieve(q, corpus, env.retrieval_depth, env.feedback.smoothing)
    current_map = average_precision(ranked, query.relevant_docs)
    initial_map = current_map

    context = EpisodeContext(query=query, ranked=ranked, page_size=env.page_size)
    given_terms: set[str] = set()
    turns: list[TurnRecord] = []
    manager_exps: list[Experience] = []
    sim_exps: dict[SystemAction, list[Experience]] = {a: [] for a in SystemAction}
    outcome = Outcome.CONTINUE
    turn = 0

    while outcome == Outcome.CONTINUE:
        turn += 1
        m_state = manager_state(q, ranked, corpus, turn - 1, fc).vector(env.policy.max_turns)
        action = SystemAction(manager.act(m_state, manager_epsilon, rng))
        context.ranked = ranked
        prompt = realize_action(action, context, corpus)
        if prompt.action == SystemAction.RETURN_KEYTERM:
            context.asked_key_terms.add(prompt.payload)

        s_state = simulator_state(ranked, query.relevant_docs, env.k_sim)
        top_relevant = [d for d in ranked.doc_ids() if d in query.relevant_docs][:4]
        response, choice = simulator.respond(prompt, s_state, ranked, query, corpus,
                                             given_terms, simulator_epsilon, rng)
        if isinstance(response, ProvideTerm):
            given_terms.add(response.term)

        evidence = response_to_evidence(response, prompt)
        if evidence is not None:
            q = apply_feedback(q, evidence, corpus, env.feedback)
        new_ranked = retrieve(q, corpus, env.retrieval_depth, env.feedback.smoothing)
        new_map = average_precision(new_ranked, query.relevant_docs)

        reward = turn_reward(action, current_map, new_map, env.costs, env.lam)
        outcome = check_termination(new_map, turn + 1, env.policy)
        done = outcome != Outcome.CONTINUE
        sim_r = simulator_reward(outcome, env.policy)

        next_m_state = manager_state(q, new_ranked, corpus, turn, fc).vector(env.policy.max_turns)
        manager_exps.append(Experience(state=m_state, action=int(action), reward=reward,
                                       next_state=next_m_state, done=done))
        next_s_state = simulator_state(new_ranked, query.relevant_docs, env.k_sim)
        if choice is not None:
            sim_exps[prompt.action].append(Experience(state=s_state.vector(), action=choice,
                                                      reward=sim_r,
                                                      next_state=next_s_state.vector(),
                                                      done=done))

        turns.append(TurnRecord(
            turn=turn, manager_state=[float(x) for x in m_state], action=action,
            prompt_action=prompt.action, prompt_payload=prompt.payload,
            utterance=prompt.utterance, sim_state=[int(b) for b in s_state.relevance_bits],
            sim_choice=choice, top_relevant=top_relevant,
            response=_response_to_dict(response),
            map_before=current_map, map_after=new_map,
            manager_reward=reward, simulator_reward=sim_r))

        ranked, current_map = new_ranked, new_map

    trace = EpisodeTrace(query_id=query.id, initial_map=initial_map, turns=turns,
                         outcome=outcome,
                         manager_return=float(sum(t.manager_reward for t in turns)),
                         simulator_return=float(sum(t.simulator_reward for t in turns)))
    return trace, manager_exps, sim_exps


def replay_trace(trace: EpisodeTrace, query: QueryRecord, corpus: Corpus,
                 env: EnvParams) -> list[float]:
    """Re-apply a trace's recorded feedback through retrieval; returns the
    recomputed MAP sequence (initial + one entry per turn)."""
    q = QueryModel.from_terms(query.terms)
    ranked = retrieve(q, corpus, env.retrieval_depth, env.feedback.smoothing)
    maps = [average_precision(ranked, query.relevant_docs)]
    for turn in trace.turns:
        prompt = SystemPrompt(action=turn.prompt_action, payload=turn.prompt_payload,
                              utterance=turn.utterance)
        evidence = response_to_evidence(response_from_dict(turn.response), prompt)
        if evidence is not None:
            q = apply_feedback(q, evidence, corpus, env.feedback)
        ranked = retrieve(q, corpus, env.retrieval_depth, env.feedback.smoothing)
        maps.append(average_precision(ranked, query.relevant_docs))
    return maps


# ---------------------------------------------------------------------------
# Alternating joint training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSchedule:
    c_updates: int = 500
    epochs: int = 20
    episodes_per_update: int = 1
    batch_size: int = 256
    replay_capacity: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.2
    frozen_epsilon: float = 0.05

    def __post_init__(self):
        if self.c_updates < 1:
            raise ValueError("c_updates must be >= 1")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size cannot exceed replay_capacity")


@dataclass
class EpochRow:
    epoch: int
    train_return: float
    valid_return: float
    train_map: float
    valid_map: float
    episodes: int
    manager_loss: float
    simulator_loss: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_return: float = float("-inf")

    COLUMNS = ("epoch", "train_return", "valid_return", "train_map", "valid_map")

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for row in self.rows:
            lines.append("\t".join(repr(getattr(row, c)) if c != "epoch" else str(row.epoch)
                                   for c in self.COLUMNS))
        return "\n".join(lines) + "\n"


class _QueryCycle:
    """Deterministic endless stream over the training queries, reshuffled each pass."""

    def __init__(self, queries: Sequence[QueryRecord], rng: np.random.Generator):
        self._queries = list(queries)
        self._rng = rng
        self._pending: list[QueryRecord] = []

    def next(self) -> QueryRecord:
        if not self._pending:
            order = self._rng.permutation(len(self._queries))
            self._pending = [self._queries[i] for i in order]
        return self._pending.pop()


def _evaluate(queries: Iterable[QueryRecord], corpus: Corpus, manager: QLearner,
              simulator, env: EnvParams, rng: np.random.Generator) -> tuple[float, float, list[EpisodeTrace]]:
    returns, maps, traces = [], [], []
    for query in queries:
        trace, _, _ = run_episode(query, corpus, manager, simulator, env, rng,
                                  manager_epsilon=0.0, simulator_epsilon=0.0)
        returns.append(trace.manager_return)
        maps.append(trace.turns[-1].map_after if trace.turns else trace.initial_map)
        traces.append(trace)
    return float(np.mean(returns)), float(np.mean(maps)), traces


class TrainingLoop:
    """Shared state of an alternating training run: buffers, the query
    cycle, and the episode counter driving the epsilon schedule."""

    def __init__(self, corpus: Corpus, train_queries: Sequence[QueryRecord],
                 manager: QLearner, simulator, env: EnvParams,
                 schedule: TrainSchedule, rng: np.random.Generator):
        if not train_queries:
            raise ValueError("no training queries")
        self.corpus = corpus
        self.manager = manager
        self.simulator = simulator
        self.env = env
        self.schedule = schedule
        self.rng = rng
        self.manager_buffer = ReplayBuffer(schedule.replay_capacity)
        self.sim_buffers = {a: ReplayBuffer(schedule.replay_capacity) for a in SystemAction}
        self.cycle = _QueryCycle(train_queries, rng)
        self.episodes_done = 0
        phases = 2 if simulator.trainable else 1
        nominal = schedule.epochs * phases * schedule.c_updates * schedule.episodes_per_update
        self.decay_span = max(1, int(nominal * schedule.eps_decay_fraction))
        self.episode_cap = 50 * schedule.c_updates + 500  # safety: phases must terminate

    def training_epsilon(self) -> float:
        frac = min(1.0, self.episodes_done / self.decay_span)
        return self.schedule.eps_start + (self.schedule.eps_end - self.schedule.eps_start) * frac

    def collect(self, manager_eps: float, sim_eps: float) -> EpisodeTrace:
        trace, m_exps, s_exps = run_episode(self.cycle.next(), self.corpus, self.manager,
                                            self.simulator, self.env, self.rng,
                                            manager_eps, sim_eps)
        for e in m_exps:
            self.manager_buffer.add(e)
        for action, exps in s_exps.items():
            for e in exps:
                self.sim_buffers[action].add(e)
        self.episodes_done += 1
        return trace

    def manager_phase(self) -> tuple[list[EpisodeTrace], list[float]]:
        """Exactly c_updates gradient steps on the manager; simulator frozen."""
        schedule = self.schedule
        traces: list[EpisodeTrace] = []
        losses: list[float] = []
        updates = 0
        while updates < schedule.c_updates:
            for _ in range(schedule.episodes_per_update):
                sim_eps = schedule.frozen_epsilon if self.simulator.trainable else 0.0
                traces.append(self.collect(self.training_epsilon(), sim_eps))
            if len(self.manager_buffer) >= schedule.batch_size:
                losses.append(self.manager.train_step(
                    self.manager_buffer.sample(schedule.batch_size, self.rng)))
                updates += 1
                if self.manager.train_steps % self.manager.sync_period == 0:
                    self.manager.sync_target()
            if len(traces) > self.episode_cap:
                raise RuntimeError("manager phase cannot fill its replay buffer; "
                                   "check batch_size vs. episode volume")
        return traces, losses

    def simulator_phase(self) -> tuple[list[EpisodeTrace], list[float]]:
        """Exactly c_updates steps spread over the decision makers, each
        trained only on turns where its action occurred; manager frozen."""
        schedule = self.schedule
        bank = self.simulator.bank
        traces: list[EpisodeTrace] = []
        losses: list[float] = []
        updates = 0
        while updates < schedule.c_updates:
            trace = self.collect(schedule.frozen_epsilon, self.training_epsilon())
            traces.append(trace)
            involved = {t.prompt_action for t in trace.turns}
            for action in SystemAction:
                if updates >= schedule.c_updates:
                    break
                if action in involved and len(self.sim_buffers[action]) >= schedule.batch_size:
                    learner = bank[action]
                    losses.append(learner.train_step(
                        self.sim_buffers[action].sample(schedule.batch_size, self.rng)))
                    updates += 1
                    if learner.train_steps % learner.sync_period == 0:
                        learner.sync_target()
            if len(traces) > self.episode_cap:
                raise RuntimeError("simulator phase cannot fill its replay buffers; "
                                   "check batch_size vs. episode volume")
        return traces, losses


def alternate_train(corpus: Corpus, train_queries: Sequence[QueryRecord],
                    valid_queries: Sequence[QueryRecord], manager: QLearner,
                    simulator, env: EnvParams, schedule: TrainSchedule,
                    rng: np.random.Generator) -> TrainLog:
    """Iterative C-step alternation; returns the per-epoch log.

    Each epoch trains the manager for exactly ``c_updates`` gradient steps
    with the simulator frozen, then (for trainable simulators) the four
    decision makers for ``c_updates`` steps total with the manager frozen.
    Phases run as many episodes as needed to keep replay buffers sampleable.
    """
    loop = TrainingLoop(corpus, train_queries, manager, simulator, env, schedule, rng)
    log = TrainLog()
    for epoch in range(1, schedule.epochs + 1):
        epoch_traces, manager_losses = loop.manager_phase()
        sim_losses: list[float] = []
        if simulator.trainable:
            sim_traces, sim_losses = loop.simulator_phase()
            epoch_traces.extend(sim_traces)

        train_return = float(np.mean([t.manager_return for t in epoch_traces]))
        train_map = float(np.mean([t.turns[-1].map_after if t.turns else t.initial_map
                                   for t in epoch_traces]))
        if valid_queries:
            valid_return, valid_map, _ = _evaluate(valid_queries, corpus, manager,
                                                   simulator, env, rng)
        else:
            valid_return, valid_map = train_return, train_map
        log.rows.append(EpochRow(epoch=epoch, train_return=train_return,
                                 valid_return=valid_return, train_map=train_map,
                                 valid_map=valid_map, episodes=len(epoch_traces),
                                 manager_loss=float(np.mean(manager_losses)) if manager_losses else 0.0,
                                 simulator_loss=float(np.mean(sim_losses)) if sim_losses else 0.0))
        if valid_return > log.best_valid_return:
            log.best_valid_return = valid_return
            log.best_epoch = epoch
    return log


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def crossval_folds(n_items: int, k: int, rng: np.random.Generator) -> list[list[int]]:
    """Deterministic seeded partition into k folds of size n//k or n//k+1."""
    if k < 2 or k > n_items:
        raise ValueError("fold count must satisfy 2 <= k <= number of queries")
    order = rng.permutation(n_items)
    return [sorted(int(i) for i in order[f::k]) for f in range(k)]


def crossval(corpus: Corpus, queries: Sequence[QueryRecord], k: int,
             make_manager, make_simulator, env: EnvParams, schedule: TrainSchedule,
             seed: int) -> dict:
    """k trials: one test fold, one validation fold, the rest train.

    ``make_manager(rng)`` / ``make_simulator(rng)`` build fresh agents per
    trial.  Returns per-fold test MAP/Return plus their means.
    """
    folds = crossval_folds(len(queries), k, np.random.default_rng(seed))
    rows = []
    for trial in range(k):
        rng = np.random.default_rng([seed, trial])
        test_idx = folds[trial]
        valid_idx = folds[(trial + 1) % k]
        train_idx = [i for f, fold in enumerate(folds) if f not in (trial, (trial + 1) % k)
                     for i in fold]
        manager = make_manager(rng)
        simulator = make_simulator(rng)
        alternate_train(corpus, [queries[i] for i in train_idx],
                        [queries[i] for i in valid_idx], manager, simulator,
                        env, schedule, rng)
        test_return, test_map, _ = _evaluate([queries[i] for i in test_idx], corpus,
                                             manager, simulator, env, rng)
        rows.append({"fold": trial, "test_map": test_map, "test_return": test_return,
                     "n_test_queries": len(test_idx)})
    return {"folds": rows,
            "map": float(np.mean([r["test_map"] for r in rows])),
            "return": float(np.mean([r["test_return"] for r in rows]))}


def write_traces(traces: Iterable[EpisodeTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")


def read_traces(path) -> list[EpisodeTrace]:
    traces = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                traces.append(EpisodeTrace.from_dict(json.loads(line)))
    return traces
