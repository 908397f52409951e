"""HTTP session service: live retrieval dialogues with a human in the user
role, plus collection of human choices for the behavioral comparison.

JSON API under /api/v1: sessions, sessions/{id}/respond, humaneval/task,
humaneval/choice, humaneval/distribution, models.  Sessions live in memory
behind per-session locks; every transition is appended to a JSONL log.
Model parameters are never mutated: the manager is a read-only snapshot.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .config import RunConfig
from .corpus import Corpus, QueryRecord
from .cotrain import (EnvParams, TurnRecord, response_from_dict, response_to_evidence)
from .dqn import QLearner
from .evaluation import average_precision
from .features import manager_state, simulator_state
from .manager import EpisodeContext, SystemAction, SystemPrompt, realize_action, turn_reward
from .retrieval import QueryModel, RankedList, apply_feedback, retrieve
from .simulator import Outcome, Terminate, check_termination

_RESPONSE_FOR_ACTION = {
    SystemAction.RETURN_DOCUMENTS: "pick_document",
    SystemAction.RETURN_KEYTERM: "yes_no",
    SystemAction.RETURN_REQUEST: "provide_term",
    SystemAction.RETURN_TOPIC: "pick_topic",
}


class CreateSessionRequest(BaseModel):
    query_id: Optional[str] = None
    query_text: Optional[str] = None


class RespondRequest(BaseModel):
    response: dict


class ChoiceRequest(BaseModel):
    subject_id: str
    task_id: str
    choice_index: int
    token: Optional[str] = None


@dataclass
class SessionState:
    id: str
    query: QueryRecord
    judged: bool
    q: QueryModel
    ranked: RankedList
    current_map: Optional[float]
    pending: SystemPrompt
    turn: int = 0
    status: str = "active"  # active | success | failure | abandoned
    asked_key_terms: set = field(default_factory=set)
    given_terms: set = field(default_factory=set)
    turns: list = field(default_factory=list)
    map_history: list = field(default_factory=list)
    manager_return: float = 0.0
    last_active: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


def _doc_summary(corpus: Corpus, doc_id: str, n_terms: int = 6) -> dict:
    doc = corpus.document(doc_id)
    top = sorted(doc.retrieval_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n_terms]
    return {"doc_id": doc_id, "top_terms": [t for t, _ in top]}


def _prompt_payload(prompt: SystemPrompt, corpus: Corpus) -> dict:
    if prompt.action == SystemAction.RETURN_DOCUMENTS:
        docs = [dict(_doc_summary(corpus, doc_id), score=score)
                for doc_id, score in (prompt.payload or ())]
        return {"action": "return_documents", "documents": docs, "utterance": prompt.utterance}
    if prompt.action == SystemAction.RETURN_KEYTERM:
        return {"action": "return_keyterm", "key_term": prompt.payload, "utterance": prompt.utterance}
    if prompt.action == SystemAction.RETURN_TOPIC:
        topics = [{"topic_id": tid,
                   "label": corpus.topic_catalog[tid].label if tid in corpus.topic_catalog else tid}
                  for tid in (prompt.payload or ())]
        return {"action": "return_topic", "topics": topics, "utterance": prompt.utterance}
    return {"action": "return_request", "utterance": prompt.utterance}


def _ranking_page(ranked: RankedList, corpus: Corpus, depth: int = 10) -> list[dict]:
    return [dict(_doc_summary(corpus, doc_id), score=score)
            for doc_id, score in ranked.entries[:depth]]


class HumanEvalStore:
    """Task pool plus per-subject choices with idempotent submission tokens."""

    def __init__(self, tasks: list[dict], choices_path: Optional[Path]):
        self.tasks = tasks
        self.by_id = {t["task_id"]: t for t in tasks}
        self.choices: dict[tuple[str, str], dict] = {}
        self.choices_path = choices_path
        self.lock = threading.Lock()

    def next_task(self, subject_id: str) -> Optional[dict]:
        with self.lock:
            for task in self.tasks:
                if (subject_id, task["task_id"]) not in self.choices:
                    return task
        return None

    def submit(self, subject_id: str, task_id: str, choice_index: int,
               token: Optional[str]) -> dict:
        task = self.by_id.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id!r}")
        if not 0 <= choice_index < len(task["candidates"]):
            raise HTTPException(status_code=422,
                                detail=f"choice_index must lie in 0..{len(task['candidates']) - 1}")
        key = (subject_id, task_id)
        with self.lock:
            existing = self.choices.get(key)
            if existing is not None:
                if token and existing.get("token") == token:
                    return existing  # idempotent retry
                raise HTTPException(status_code=409,
                                    detail=f"subject already answered task {task_id!r}")
            record = {"subject_id": subject_id, "task_id": task_id,
                      "choice_index": choice_index, "token": token}
            self.choices[key] = record
            if self.choices_path:
                with open(self.choices_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            return record

    def distribution(self) -> dict:
        counts = [0, 0, 0, 0]
        with self.lock:
            for record in self.choices.values():
                counts[record["choice_index"]] += 1
        total = sum(counts)
        return {"counts": counts, "n_samples": total,
                "probabilities": [c / total for c in counts] if total else None}


def build_service(corpus: Corpus, queries: list[QueryRecord], manager: QLearner,
                  cfg: RunConfig) -> FastAPI:
    env = cfg.env_params()
    manager = manager.snapshot()  # the service must never see live training state
    queries_by_id = {q.id: q for q in queries}
    sessions: dict[str, SessionState] = {}
    sessions_lock = threading.Lock()
    idle_seconds = cfg.session_idle_minutes * 60.0

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session_log = out_dir / "sessions.log.jsonl"

    tasks = []
    tasks_path = Path(cfg.humaneval_tasks_path) if cfg.humaneval_tasks_path \
        else out_dir / "humaneval_tasks.jsonl"
    if tasks_path.exists():
        with open(tasks_path, encoding="utf-8") as fh:
            tasks = [json.loads(line) for line in fh if line.strip()]
    choices_path = Path(cfg.human_choices_path) if cfg.human_choices_path \
        else out_dir / "human_choices.jsonl"
    humaneval = HumanEvalStore(tasks, choices_path)

    app = FastAPI(title="interactive retrieval session service", version="v1")
    # the browser client is served from another origin (static files)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    def log_event(event: dict) -> None:
        with open(session_log, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def get_session(session_id: str) -> SessionState:
        with sessions_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        if session.status == "active" and time.time() - session.last_active > idle_seconds:
            session.status = "abandoned"
        return session

    def select_prompt(session: SessionState) -> SystemPrompt:
        state = manager_state(session.q, session.ranked, corpus, session.turn,
                              env.feature_config).vector(env.policy.max_turns)
        action = SystemAction(manager.act(state, 0.0, np.random.default_rng(0)))
        context = EpisodeContext(query=session.query, ranked=session.ranked,
                                 asked_key_terms=session.asked_key_terms,
                                 page_size=env.page_size)
        prompt = realize_action(action, context, corpus)
        if prompt.action == SystemAction.RETURN_KEYTERM:
            session.asked_key_terms.add(prompt.payload)
        return prompt

    def session_view(session: SessionState, terminal: bool = False) -> dict:
        view = {"session_id": session.id, "status": session.status, "turn": session.turn,
                "map": session.current_map, "map_history": list(session.map_history),
                "judged": session.judged,
                "ranking": _ranking_page(session.ranked, corpus, env.page_size)}
        if session.status == "active":
            view["prompt"] = _prompt_payload(session.pending, corpus)
        else:
            view["summary"] = {"outcome": session.status, "turns": session.turn,
                               "map_history": list(session.map_history),
                               "return": session.manager_return if session.judged else None}
        return view

    @app.get("/api/v1/models")
    def models() -> dict:
        return {"manager": manager.arch.descriptor(), "variant": manager.variant,
                "train_steps": manager.train_steps}

    @app.post("/api/v1/sessions")
    def create_session(request: CreateSessionRequest) -> dict:
        if request.query_id:
            query = queries_by_id.get(request.query_id)
            if query is None:
                raise HTTPException(status_code=404,
                                    detail=f"unknown query id {request.query_id!r}")
            judged = True
        else:
            text = (request.query_text or "").strip()
            if not text:
                raise HTTPException(status_code=422, detail="empty query text")
            terms = {}
            for token in text.split():
                terms[token] = terms.get(token, 0.0) + 1.0
            query = QueryRecord(id=f"free-{secrets.token_hex(4)}", terms=terms,
                                relevant_docs=frozenset(), topic_ranking=())
            judged = False

        q = QueryModel.from_terms(query.terms)
        if not any(t in corpus.term_index for t in q.weights):
            raise HTTPException(status_code=422,
                                detail="no query term occurs in the collection vocabulary")
        ranked = retrieve(q, corpus, env.retrieval_depth, env.feedback.smoothing)
        current_map = average_precision(ranked, query.relevant_docs) if judged else None
        session = SessionState(id=secrets.token_hex(8), query=query, judged=judged,
                               q=q, ranked=ranked, current_map=current_map,
                               pending=None)
        if judged:
            session.map_history.append(current_map)
        session.pending = select_prompt(session)
        with sessions_lock:
            sessions[session.id] = session
        log_event({"event": "create", "session_id": session.id, "query_id": query.id,
                   "judged": judged, "initial_map": current_map})
        return session_view(session)

    @app.get("/api/v1/sessions/{session_id}")
    def read_session(session_id: str) -> dict:
        return session_view(get_session(session_id))

    @app.post("/api/v1/sessions/{session_id}/respond")
    def respond(session_id: str, request: RespondRequest) -> dict:
        session = get_session(session_id)
        with session.lock:
            if session.status != "active":
                raise HTTPException(status_code=409,
                                    detail=f"session is {session.status}, not active")
            try:
                response = response_from_dict(request.response)
            except (KeyError, ValueError) as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc

            expected = _RESPONSE_FOR_ACTION[session.pending.action]
            got = request.response.get("type")
            if not isinstance(response, Terminate) and got != expected:
                raise HTTPException(
                    status_code=422,
                    detail=f"pending action {session.pending.action.name} expects a "
                           f"{expected!r} response, got {got!r}")

            session.last_active = time.time()
            if isinstance(response, Terminate):
                session.status = "success" if response.success else "failure"
                log_event({"event": "terminate", "session_id": session.id,
                           "status": session.status})
                return session_view(session)

            prompt = session.pending
            session.turn += 1
            map_before = session.current_map
            m_state = manager_state(session.q, session.ranked, corpus, session.turn - 1,
                                    env.feature_config).vector(env.policy.max_turns)
            sim_state = simulator_state(session.ranked, session.query.relevant_docs,
                                        env.k_sim)
            top_relevant = [d for d in session.ranked.doc_ids()
                            if d in session.query.relevant_docs][:4]

            evidence = response_to_evidence(response, prompt)
            if evidence is not None:
                session.q = apply_feedback(session.q, evidence, corpus, env.feedback)
            session.ranked = retrieve(session.q, corpus, env.retrieval_depth,
                                      env.feedback.smoothing)

            if session.judged:
                session.current_map = average_precision(session.ranked,
                                                        session.query.relevant_docs)
                session.map_history.append(session.current_map)
                reward = turn_reward(prompt.action, map_before, session.current_map,
                                     env.costs, env.lam)
                outcome = check_termination(session.current_map, session.turn + 1, env.policy)
            else:
                reward = env.costs.of(prompt.action)
                outcome = (Outcome.FAILURE if session.turn >= env.policy.max_turns
                           else Outcome.CONTINUE)
            session.manager_return += reward

            session.turns.append(TurnRecord(
                turn=session.turn, manager_state=[float(x) for x in m_state],
                action=prompt.action, prompt_action=prompt.action,
                prompt_payload=prompt.payload, utterance=prompt.utterance,
                sim_state=[int(b) for b in sim_state.relevance_bits], sim_choice=None,
                top_relevant=top_relevant, response=request.response, map_before=map_before if map_before is not None else -1.0,
                map_after=session.current_map if session.current_map is not None else -1.0,
                manager_reward=reward, simulator_reward=0.0))
            log_event({"event": "turn", "session_id": session.id, "turn": session.turn,
                       "action": prompt.action.name.lower(), "response": request.response,
                       "map": session.current_map})

            if outcome != Outcome.CONTINUE:
                session.status = outcome.value
                log_event({"event": "terminal", "session_id": session.id,
                           "status": session.status, "map_history": session.map_history})
                return session_view(session)

            session.pending = select_prompt(session)
            return session_view(session)

    @app.get("/api/v1/humaneval/task")
    def humaneval_task(subject_id: str) -> dict:
        task = humaneval.next_task(subject_id)
        if task is None:
            total = len(humaneval.tasks)
            return {"done": True, "completed": total}
        candidates = [_doc_summary(corpus, doc_id) for doc_id in task["candidates"]]
        return {"done": False, "task_id": task["task_id"], "query_id": task["query_id"],
                "candidates": candidates}

    @app.post("/api/v1/humaneval/choice")
    def humaneval_choice(request: ChoiceRequest) -> dict:
        record = humaneval.submit(request.subject_id, request.task_id,
                                  request.choice_index, request.token)
        return {"ok": True, "task_id": record["task_id"],
                "choice_index": record["choice_index"]}

    @app.get("/api/v1/humaneval/distribution")
    def humaneval_distribution() -> dict:
        return humaneval.distribution()

    return app
