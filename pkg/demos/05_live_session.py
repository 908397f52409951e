"""Drive the session service as a scripted human user.

Builds the service in-process (no network needed), opens a session on a
benchmark query, answers each system prompt the way a cooperative user
would, and prints the terminal summary with the MAP trajectory.  The same
JSON API is what `iscr serve` exposes and what the browser client consumes.
"""

import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from iscr.config import RunConfig
from iscr.corpus import generate_synthetic_corpus, load_corpus
from iscr.service import build_service
from iscr.simulator import term_ranking

workdir = Path(tempfile.mkdtemp(prefix="iscr-demo-"))
paths = generate_synthetic_corpus(seed=0, n_docs=200, n_queries=30, n_topics=6,
                                  out_dir=workdir)
corpus, queries = load_corpus(paths["corpus"], paths["queries"], paths["topics"])

cfg = RunConfig.desk_preset(corpus_path=str(paths["corpus"]),
                            query_path=str(paths["queries"]),
                            topic_path=str(paths["topics"]),
                            output_dir=str(workdir / "run"))
manager = cfg.make_manager(np.random.default_rng(0))
client = TestClient(build_service(corpus, queries, manager, cfg))

query = queries[0]
body = client.post("/api/v1/sessions", json={"query_id": query.id}).json()
session_id = body["session_id"]
print(f"session {session_id} on query {query.id}, initial MAP {body['map']:.3f}")


def answer(prompt) -> dict:
    """A cooperative scripted user: deep document picks, informative terms."""
    kind = prompt["action"]
    if kind == "return_documents":
        docs = [d["doc_id"] for d in prompt["documents"] if d["doc_id"] in query.relevant_docs]
        choice = docs[-1] if docs else prompt["documents"][0]["doc_id"]
        return {"type": "pick_document", "doc_id": choice}
    if kind == "return_keyterm":
        term = prompt["key_term"]
        member = sum(1 for d in query.relevant_docs
                     if corpus.document(d).manual_counts.get(term, 0) > 0)
        return {"type": "yes_no", "yes": member > len(query.relevant_docs) / 2}
    if kind == "return_topic":
        return {"type": "pick_topic", "topic_id": query.topic_ranking[0]}
    ranking = [t for t in term_ranking(query.relevant_docs, corpus) if "jargon" not in t]
    return {"type": "provide_term", "term": ranking[answer.terms_given]}


answer.terms_given = 0

while body["status"] == "active":
    prompt = body["prompt"]
    response = answer(prompt)
    if response["type"] == "provide_term":
        answer.terms_given += 1
    print(f"\nsystem: {prompt['utterance']}")
    print(f"user:   {response}")
    body = client.post(f"/api/v1/sessions/{session_id}/respond",
                       json={"response": response}).json()
    shown = body["map"] if body["map"] is not None else float("nan")
    print(f"        -> MAP {shown:.3f}, status {body['status']}")

summary = body["summary"]
print(f"\nterminal summary: outcome={summary['outcome']} after {summary['turns']} turns")
print(f"MAP trajectory: {[round(m, 3) for m in summary['map_history']]}")
print(f"dialogue return: {summary['return']:.2f}")
