"""Walk the four feedback actions on one query and watch MAP move.

Shows why user choices matter: shallow document feedback (the top-ranked
relevant document is a headline stub) barely helps, deep document feedback
surfaces the informative content documents, term requests depend on which
term the user offers, and topic feedback gives a slow broad lift.
"""

import tempfile

from iscr.corpus import generate_synthetic_corpus, load_corpus
from iscr.evaluation import average_precision
from iscr.retrieval import (FeedbackParams, QueryModel, RelevantDoc, RequestTerm,
                            TopicChoice, apply_feedback, retrieve)
from iscr.simulator import term_ranking

paths = generate_synthetic_corpus(seed=0, n_docs=200, n_queries=30, n_topics=6,
                                  out_dir=tempfile.mkdtemp(prefix="iscr-demo-"))
corpus, queries = load_corpus(paths["corpus"], paths["queries"], paths["topics"])
fb = FeedbackParams()
query = queries[0]

q0 = QueryModel.from_terms(query.terms)
ranked = retrieve(q0, corpus)
map0 = average_precision(ranked, query.relevant_docs)
print(f"query {query.id}: initial MAP {map0:.3f}\n")

relevant_in_rank = [d for d in ranked.doc_ids() if d in query.relevant_docs]
scores = term_ranking(query.relevant_docs, corpus)


def try_feedback(label, evidence):
    q1 = apply_feedback(q0, evidence, corpus, fb)
    m = average_precision(retrieve(q1, corpus), query.relevant_docs)
    print(f"  {label:48s} MAP {map0:.3f} -> {m:.3f}   (delta {m - map0:+.3f})")


print("one turn of document feedback, by the rank the user picks:")
for pick in range(4):
    try_feedback(f"relevant document at rank {pick + 1} ({relevant_in_rank[pick]})",
                 RelevantDoc(relevant_in_rank[pick]))

print("\none turn of term feedback, by the user's term-importance rank:")
for pick in range(4):
    try_feedback(f"term {scores[pick]!r} (importance rank {pick + 1})",
                 RequestTerm(scores[pick]))

print("\ntopic feedback:")
try_feedback(f"annotated topic {query.topic_ranking[0]!r}",
             TopicChoice(query.topic_ranking[0]))
try_feedback(f"distractor topic {query.topic_ranking[1]!r}",
             TopicChoice(query.topic_ranking[1]))

print("\nnote the asymmetries a trainable user can exploit: deep document picks")
print("beat rank-1 picks, and the top term by raw importance is unrecognizable")
print("to the engine while ranks 2-4 carry real weight.")
