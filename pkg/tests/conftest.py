import numpy as np
import pytest

from iscr.corpus import (Corpus, Document, QueryRecord, Topic, build_corpus,
                         generate_synthetic_corpus, load_corpus)


def corpus_from_counts(counts, manual=None, topics=None, key_terms=None):
    """Tiny corpus helper: counts is {doc_id: {term: count}}; manual counts
    mirror the retrieval counts unless given explicitly."""
    docs = []
    for doc_id in counts:
        retrieval = dict(counts[doc_id])
        man = dict((manual or {}).get(doc_id, {t: int(c) for t, c in retrieval.items()}))
        docs.append(Document(id=doc_id, retrieval_counts=retrieval, manual_counts=man))
    return build_corpus(docs, topics=topics, key_terms=key_terms)


def random_toy_corpus(rng, n_docs=None, n_terms=None):
    """Random small corpus with integer counts; every doc non-empty."""
    n_docs = n_docs or int(rng.integers(2, 9))
    n_terms = n_terms or int(rng.integers(2, 7))
    terms = [f"w{j}" for j in range(n_terms)]
    counts = {}
    for i in range(n_docs):
        row = {t: int(c) for t, c in zip(terms, rng.integers(0, 4, size=n_terms)) if c > 0}
        if not row:
            row = {terms[int(rng.integers(n_terms))]: 1}
        counts[f"d{i}"] = row
    return corpus_from_counts(counts)


@pytest.fixture(scope="session")
def synth_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    return generate_synthetic_corpus(seed=0, n_docs=200, n_queries=30, n_topics=6,
                                     out_dir=out)


@pytest.fixture(scope="session")
def synth(synth_paths):
    return load_corpus(synth_paths["corpus"], synth_paths["queries"], synth_paths["topics"])
