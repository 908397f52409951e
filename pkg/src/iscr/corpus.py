"""Document collection loading, validation, indexing, and synthetic data generation.

The corpus is the shared read-only substrate for retrieval, the user
simulator, and evaluation.  Documents carry two count views: ``retrieval_counts``
(what the search engine indexes; soft/lattice expected counts allowed) and
``manual_counts`` (integer counts from manual transcriptions; the simulator's
ground-truth side).  All derived statistics (df, idf, collection model) are
precomputed at build time and the corpus is immutable afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CorpusFormatError(ValueError):
    """Malformed record in a corpus/query/topic/key-term file."""


class CorpusValidationError(ValueError):
    """Structurally valid records that violate corpus invariants."""


@dataclass(frozen=True)
class Document:
    id: str
    retrieval_counts: dict[str, float]
    manual_counts: dict[str, float]


@dataclass(frozen=True)
class Topic:
    id: str
    label: str
    terms: dict[str, float]


@dataclass(frozen=True)
class QueryRecord:
    id: str
    terms: dict[str, float]
    relevant_docs: frozenset[str]
    topic_ranking: tuple[str, ...]


@dataclass
class Corpus:
    """Indexed document collection.

    ``vocabulary`` is the sorted list of terms appearing in at least one
    manual transcription, so ``df[t] >= 1`` for every vocabulary term.
    ``collection_model`` is the maximum-likelihood pooling of retrieval and
    manual counts restricted to the vocabulary; it is strictly positive on
    every vocabulary term, which keeps retrieval scores finite.
    """

    documents: list[Document]
    vocabulary: tuple[str, ...]
    df: dict[str, int]
    collection_model: dict[str, float]
    topic_catalog: dict[str, Topic]
    key_terms: tuple[str, ...]

    # index structures, filled by build_corpus
    term_index: dict[str, int] = field(default_factory=dict, repr=False)
    doc_index: dict[str, int] = field(default_factory=dict, repr=False)
    doc_ids: tuple[str, ...] = field(default=(), repr=False)
    # (n_docs, n_terms) in-vocabulary retrieval counts and derived row models
    count_matrix: np.ndarray = field(default=None, repr=False)
    manual_matrix: np.ndarray = field(default=None, repr=False)
    p_ml: np.ndarray = field(default=None, repr=False)
    collection_vector: np.ndarray = field(default=None, repr=False)
    # per-smoothing precomputed log score matrices, filled lazily by retrieval
    score_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.documents)

    def term_id(self, term: str) -> int | None:
        return self.term_index.get(term)

    def document(self, doc_id: str) -> Document:
        return self.documents[self.doc_index[doc_id]]


def idf(corpus: Corpus, term: str) -> float:
    """ln(|D| / df(t)) over manual transcriptions; unknown terms score 0.

    Unknown terms must not raise: user free-text responses flow through here.
    """
    d_f = corpus.df.get(term, 0)
    if d_f <= 0:
        return 0.0
    return math.log(len(corpus.documents) / d_f)


def _as_count_map(raw: object, *, what: str, line_no: int, integer: bool) -> dict[str, float]:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"line {line_no}: {what} must be an object of term -> count")
    out: dict[str, float] = {}
    for term, value in raw.items():
        if not isinstance(term, str) or not term:
            raise CorpusFormatError(f"line {line_no}: {what} has a non-string term key")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise CorpusFormatError(f"line {line_no}: {what}[{term!r}] is not a number")
        v = float(value)
        if not math.isfinite(v) or v < 0:
            raise CorpusFormatError(f"line {line_no}: {what}[{term!r}] must be finite and >= 0")
        if integer and v != int(v):
            raise CorpusFormatError(f"line {line_no}: {what}[{term!r}] must be an integer count")
        out[term] = v
    return out


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path.name}: line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"{path.name}: line {line_no}: record must be a JSON object")
            records.append((line_no, obj))
    return records


def parse_documents(path: Path, one_best_equals_manual: bool = False) -> list[Document]:
    docs: list[Document] = []
    for line_no, obj in _read_jsonl(path):
        try:
            doc_id = obj["id"]
        except KeyError:
            raise CorpusFormatError(f"{path.name}: line {line_no}: missing 'id'") from None
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusFormatError(f"{path.name}: line {line_no}: 'id' must be a non-empty string")
        retrieval = _as_count_map(obj.get("retrieval_counts", {}), what="retrieval_counts",
                                  line_no=line_no, integer=False)
        manual = _as_count_map(obj.get("manual_counts", {}), what="manual_counts",
                               line_no=line_no, integer=True)
        if not manual:
            if not one_best_equals_manual:
                raise CorpusValidationError(
                    f"document {doc_id!r}: empty manual_counts (corpus not declared one-best-equals-manual)")
            manual = _as_count_map(obj.get("retrieval_counts", {}), what="retrieval_counts(mirrored)",
                                   line_no=line_no, integer=True)
        docs.append(Document(id=doc_id, retrieval_counts=retrieval, manual_counts=manual))
    return docs


def parse_queries(path: Path) -> list[QueryRecord]:
    queries: list[QueryRecord] = []
    for line_no, obj in _read_jsonl(path):
        try:
            qid = obj["id"]
            terms = obj["terms"]
            relevant = obj["relevant_docs"]
        except KeyError as exc:
            raise CorpusFormatError(f"{path.name}: line {line_no}: missing {exc.args[0]!r}") from None
        term_map = _as_count_map(terms, what="terms", line_no=line_no, integer=False)
        if any(w <= 0 for w in term_map.values()):
            raise CorpusFormatError(f"{path.name}: line {line_no}: query term weights must be positive")
        if not isinstance(relevant, list) or not all(isinstance(d, str) for d in relevant):
            raise CorpusFormatError(f"{path.name}: line {line_no}: relevant_docs must be a list of ids")
        ranking = obj.get("topic_ranking", [])
        if not isinstance(ranking, list) or not all(isinstance(t, str) for t in ranking):
            raise CorpusFormatError(f"{path.name}: line {line_no}: topic_ranking must be a list of ids")
        queries.append(QueryRecord(id=str(qid), terms=term_map,
                                   relevant_docs=frozenset(relevant),
                                   topic_ranking=tuple(ranking)))
    return queries


def parse_topics(path: Path) -> dict[str, Topic]:
    topics: dict[str, Topic] = {}
    for line_no, obj in _read_jsonl(path):
        try:
            tid = obj["id"]
        except KeyError:
            raise CorpusFormatError(f"{path.name}: line {line_no}: missing 'id'") from None
        terms = _as_count_map(obj.get("terms", {}), what="terms", line_no=line_no, integer=False)
        total = sum(terms.values())
        if not terms or abs(total - 1.0) > 1e-9:
            raise CorpusFormatError(f"{path.name}: line {line_no}: topic distribution must sum to 1 (got {total})")
        topics[str(tid)] = Topic(id=str(tid), label=str(obj.get("label", tid)), terms=terms)
    return topics


def parse_key_terms(path: Path) -> tuple[str, ...]:
    terms = []
    for line_no, obj in _read_jsonl(path):
        term = obj.get("term")
        if not isinstance(term, str) or not term:
            raise CorpusFormatError(f"{path.name}: line {line_no}: missing 'term'")
        terms.append(term)
    return tuple(terms)


def build_corpus(documents: list[Document],
                 topics: dict[str, Topic] | None = None,
                 key_terms: tuple[str, ...] | None = None,
                 n_key_terms: int = 50) -> Corpus:
    """Index a document list: vocabulary, df, collection model, count matrices.

    When no explicit key-term list is given, the top ``n_key_terms`` terms by
    global tf·idf (pooled retrieval counts times idf) are used.
    """
    if not documents:
        raise CorpusValidationError("corpus has no documents")
    seen: set[str] = set()
    for doc in documents:
        if doc.id in seen:
            raise CorpusValidationError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        if not any(v > 0 for v in doc.retrieval_counts.values()):
            raise CorpusValidationError(f"document {doc.id!r}: no positive retrieval count")

    df: dict[str, int] = {}
    for doc in documents:
        for term, count in doc.manual_counts.items():
            if count > 0:
                df[term] = df.get(term, 0) + 1
    if not df:
        raise CorpusValidationError("no term occurs in any manual transcription")
    vocabulary = tuple(sorted(df))
    term_index = {t: i for i, t in enumerate(vocabulary)}

    n_docs, n_terms = len(documents), len(vocabulary)
    count_matrix = np.zeros((n_docs, n_terms))
    manual_matrix = np.zeros((n_docs, n_terms))
    for i, doc in enumerate(documents):
        for term, count in doc.retrieval_counts.items():
            j = term_index.get(term)
            if j is not None:
                count_matrix[i, j] = count
        for term, count in doc.manual_counts.items():
            j = term_index.get(term)
            if j is not None:
                manual_matrix[i, j] = count

    row_totals = count_matrix.sum(axis=1)
    bad = np.flatnonzero(row_totals <= 0)
    if bad.size:
        raise CorpusValidationError(
            f"document {documents[bad[0]].id!r}: no positive in-vocabulary retrieval count")
    p_ml = count_matrix / row_totals[:, None]

    pooled = count_matrix.sum(axis=0) + manual_matrix.sum(axis=0)
    collection_vector = pooled / pooled.sum()
    collection_model = {t: float(collection_vector[j]) for t, j in term_index.items()}

    corpus = Corpus(
        documents=list(documents),
        vocabulary=vocabulary,
        df=df,
        collection_model=collection_model,
        topic_catalog=dict(topics or {}),
        key_terms=(),
        term_index=term_index,
        doc_index={d.id: i for i, d in enumerate(documents)},
        doc_ids=tuple(d.id for d in documents),
        count_matrix=count_matrix,
        manual_matrix=manual_matrix,
        p_ml=p_ml,
        collection_vector=collection_vector,
    )

    for topic in corpus.topic_catalog.values():
        unknown = [t for t in topic.terms if t not in term_index]
        if unknown:
            raise CorpusValidationError(f"topic {topic.id!r}: unknown terms {unknown[:3]}")

    if key_terms is None:
        tfidf = pooled * np.array([idf(corpus, t) for t in vocabulary])
        order = np.lexsort((np.array(vocabulary), -tfidf))
        key_terms = tuple(vocabulary[j] for j in order[:n_key_terms] if tfidf[j] > 0)
    else:
        unknown = [t for t in key_terms if t not in term_index]
        if unknown:
            raise CorpusValidationError(f"key-term file names unknown terms {unknown[:3]}")
    corpus.key_terms = tuple(key_terms)
    return corpus


def validate_queries(corpus: Corpus, queries: list[QueryRecord]) -> None:
    for query in queries:
        if not query.relevant_docs:
            raise CorpusValidationError(f"query {query.id!r}: empty relevant set")
        for doc_id in sorted(query.relevant_docs):
            if doc_id not in corpus.doc_index:
                raise CorpusValidationError(
                    f"query {query.id!r}: relevance judgment names unknown document {doc_id!r}")
        for topic_id in query.topic_ranking:
            if corpus.topic_catalog and topic_id not in corpus.topic_catalog:
                raise CorpusValidationError(f"query {query.id!r}: unknown topic {topic_id!r}")


def load_corpus(corpus_path: str | Path,
                query_path: str | Path,
                topic_path: str | Path | None = None,
                key_term_path: str | Path | None = None,
                one_best_equals_manual: bool = False,
                n_key_terms: int = 50) -> tuple[Corpus, list[QueryRecord]]:
    """Load and fully index a corpus plus its query set from JSONL files."""
    documents = parse_documents(Path(corpus_path), one_best_equals_manual)
    topics = parse_topics(Path(topic_path)) if topic_path else None
    key_terms = parse_key_terms(Path(key_term_path)) if key_term_path else None
    corpus = build_corpus(documents, topics=topics, key_terms=key_terms, n_key_terms=n_key_terms)
    queries = parse_queries(Path(query_path))
    validate_queries(corpus, queries)
    return corpus, queries


def save_corpus(corpus: Corpus, queries: list[QueryRecord],
                corpus_path: str | Path, query_path: str | Path,
                topic_path: str | Path | None = None) -> None:
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            fh.write(json.dumps({"id": doc.id,
                                 "retrieval_counts": dict(sorted(doc.retrieval_counts.items())),
                                 "manual_counts": dict(sorted(doc.manual_counts.items()))},
                                sort_keys=True) + "\n")
    with open(query_path, "w", encoding="utf-8") as fh:
        for query in queries:
            fh.write(json.dumps({"id": query.id,
                                 "terms": dict(sorted(query.terms.items())),
                                 "relevant_docs": sorted(query.relevant_docs),
                                 "topic_ranking": list(query.topic_ranking)},
                                sort_keys=True) + "\n")
    if topic_path is not None:
        with open(topic_path, "w", encoding="utf-8") as fh:
            for tid in sorted(corpus.topic_catalog):
                topic = corpus.topic_catalog[tid]
                fh.write(json.dumps({"id": topic.id, "label": topic.label,
                                     "terms": dict(sorted(topic.terms.items()))},
                                    sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

# Mixing weights for planted documents/queries.  Each topic's documents are
# either "stubs" (headline vocabulary: they match the initial query best but
# contribute almost no new terms under feedback) or "content" documents (body
# vocabulary drawn from a per-document subset: initially invisible to the
# query, highly informative when fed back).  Only two stubs exist per topic,
# so among the top-4 relevant documents the shallow picks are stubs and the
# deep picks are content documents.  Queries anchor on one headline term,
# carry broad shared terms, and a distractor headline term from another
# topic, so the initial ranking is poor and feedback has room to raise MAP.
_DOC_LENGTH = 60
_N_SHARED = 40
_N_HEADLINE = 6
_N_BODY = 9
_BODY_SUBSET = 3        # body terms drawn per content document
_STUBS_PER_TOPIC = 2
_STUB_HEADLINE = 0.38
_CONTENT_BODY = 0.45
_JARGON = (0.12, 0.10, 0.08)  # manual mass of the out-of-vocabulary terms
_JARGON_ASR_RATE = 0.0  # the recognizer's closed vocabulary never emits them
_QUERY_ANCHOR = 0.30
_QUERY_SHARED = 0.50
_QUERY_DISTRACTOR = 0.20
_TOPIC_DIST_TOPIC_MASS = 0.22


def _topic_terms(z: int) -> tuple[list[str], list[str]]:
    headline = [f"t{z:02d}h{k}" for k in range(_N_HEADLINE)]
    body = [f"t{z:02d}b{k:02d}" for k in range(_N_BODY)]
    return headline, body


def _jargon_terms(z: int) -> list[str]:
    return [f"t{z:02d}jargon{j}" for j in range(len(_JARGON))]


def generate_synthetic_corpus(seed: int, n_docs: int, n_queries: int, n_topics: int,
                              out_dir: str | Path) -> dict[str, Path]:
    """Write a planted-topic corpus to ``out_dir``; deterministic given seed.

    Every query's relevant documents share a planted topic vocabulary.  The
    query initially matches only the topic's headline terms (carried by two
    stub documents per topic), so feedback that surfaces body vocabulary
    (deep relevant-document picks, informative terms, topic choices)
    verifiably raises MAP while shallow feedback barely moves it.  Returns
    the paths written.
    """
    if n_docs < 20:
        raise ValueError("n_docs must be >= 20")
    if n_queries < 5:
        raise ValueError("n_queries must be >= 5")
    if n_topics < 4:
        raise ValueError("n_topics must be >= 4 (topic rankings need 4 entries)")

    rng = np.random.default_rng(seed)
    shared = [f"common{k:02d}" for k in range(_N_SHARED)]

    # per-topic doc specs: 2 stubs then content, shuffled before numbering so
    # doc-id order carries no topic signal
    per_topic = [n_docs // n_topics + (1 if z < n_docs % n_topics else 0)
                 for z in range(n_topics)]
    doc_specs = [(z, "stub" if j < _STUBS_PER_TOPIC else "content")
                 for z, count in enumerate(per_topic) for j in range(count)]
    rng.shuffle(doc_specs)

    documents = []
    doc_topics: list[int] = []
    for i, (z, kind) in enumerate(doc_specs):
        headline, body = _topic_terms(z)
        jargon = _jargon_terms(z)
        jargon_mass = sum(_JARGON)
        if kind == "stub":
            terms = headline + jargon + shared
            probs = np.concatenate([
                np.full(_N_HEADLINE, _STUB_HEADLINE / _N_HEADLINE),
                np.array(_JARGON),
                np.full(_N_SHARED, (1.0 - _STUB_HEADLINE - jargon_mass) / _N_SHARED),
            ])
        else:
            picks = [body[int(j)] for j in rng.choice(_N_BODY, size=_BODY_SUBSET, replace=False)]
            terms = picks + jargon + shared
            probs = np.concatenate([
                np.full(_BODY_SUBSET, _CONTENT_BODY / _BODY_SUBSET),
                np.array(_JARGON),
                np.full(_N_SHARED, (1.0 - _CONTENT_BODY - jargon_mass) / _N_SHARED),
            ])
        counts = rng.multinomial(_DOC_LENGTH, probs)
        manual = {t: int(c) for t, c in zip(terms, counts) if c > 0}
        # guarantee the planted structure survives sampling noise: stubs carry
        # every headline term, every topic document mentions its jargon terms
        if kind == "stub":
            for t in headline:
                manual[t] = max(manual.get(t, 0), 1)
        for jt in jargon:
            manual[jt] = max(manual.get(jt, 0), 1)
        # the recognizer almost never catches the topic's spoken jargon terms:
        # the retrieval index sees at most a single token of each
        retrieval = dict(manual)
        for jt in jargon:
            jargon_count = retrieval.pop(jt, 0)
            if jargon_count > 0 and rng.random() < _JARGON_ASR_RATE:
                retrieval[jt] = 1
        if not retrieval:
            retrieval = {shared[0]: 1}
            manual[shared[0]] = max(manual.get(shared[0], 0), 1)
        documents.append(Document(id=f"d{i:04d}", retrieval_counts=retrieval,
                                  manual_counts=manual))
        doc_topics.append(z)

    realized = set()
    for doc in documents:
        realized.update(t for t, c in doc.manual_counts.items() if c > 0)

    topics = {}
    for z in range(n_topics):
        headline, body = _topic_terms(z)
        # restrict to terms that actually occur so topic records stay valid
        topical = [t for t in headline + body if t in realized]
        topic_terms = {t: _TOPIC_DIST_TOPIC_MASS / len(topical) for t in topical}
        for t in shared:
            topic_terms[t] = (1.0 - _TOPIC_DIST_TOPIC_MASS) / _N_SHARED
        total = sum(topic_terms.values())
        topic_terms = {t: w / total for t, w in topic_terms.items()}
        topics[f"z{z:02d}"] = Topic(id=f"z{z:02d}", label=f"planted topic {z}", terms=topic_terms)

    queries = []
    for qn in range(n_queries):
        z = qn % n_topics
        distractor_topic = (z + 1 + int(rng.integers(n_topics - 1))) % n_topics
        if distractor_topic == z:
            distractor_topic = (z + 1) % n_topics
        headline, _ = _topic_terms(z)
        d_headline, _ = _topic_terms(distractor_topic)
        anchor = headline[int(rng.integers(_N_HEADLINE))]
        distractor = d_headline[int(rng.integers(_N_HEADLINE))]
        s1, s2 = rng.choice(_N_SHARED, size=2, replace=False)
        terms = {anchor: _QUERY_ANCHOR,
                 shared[int(s1)]: _QUERY_SHARED / 2,
                 shared[int(s2)]: _QUERY_SHARED / 2,
                 distractor: _QUERY_DISTRACTOR}
        relevant = frozenset(doc.id for doc, dz in zip(documents, doc_topics) if dz == z)
        others = [f"z{t:02d}" for t in range(n_topics) if t not in (z, distractor_topic)]
        rng.shuffle(others)
        ranking = (f"z{z:02d}", f"z{distractor_topic:02d}", *others)
        queries.append(QueryRecord(id=f"q{qn:03d}", terms=terms, relevant_docs=relevant,
                                   topic_ranking=ranking))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": out / "corpus.jsonl", "queries": out / "queries.jsonl",
             "topics": out / "topics.jsonl"}
    corpus = build_corpus(documents, topics=topics)
    save_corpus(corpus, queries, paths["corpus"], paths["queries"], paths["topics"])
    return paths
