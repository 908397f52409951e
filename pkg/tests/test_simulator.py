import math

import numpy as np
import pytest

from iscr.corpus import QueryRecord
from iscr.features import simulator_state
from iscr.manager import SystemAction, SystemPrompt
from iscr.retrieval import QueryModel, retrieve
from iscr.simulator import (KEYTERM_PROBS, DecisionMakerBank, Outcome, PickDocument,
                            PickTopic, ProvideTerm, TerminationPolicy, YesNo,
                            check_termination, keyterm_membership, respond,
                            rule_based_respond, simulator_reward, term_ranking,
                            term_score)

from conftest import corpus_from_counts, random_toy_corpus
from test_dqn import constant_q_learner


def brute_force_scores(relevant, corpus):
    n = len(corpus.documents)
    scores = {}
    for term in corpus.vocabulary:
        df = sum(1 for d in corpus.documents if d.manual_counts.get(term, 0) > 0)
        total = sum(corpus.document(doc_id).manual_counts.get(term, 0)
                    for doc_id in relevant)
        scores[term] = total * math.log(1.0 + math.log(n / df))
    return scores


def forced_bank(choice, k=49):
    """Bank whose every decision maker greedily picks the given index."""
    q = [0.0, 0.0, 0.0, 0.0]
    q[choice] = 1.0
    return DecisionMakerBank({a: constant_q_learner(q, input_dim=k) for a in SystemAction})


def doc_prompt(ranked):
    return SystemPrompt(action=SystemAction.RETURN_DOCUMENTS,
                        payload=tuple(ranked.entries[:10]), utterance="")


class TestTermScore:
    def test_absent_term_scores_zero(self):
        corpus = corpus_from_counts({"d1": {"a": 1}, "d2": {"b": 1}})
        assert term_score("b", {"d1"}, corpus) == 0.0

    def test_direct_evaluation(self):
        counts = {f"d{i}": {"x": 1} for i in range(100)}
        counts["d0"] = {"x": 1, "t": 3}
        corpus = corpus_from_counts(counts)
        expected = 3 * math.log(1 + math.log(100))  # = 5.1711
        assert term_score("t", {"d0"}, corpus) == pytest.approx(expected, abs=1e-9)

    def test_full_ranking_matches_brute_force_on_toy_corpora(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            corpus = random_toy_corpus(rng, n_docs=10)
            relevant = set(corpus.doc_ids[: int(rng.integers(1, 6))])
            scores = brute_force_scores(relevant, corpus)
            expected = sorted(corpus.vocabulary, key=lambda t: (-scores[t], t))
            assert term_ranking(relevant, corpus) == expected


class TestRespond:
    def test_documents_choice_zero_picks_top_relevant(self):
        corpus = corpus_from_counts({f"d{i}": {"a": 10 - i} for i in range(6)})
        query = QueryRecord(id="q", terms={"a": 1.0},
                            relevant_docs=frozenset({"d2", "d4", "d5"}), topic_ranking=())
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        state = simulator_state(ranked, query.relevant_docs, 49)
        response, choice = respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked), state,
                                   forced_bank(0), query, corpus, 0.0,
                                   np.random.default_rng(0), ranked=ranked)
        assert choice == 0
        assert response == PickDocument("d2")  # best-ranked relevant document

    def test_documents_choice_beyond_available_falls_back_to_first(self):
        corpus = corpus_from_counts({f"d{i}": {"a": 10 - i} for i in range(4)})
        query = QueryRecord(id="q", terms={"a": 1.0}, relevant_docs=frozenset({"d1"}),
                            topic_ranking=())
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        state = simulator_state(ranked, query.relevant_docs, 49)
        response, _ = respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked), state,
                              forced_bank(3), query, corpus, 0.0,
                              np.random.default_rng(0), ranked=ranked)
        assert response == PickDocument("d1")

    def test_keyterm_full_membership_probability_one_always_yes(self):
        corpus = corpus_from_counts({"d1": {"t": 1, "a": 1}, "d2": {"t": 2, "b": 1},
                                     "d3": {"c": 1}})
        query = QueryRecord(id="q", terms={"a": 1.0},
                            relevant_docs=frozenset({"d1", "d2"}), topic_ranking=())
        prompt = SystemPrompt(action=SystemAction.RETURN_KEYTERM, payload="t",
                              utterance="Is it related to t?")
        state = simulator_state(retrieve(QueryModel.from_terms(query.terms), corpus),
                                query.relevant_docs, 49)
        rng = np.random.default_rng(1)
        assert KEYTERM_PROBS[0] == 1.0
        for _ in range(50):
            response, _ = respond(SystemAction.RETURN_KEYTERM, prompt, state,
                                  forced_bank(0), query, corpus, 0.0, rng)
            assert response == YesNo(True)

    def test_request_response_in_top_four_of_score_ranking(self, synth):
        corpus, queries = synth
        query = queries[0]
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        state = simulator_state(ranked, query.relevant_docs, 49)
        prompt = SystemPrompt(action=SystemAction.RETURN_REQUEST, payload=None,
                              utterance="Please provide more information.")
        scores = brute_force_scores(query.relevant_docs, corpus)
        top4 = sorted(corpus.vocabulary, key=lambda t: (-scores[t], t))[:4]
        rng = np.random.default_rng(2)
        for choice in range(4):
            response, _ = respond(SystemAction.RETURN_REQUEST, prompt, state,
                                  forced_bank(choice), query, corpus, 0.0, rng,
                                  ranked=ranked)
            assert isinstance(response, ProvideTerm)
            assert response.term in top4

    def test_zero_relevant_retrieved_routes_through_request_pathway(self):
        corpus = corpus_from_counts({"d1": {"a": 5}, "d2": {"a": 3}, "d3": {"b": 9}})
        query = QueryRecord(id="q", terms={"a": 1.0}, relevant_docs=frozenset({"d3"}),
                            topic_ranking=())
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus, depth=2)
        state = simulator_state(ranked, query.relevant_docs, 49)
        response, _ = respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked), state,
                              forced_bank(0), query, corpus, 0.0,
                              np.random.default_rng(3), ranked=ranked)
        assert isinstance(response, ProvideTerm)
        assert response.term == "b"

    def test_topic_choice_indexes_query_ranking(self):
        corpus = corpus_from_counts({"d1": {"a": 1}})
        query = QueryRecord(id="q", terms={"a": 1.0}, relevant_docs=frozenset({"d1"}),
                            topic_ranking=("z1", "z2", "z3", "z4"))
        prompt = SystemPrompt(action=SystemAction.RETURN_TOPIC,
                              payload=("z1", "z2", "z3", "z4"), utterance="")
        state = simulator_state(retrieve(QueryModel.from_terms(query.terms), corpus),
                                query.relevant_docs, 49)
        response, _ = respond(SystemAction.RETURN_TOPIC, prompt, state, forced_bank(2),
                              query, corpus, 0.0, np.random.default_rng(4))
        assert response == PickTopic("z3")

    def test_document_responses_always_relevant(self, synth):
        corpus, queries = synth
        rng = np.random.default_rng(5)
        bank = DecisionMakerBank({a: constant_q_learner([0.0] * 4, input_dim=49)
                                  for a in SystemAction})
        for query in queries[:10]:
            ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
            state = simulator_state(ranked, query.relevant_docs, 49)
            response, choice = respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked),
                                       state, bank, query, corpus, 1.0, rng, ranked=ranked)
            assert 0 <= choice <= 3
            if isinstance(response, PickDocument):
                assert response.doc_id in query.relevant_docs

    def test_prompt_action_mismatch_rejected(self):
        corpus = corpus_from_counts({"d1": {"a": 1}})
        query = QueryRecord(id="q", terms={"a": 1.0}, relevant_docs=frozenset({"d1"}),
                            topic_ranking=())
        prompt = SystemPrompt(action=SystemAction.RETURN_REQUEST, payload=None, utterance="")
        state = simulator_state(retrieve(QueryModel.from_terms(query.terms), corpus),
                                query.relevant_docs, 49)
        with pytest.raises(ValueError, match="does not match"):
            respond(SystemAction.RETURN_TOPIC, prompt, state, forced_bank(0), query,
                    corpus, 0.0, np.random.default_rng(0))


class TestRuleBased:
    def test_identical_inputs_give_identical_responses(self, synth):
        corpus, queries = synth
        query = queries[0]
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        first = rule_based_respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked),
                                   query, corpus, ranked)
        second = rule_based_respond(SystemAction.RETURN_DOCUMENTS, doc_prompt(ranked),
                                    query, corpus, ranked)
        assert first == second

    def test_request_returns_argmax_unused_term(self):
        counts = {f"d{i}": {"x": 1} for i in range(10)}
        counts["d0"] = {"x": 1, "big": 5, "small": 1}
        corpus = corpus_from_counts(counts)
        query = QueryRecord(id="q", terms={"x": 1.0}, relevant_docs=frozenset({"d0"}),
                            topic_ranking=())
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        prompt = SystemPrompt(action=SystemAction.RETURN_REQUEST, payload=None, utterance="")
        assert rule_based_respond(SystemAction.RETURN_REQUEST, prompt, query, corpus,
                                  ranked) == ProvideTerm("big")
        assert rule_based_respond(SystemAction.RETURN_REQUEST, prompt, query, corpus,
                                  ranked, given_terms={"big"}) == ProvideTerm("small")

    def test_exact_half_membership_answers_no(self):
        corpus = corpus_from_counts({"d1": {"t": 1, "a": 1}, "d2": {"a": 1}})
        query = QueryRecord(id="q", terms={"a": 1.0},
                            relevant_docs=frozenset({"d1", "d2"}), topic_ranking=())
        assert keyterm_membership("t", query.relevant_docs, corpus) == 0.5
        prompt = SystemPrompt(action=SystemAction.RETURN_KEYTERM, payload="t", utterance="")
        ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
        assert rule_based_respond(SystemAction.RETURN_KEYTERM, prompt, query, corpus,
                                  ranked) == YesNo(False)


class TestTermination:
    POLICY = TerminationPolicy()

    def test_threshold_reached_is_success(self):
        assert check_termination(0.61, 1, self.POLICY) == Outcome.SUCCESS

    def test_exhausted_turns_fail(self):
        assert check_termination(0.2, 5, self.POLICY) == Outcome.FAILURE

    def test_success_has_precedence_at_the_boundary(self):
        assert check_termination(0.7, 5, self.POLICY) == Outcome.SUCCESS

    def test_upcoming_turn_within_budget_continues(self):
        assert check_termination(0.59, 4, self.POLICY) == Outcome.CONTINUE

    def test_rewards(self):
        assert simulator_reward(Outcome.CONTINUE, self.POLICY) == 0.0
        assert simulator_reward(Outcome.SUCCESS, self.POLICY) == 30.0
        assert simulator_reward(Outcome.FAILURE, self.POLICY) == -30.0

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            TerminationPolicy(map_threshold=0.0)
        with pytest.raises(ValueError):
            TerminationPolicy(max_turns=0)
        with pytest.raises(ValueError):
            TerminationPolicy(failure_reward=5.0)


class TestBank:
    def test_requires_all_four_actions(self):
        with pytest.raises(ValueError):
            DecisionMakerBank({SystemAction.RETURN_DOCUMENTS:
                               constant_q_learner([0.0] * 4, input_dim=49)})

    def test_requires_four_way_heads(self):
        learners = {a: constant_q_learner([0.0] * 3, input_dim=49) for a in SystemAction}
        with pytest.raises(ValueError):
            DecisionMakerBank(learners)

    def test_create_shapes(self):
        bank = DecisionMakerBank.create(k=49, variant="dueling", hidden_dims=(8, 8),
                                        gamma=0.99, learning_rate=1e-3, sync_period=10,
                                        rng=np.random.default_rng(0))
        for action in SystemAction:
            assert bank[action].arch.input_dim == 49
            assert bank[action].arch.n_actions == 4
