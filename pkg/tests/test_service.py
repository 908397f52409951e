import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from iscr.config import RunConfig
from iscr.corpus import load_corpus
from iscr.cotrain import EnvParams, replay_trace, EpisodeTrace, TurnRecord
from iscr.manager import SystemAction
from iscr.service import build_service
from iscr.simulator import term_ranking

from test_dqn import constant_q_learner

UTTERANCE_PREFIXES = ("Please view the list", "Is it related to",
                      "Please provide more information", "Which topic is related")


def make_config(tmp_path, synth_paths, **overrides):
    base = dict(corpus_path=str(synth_paths["corpus"]),
                query_path=str(synth_paths["queries"]),
                topic_path=str(synth_paths["topics"]),
                output_dir=str(tmp_path), n_raw=49, k_sim=49)
    base.update(overrides)
    return RunConfig.desk_preset(**base)


def forced_manager(action):
    q = [0.0] * 4
    q[int(action)] = 1.0
    from iscr.features import FeatureConfig
    return constant_q_learner(q, input_dim=FeatureConfig().dimension)


@pytest.fixture()
def client(tmp_path, synth_paths, synth):
    corpus, queries = synth
    cfg = make_config(tmp_path, synth_paths)
    manager = forced_manager(SystemAction.RETURN_REQUEST)
    app = build_service(corpus, queries, manager, cfg)
    return TestClient(app)


class TestSessionLifecycle:
    def test_create_with_known_query_id(self, client):
        res = client.post("/api/v1/sessions", json={"query_id": "q000"})
        assert res.status_code == 200
        body = res.json()
        assert body["status"] == "active"
        assert any(body["prompt"]["utterance"].startswith(p) for p in UTTERANCE_PREFIXES)
        assert body["map"] is not None
        assert len(body["ranking"]) > 0

    def test_unknown_query_id_is_404(self, client):
        assert client.post("/api/v1/sessions", json={"query_id": "zzz"}).status_code == 404

    def test_empty_query_text_is_validation_error(self, client):
        assert client.post("/api/v1/sessions", json={"query_text": "  "}).status_code == 422

    def test_free_text_query_retrieves(self, client, synth):
        corpus, _ = synth
        term = corpus.vocabulary[0]
        res = client.post("/api/v1/sessions", json={"query_text": term})
        assert res.status_code == 200
        body = res.json()
        assert body["judged"] is False
        assert len(body["ranking"]) > 0

    def test_out_of_vocabulary_free_text_rejected(self, client):
        res = client.post("/api/v1/sessions", json={"query_text": "qqqqxyzz"})
        assert res.status_code == 422

    def test_concurrent_sessions_are_independent(self, client):
        a = client.post("/api/v1/sessions", json={"query_id": "q000"}).json()
        b = client.post("/api/v1/sessions", json={"query_id": "q001"}).json()
        assert a["session_id"] != b["session_id"]
        client.post(f"/api/v1/sessions/{a['session_id']}/respond",
                    json={"response": {"type": "provide_term", "term": "nope"}})
        again = client.get(f"/api/v1/sessions/{b['session_id']}").json()
        assert again["turn"] == 0 and again["status"] == "active"

    def test_models_endpoint_describes_checkpoint(self, client):
        body = client.get("/api/v1/models").json()
        assert body["manager"]["n_actions"] == 4


class TestResponding:
    def test_variant_mismatch_names_expected_type(self, client):
        sid = client.post("/api/v1/sessions", json={"query_id": "q000"}).json()["session_id"]
        res = client.post(f"/api/v1/sessions/{sid}/respond",
                          json={"response": {"type": "yes_no", "yes": True}})
        assert res.status_code == 422
        assert "provide_term" in res.json()["detail"]

    def test_good_answers_reach_success_and_replay_matches(self, client, synth):
        corpus, queries = synth
        query = queries[0]
        # informative terms: the score ranking minus the unrecognizable ones
        terms = [t for t in term_ranking(query.relevant_docs, corpus)
                 if "jargon" not in t][:4]
        sid = client.post("/api/v1/sessions", json={"query_id": query.id}).json()["session_id"]
        responses = []
        body = None
        for term in terms:
            payload = {"type": "provide_term", "term": term}
            res = client.post(f"/api/v1/sessions/{sid}/respond", json={"response": payload})
            assert res.status_code == 200
            responses.append(payload)
            body = res.json()
            if body["status"] != "active":
                break
        assert body["status"] == "success"
        summary = body["summary"]
        assert summary["outcome"] == "success"
        assert summary["map_history"][-1] >= 0.6

        # the persisted MAP trajectory must replay exactly through retrieval
        env = EnvParams()
        turns = [TurnRecord(turn=i + 1, manager_state=[], action=SystemAction.RETURN_REQUEST,
                            prompt_action=SystemAction.RETURN_REQUEST, prompt_payload=None,
                            utterance="", sim_state=[], sim_choice=None, top_relevant=[],
                            response=r, map_before=0.0, map_after=0.0,
                            manager_reward=0.0, simulator_reward=0.0)
                 for i, r in enumerate(responses)]
        trace = EpisodeTrace(query_id=query.id, initial_map=summary["map_history"][0],
                             turns=turns, outcome="success", manager_return=0.0,
                             simulator_return=0.0)
        assert replay_trace(trace, query, corpus, env) == summary["map_history"]

    def test_stalled_session_fails_at_max_turns(self, client, synth):
        corpus, queries = synth
        sid = client.post("/api/v1/sessions", json={"query_id": "q000"}).json()["session_id"]
        body = None
        for turn in range(4):
            res = client.post(f"/api/v1/sessions/{sid}/respond",
                              json={"response": {"type": "provide_term", "term": "qq"}})
            assert res.status_code == 200
            body = res.json()
        assert body["status"] == "failure"
        assert body["summary"]["turns"] == 4

    def test_responding_to_terminated_session_conflicts(self, client):
        sid = client.post("/api/v1/sessions", json={"query_id": "q000"}).json()["session_id"]
        client.post(f"/api/v1/sessions/{sid}/respond",
                    json={"response": {"type": "terminate", "success": False}})
        res = client.post(f"/api/v1/sessions/{sid}/respond",
                          json={"response": {"type": "provide_term", "term": "x"}})
        assert res.status_code == 409

    def test_user_terminate_sets_outcome(self, client):
        sid = client.post("/api/v1/sessions", json={"query_id": "q002"}).json()["session_id"]
        body = client.post(f"/api/v1/sessions/{sid}/respond",
                           json={"response": {"type": "terminate", "success": True}}).json()
        assert body["status"] == "success"

    def test_idle_session_becomes_abandoned(self, tmp_path, synth_paths, synth):
        corpus, queries = synth
        cfg = make_config(tmp_path, synth_paths, session_idle_minutes=0.0)
        app = build_service(corpus, queries, forced_manager(SystemAction.RETURN_REQUEST), cfg)
        local = TestClient(app)
        sid = local.post("/api/v1/sessions", json={"query_id": "q000"}).json()["session_id"]
        assert local.get(f"/api/v1/sessions/{sid}").json()["status"] == "abandoned"

    def test_session_log_is_appended(self, tmp_path, synth_paths, synth):
        corpus, queries = synth
        cfg = make_config(tmp_path, synth_paths)
        app = build_service(corpus, queries, forced_manager(SystemAction.RETURN_REQUEST), cfg)
        local = TestClient(app)
        local.post("/api/v1/sessions", json={"query_id": "q000"})
        lines = (tmp_path / "sessions.log.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["event"] == "create"


class TestPromptPayloads:
    @pytest.mark.parametrize("action,key", [
        (SystemAction.RETURN_DOCUMENTS, "documents"),
        (SystemAction.RETURN_KEYTERM, "key_term"),
        (SystemAction.RETURN_REQUEST, "utterance"),
        (SystemAction.RETURN_TOPIC, "topics"),
    ])
    def test_payload_matches_action(self, tmp_path, synth_paths, synth, action, key):
        corpus, queries = synth
        cfg = make_config(tmp_path, synth_paths)
        app = build_service(corpus, queries, forced_manager(action), cfg)
        body = TestClient(app).post("/api/v1/sessions", json={"query_id": "q000"}).json()
        prompt = body["prompt"]
        assert prompt["action"] == action.name.lower()
        assert key in prompt
        if action == SystemAction.RETURN_TOPIC:
            assert len(prompt["topics"]) == 4


def humaneval_fixture(tmp_path, synth_paths, synth, n_tasks=3):
    corpus, queries = synth
    tasks_path = tmp_path / "tasks.jsonl"
    with open(tasks_path, "w", encoding="utf-8") as fh:
        for i in range(n_tasks):
            query = queries[i]
            from iscr.retrieval import QueryModel, retrieve
            ranked = retrieve(QueryModel.from_terms(query.terms), corpus)
            top4 = [d for d in ranked.doc_ids() if d in query.relevant_docs][:4]
            fh.write(json.dumps({"task_id": f"task{i:04d}", "query_id": query.id,
                                 "sim_state": [], "candidates": top4}) + "\n")
    cfg = make_config(tmp_path, synth_paths, humaneval_tasks_path=str(tasks_path))
    app = build_service(corpus, queries, forced_manager(SystemAction.RETURN_REQUEST), cfg)
    return TestClient(app)


class TestHumanEval:
    def test_every_task_serves_four_candidates(self, tmp_path, synth_paths, synth):
        client = humaneval_fixture(tmp_path, synth_paths, synth)
        task = client.get("/api/v1/humaneval/task", params={"subject_id": "s1"}).json()
        assert task["done"] is False
        assert len(task["candidates"]) == 4

    def test_out_of_range_choice_rejected(self, tmp_path, synth_paths, synth):
        client = humaneval_fixture(tmp_path, synth_paths, synth)
        res = client.post("/api/v1/humaneval/choice",
                          json={"subject_id": "s1", "task_id": "task0000",
                                "choice_index": 5})
        assert res.status_code == 422

    def test_duplicate_submission_conflicts_but_token_retry_is_idempotent(
            self, tmp_path, synth_paths, synth):
        client = humaneval_fixture(tmp_path, synth_paths, synth)
        payload = {"subject_id": "s1", "task_id": "task0000", "choice_index": 1,
                   "token": "tok-1"}
        assert client.post("/api/v1/humaneval/choice", json=payload).status_code == 200
        assert client.post("/api/v1/humaneval/choice", json=payload).status_code == 200
        payload["token"] = "tok-2"
        assert client.post("/api/v1/humaneval/choice", json=payload).status_code == 409
        assert client.get("/api/v1/humaneval/distribution").json()["n_samples"] == 1

    def test_flow_until_done_and_pooled_distribution(self, tmp_path, synth_paths, synth):
        client = humaneval_fixture(tmp_path, synth_paths, synth, n_tasks=3)
        submitted = 0
        for subject in ("s1", "s2"):
            while True:
                task = client.get("/api/v1/humaneval/task",
                                  params={"subject_id": subject}).json()
                if task["done"]:
                    assert task["completed"] == 3
                    break
                res = client.post("/api/v1/humaneval/choice",
                                  json={"subject_id": subject, "task_id": task["task_id"],
                                        "choice_index": submitted % 4})
                assert res.status_code == 200
                submitted += 1
        dist = client.get("/api/v1/humaneval/distribution").json()
        assert dist["n_samples"] == submitted == 6
        assert sum(dist["counts"]) == 6
        assert abs(sum(dist["probabilities"]) - 1.0) < 1e-9


class TestConcurrency:
    def test_parallel_session_creation_yields_independent_sessions(self, client):
        from concurrent.futures import ThreadPoolExecutor

        def create(query_id):
            return client.post("/api/v1/sessions", json={"query_id": query_id}).json()

        with ThreadPoolExecutor(max_workers=8) as pool:
            views = list(pool.map(create, [f"q{i:03d}" for i in range(8)]))
        ids = {v["session_id"] for v in views}
        assert len(ids) == 8
        # mutate half of them in parallel; the others must stay untouched
        def respond(view):
            return client.post(f"/api/v1/sessions/{view['session_id']}/respond",
                               json={"response": {"type": "provide_term", "term": "x"}})
        with ThreadPoolExecutor(max_workers=4) as pool:
            list(pool.map(respond, views[:4]))
        for view in views[4:]:
            body = client.get(f"/api/v1/sessions/{view['session_id']}").json()
            assert body["turn"] == 0 and body["status"] == "active"
        for view in views[:4]:
            body = client.get(f"/api/v1/sessions/{view['session_id']}").json()
            assert body["turn"] == 1


class TestModelIsolation:
    def test_service_never_mutates_the_given_manager(self, tmp_path, synth_paths, synth):
        import numpy as np
        corpus, queries = synth
        cfg = make_config(tmp_path, synth_paths)
        manager = forced_manager(SystemAction.RETURN_REQUEST)
        before = {k: v.copy() for k, v in manager.online.params.items()}
        app = build_service(corpus, queries, manager, cfg)
        local = TestClient(app)
        sid = local.post("/api/v1/sessions", json={"query_id": "q000"}).json()["session_id"]
        for _ in range(2):
            local.post(f"/api/v1/sessions/{sid}/respond",
                       json={"response": {"type": "provide_term", "term": "common00"}})
        for name, value in manager.online.params.items():
            np.testing.assert_array_equal(value, before[name])
