import numpy as np
import pytest

from iscr.config import RunConfig
from iscr.corpus import QueryRecord
from iscr.cotrain import (DqnSimulator, EnvParams, RuleSimulator, TrainSchedule,
                          TrainingLoop, alternate_train, crossval, crossval_folds,
                          read_traces, replay_trace, run_episode, write_traces)
from iscr.features import FeatureConfig
from iscr.manager import SystemAction
from iscr.simulator import DecisionMakerBank, Outcome, TerminationPolicy

from conftest import corpus_from_counts
from test_dqn import constant_q_learner, make_learner
from test_simulator import forced_bank


def micro_env(**kwargs):
    defaults = dict(feature_config=FeatureConfig(n_raw=8), k_sim=8)
    defaults.update(kwargs)
    return EnvParams(**defaults)


def micro_manager(action=None, n_raw=8):
    width = FeatureConfig(n_raw=n_raw).dimension
    if action is None:
        return make_learner(input_dim=width, n_actions=4, hidden=(8, 8), seed=0)
    q = [0.0] * 4
    q[int(action)] = 1.0
    return constant_q_learner(q, input_dim=width)


class TestRunEpisode:
    def test_immediate_threshold_gives_one_turn_success(self):
        # the query term pins both relevant docs to the top: MAP = 1 after
        # first-pass retrieval, so the episode succeeds at the turn-1 check
        corpus = corpus_from_counts({"d1": {"hit": 5}, "d2": {"hit": 4},
                                     "d3": {"other": 9}, "d4": {"other": 3}})
        query = QueryRecord(id="q", terms={"hit": 1.0},
                            relevant_docs=frozenset({"d1", "d2"}), topic_ranking=())
        trace, _, _ = run_episode(query, corpus, micro_manager(SystemAction.RETURN_REQUEST),
                                  RuleSimulator(), micro_env(), np.random.default_rng(0))
        assert trace.outcome == Outcome.SUCCESS
        assert len(trace.turns) == 1

    def test_unhelpful_simulator_fails_at_the_turn_five_check(self):
        # key-term prompts answered NO about terms outside the query are
        # no-ops, so MAP never moves and the give-up path triggers
        corpus = corpus_from_counts({"d1": {"a": 1, "kt1": 2, "kt2": 2, "kt3": 2, "kt4": 2},
                                     "d2": {"a": 1}, "d3": {"a": 1},
                                     "d4": {"a": 1, "b": 3}},
                                    key_terms=("kt1", "kt2", "kt3", "kt4"))
        query = QueryRecord(id="q", terms={"a": 1.0}, relevant_docs=frozenset({"d4"}),
                            topic_ranking=())
        trace, _, _ = run_episode(query, corpus, micro_manager(SystemAction.RETURN_KEYTERM),
                                  RuleSimulator(), micro_env(), np.random.default_rng(0))
        assert trace.outcome == Outcome.FAILURE
        assert len(trace.turns) == TerminationPolicy().max_turns
        assert trace.simulator_return == TerminationPolicy().failure_reward

    def test_replaying_feedback_reproduces_map_sequence_exactly(self, synth):
        corpus, queries = synth
        env = EnvParams()
        rng = np.random.default_rng(17)
        manager = micro_manager(n_raw=49)
        bank = DecisionMakerBank.create(k=49, variant="vanilla", hidden_dims=(8, 8),
                                        gamma=0.99, learning_rate=1e-3, sync_period=10,
                                        rng=rng)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=3)
        for query in queries[:8]:
            trace, _, _ = run_episode(query, corpus, manager, DqnSimulator(bank), env,
                                      rng, manager_epsilon=0.7, simulator_epsilon=0.7)
            assert replay_trace(trace, query, corpus, env) == trace.map_sequence()

    def test_return_satisfies_equation_identity(self, synth):
        corpus, queries = synth
        env = EnvParams()
        rng = np.random.default_rng(18)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=4)
        for query in queries[:10]:
            trace, _, _ = run_episode(query, corpus, manager, RuleSimulator(), env, rng,
                                      manager_epsilon=1.0)
            costs = sum(env.costs.of(t.action) for t in trace.turns)
            telescoped = costs + env.lam * (trace.turns[-1].map_after - trace.initial_map)
            assert trace.manager_return == pytest.approx(telescoped, abs=1e-9)
            assert trace.manager_return == pytest.approx(
                sum(t.manager_reward for t in trace.turns), abs=1e-12)

    def test_simulator_return_is_pure_terminal_credit(self, synth):
        corpus, queries = synth
        env = EnvParams()
        rng = np.random.default_rng(19)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=5)
        policy = env.policy
        for query in queries[:10]:
            trace, _, _ = run_episode(query, corpus, manager, RuleSimulator(), env, rng,
                                      manager_epsilon=1.0)
            expected = (policy.success_reward if trace.outcome == Outcome.SUCCESS
                        else policy.failure_reward)
            assert trace.simulator_return == expected

    def test_experiences_routed_per_prompt_action(self, synth):
        corpus, queries = synth
        env = EnvParams()
        rng = np.random.default_rng(20)
        bank = DecisionMakerBank.create(k=49, variant="vanilla", hidden_dims=(8, 8),
                                        gamma=0.99, learning_rate=1e-3, sync_period=10,
                                        rng=rng)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=6)
        trace, m_exps, s_exps = run_episode(queries[0], corpus, manager,
                                            DqnSimulator(bank), env, rng, 1.0, 1.0)
        assert len(m_exps) == len(trace.turns)
        for action, exps in s_exps.items():
            assert len(exps) == sum(1 for t in trace.turns if t.prompt_action == action)

    def test_trace_round_trips_through_json(self, synth, tmp_path):
        corpus, queries = synth
        env = EnvParams()
        rng = np.random.default_rng(21)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=7)
        traces = [run_episode(q, corpus, manager, RuleSimulator(), env, rng, 1.0)[0]
                  for q in queries[:5]]
        write_traces(traces, tmp_path / "t.jsonl")
        loaded = read_traces(tmp_path / "t.jsonl")
        assert [t.to_dict() for t in loaded] == [t.to_dict() for t in traces]
        for orig, query in zip(loaded, queries[:5]):
            assert replay_trace(orig, query, corpus, env) == orig.map_sequence()


class TestPhases:
    def schedule(self, **kwargs):
        base = dict(c_updates=5, epochs=1, batch_size=8, replay_capacity=100)
        base.update(kwargs)
        return TrainSchedule(**base)

    def make_loop(self, synth, seed=0, trainable=True):
        corpus, queries = synth
        rng = np.random.default_rng(seed)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=seed)
        if trainable:
            bank = DecisionMakerBank.create(k=49, variant="vanilla", hidden_dims=(8, 8),
                                            gamma=0.99, learning_rate=1e-3,
                                            sync_period=10, rng=rng)
            simulator = DqnSimulator(bank)
        else:
            simulator = RuleSimulator()
        return TrainingLoop(corpus, queries, manager, simulator, EnvParams(),
                            self.schedule(), rng)

    def test_manager_phase_applies_exactly_c_updates_and_freezes_simulator(self, synth):
        loop = self.make_loop(synth)
        bank = loop.simulator.bank
        before = {a: {k: v.copy() for k, v in bank[a].online.params.items()}
                  for a in SystemAction}
        loop.manager_phase()
        assert loop.manager.train_steps == loop.schedule.c_updates
        for action in SystemAction:
            for name, value in bank[action].online.params.items():
                np.testing.assert_array_equal(value, before[action][name])

    def test_simulator_phase_applies_exactly_c_updates_and_freezes_manager(self, synth):
        loop = self.make_loop(synth)
        loop.manager_phase()
        before = {k: v.copy() for k, v in loop.manager.online.params.items()}
        loop.simulator_phase()
        bank = loop.simulator.bank
        total = sum(bank[a].train_steps for a in SystemAction)
        assert total == loop.schedule.c_updates
        for name, value in loop.manager.online.params.items():
            np.testing.assert_array_equal(value, before[name])

    def test_decision_makers_only_train_on_their_own_action(self, synth):
        loop = self.make_loop(synth)
        loop.manager_phase()
        loop.simulator_phase()
        bank = loop.simulator.bank
        for action in SystemAction:
            if bank[action].train_steps > 0:
                assert len(loop.sim_buffers[action]) >= loop.schedule.batch_size


class TestAlternateTrain:
    def test_reproducible_log_given_seed(self, synth):
        corpus, queries = synth

        def run():
            cfg = RunConfig.desk_preset(simulator_kind="dqn", seed=0, epochs=2, c_updates=5)
            rng = np.random.default_rng(0)
            manager = cfg.make_manager(rng)
            sim = cfg.make_simulator(rng)
            return alternate_train(corpus, queries[:10], queries[10:12], manager, sim,
                                   cfg.env_params(), cfg.schedule(), rng).to_tsv()

        assert run() == run()

    def test_unfillable_buffer_aborts_instead_of_hanging(self, synth):
        corpus, queries = synth
        rng = np.random.default_rng(0)
        manager = make_learner(input_dim=FeatureConfig().dimension, n_actions=4,
                               hidden=(8, 8), seed=0)
        # the phase cap allows ~650 episodes (~2600 experiences); a batch of
        # 4000 can never be filled
        schedule = TrainSchedule(c_updates=3, epochs=1, batch_size=4000,
                                 replay_capacity=4000)
        with pytest.raises(RuntimeError, match="replay buffer"):
            alternate_train(corpus, queries[:2], [], manager, RuleSimulator(),
                            EnvParams(), schedule, rng)


class TestCrossval:
    def test_163_queries_give_fold_sizes_16_or_17(self):
        folds = crossval_folds(163, 10, np.random.default_rng(0))
        sizes = sorted(len(f) for f in folds)
        assert set(sizes) <= {16, 17}
        assert sum(sizes) == 163

    def test_every_query_in_exactly_one_test_fold(self):
        folds = crossval_folds(163, 10, np.random.default_rng(1))
        seen = [i for fold in folds for i in fold]
        assert sorted(seen) == list(range(163))

    def test_fold_count_bounds(self):
        with pytest.raises(ValueError):
            crossval_folds(5, 6, np.random.default_rng(0))

    def test_micro_crossval_aggregates_fold_means(self, synth):
        corpus, queries = synth
        cfg = RunConfig.desk_preset(simulator_kind="rule", seed=0, epochs=1, c_updates=2)
        report = crossval(corpus, queries[:9], 3, cfg.make_manager, cfg.make_simulator,
                          cfg.env_params(), cfg.schedule(), seed=0)
        assert len(report["folds"]) == 3
        assert report["map"] == pytest.approx(
            np.mean([r["test_map"] for r in report["folds"]]), abs=1e-12)
        assert report["return"] == pytest.approx(
            np.mean([r["test_return"] for r in report["folds"]]), abs=1e-12)
