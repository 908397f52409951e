"""Run configuration: one flat JSON file drives every command.

Unknown keys are rejected so typos fail loudly, and every run writes its
fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cotrain import DqnSimulator, EnvParams, RuleSimulator, TrainSchedule
from .dqn import QLearner
from .features import FeatureConfig
from .manager import ActionCost, SystemAction
from .retrieval import FeedbackParams
from .simulator import DecisionMakerBank, TerminationPolicy


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data files
    corpus_path: str = "data/corpus.jsonl"
    query_path: str = "data/queries.jsonl"
    topic_path: Optional[str] = "data/topics.jsonl"
    key_term_path: Optional[str] = None
    one_best_equals_manual: bool = False
    n_key_terms: int = 50
    # synthetic corpus generation
    synth_docs: int = 200
    synth_queries: int = 30
    synth_topics: int = 6
    # run identity
    output_dir: str = "runs/out"
    seed: int = 0
    # agents
    simulator_kind: str = "dqn"        # rule | dqn
    manager_variant: str = "vanilla"   # vanilla | double | dueling
    simulator_variant: str = "vanilla"
    feature_mode: str = "raw"          # raw | human_raw
    # dimensions / networks
    n_raw: int = 49
    k_sim: int = 49
    pool_depth: int = 10
    hidden_dims: list = field(default_factory=lambda: [1024, 1024])
    gamma: float = 0.99
    learning_rate: float = 8e-4
    sync_period: int = 100
    # training schedule
    epochs: int = 20
    c_updates: int = 500
    episodes_per_update: int = 1
    batch_size: int = 256
    replay_capacity: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.2
    frozen_epsilon: float = 0.05
    valid_fraction: float = 0.2
    crossval_folds: Optional[int] = None
    # retrieval / feedback
    smoothing: float = 0.5
    em_background: float = 0.5
    alpha: float = 0.5
    beta: float = 0.3
    alpha_topic: float = 0.3
    em_max_iters: int = 30
    em_tol: float = 1e-6
    retrieval_depth: Optional[int] = None
    page_size: int = 10
    # rewards / termination
    lam: float = 100.0
    action_costs: dict = field(default_factory=lambda: {
        "return_documents": -1.0, "return_keyterm": -1.0,
        "return_request": -1.0, "return_topic": -1.0})
    map_threshold: float = 0.6
    max_turns: int = 4
    success_reward: float = 30.0
    failure_reward: float = -30.0
    # behavioral comparison / service
    compare_samples: int = 1
    humaneval_tasks_path: Optional[str] = None
    human_choices_path: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8000
    session_idle_minutes: float = 30.0

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    @classmethod
    def desk_preset(cls, **overrides) -> "RunConfig":
        """Small-profile settings for tests and the desk-scale acceptance runs."""
        base = dict(hidden_dims=[64, 64], batch_size=32, replay_capacity=2000,
                    c_updates=50, epochs=20, sync_period=25,
                    synth_docs=200, synth_queries=30, synth_topics=6)
        base.update(overrides)
        return cls.from_dict(base)

    def validate(self) -> None:
        if self.simulator_kind not in ("rule", "dqn"):
            raise ConfigError(f"simulator_kind must be rule|dqn, got {self.simulator_kind!r}")
        for name in ("manager_variant", "simulator_variant"):
            if getattr(self, name) not in ("vanilla", "double", "dueling"):
                raise ConfigError(f"{name} must be vanilla|double|dueling")
        if self.feature_mode not in ("raw", "human_raw"):
            raise ConfigError("feature_mode must be raw|human_raw")
        expected = {a.name.lower() for a in SystemAction}
        if set(self.action_costs) != expected:
            raise ConfigError(f"action_costs must have exactly the keys {sorted(expected)}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    def save_resolved(self, directory: str | Path) -> Path:
        path = Path(directory) / "resolved_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    # -- derived objects ----------------------------------------------------

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(mode=self.feature_mode, n_raw=self.n_raw,
                             pool_depth=self.pool_depth, smoothing=self.smoothing,
                             max_turns=self.max_turns)

    def feedback_params(self) -> FeedbackParams:
        return FeedbackParams(smoothing=self.smoothing, em_background=self.em_background,
                              alpha=self.alpha, beta=self.beta, alpha_topic=self.alpha_topic,
                              em_max_iters=self.em_max_iters, em_tol=self.em_tol)

    def costs(self) -> ActionCost:
        return ActionCost(costs={SystemAction[k.upper()]: float(v)
                                 for k, v in self.action_costs.items()})

    def policy(self) -> TerminationPolicy:
        return TerminationPolicy(map_threshold=self.map_threshold, max_turns=self.max_turns,
                                 success_reward=self.success_reward,
                                 failure_reward=self.failure_reward)

    def env_params(self) -> EnvParams:
        return EnvParams(feature_config=self.feature_config(),
                         feedback=self.feedback_params(), costs=self.costs(),
                         policy=self.policy(), lam=self.lam, k_sim=self.k_sim,
                         retrieval_depth=self.retrieval_depth, page_size=self.page_size)

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(c_updates=self.c_updates, epochs=self.epochs,
                             episodes_per_update=self.episodes_per_update,
                             batch_size=self.batch_size, replay_capacity=self.replay_capacity,
                             eps_start=self.eps_start, eps_end=self.eps_end,
                             eps_decay_fraction=self.eps_decay_fraction,
                             frozen_epsilon=self.frozen_epsilon)

    def make_manager(self, rng: np.random.Generator) -> QLearner:
        return QLearner(input_dim=self.feature_config().dimension, n_actions=4,
                        variant=self.manager_variant, hidden_dims=tuple(self.hidden_dims),
                        gamma=self.gamma, learning_rate=self.learning_rate,
                        sync_period=self.sync_period, rng=rng)

    def make_simulator(self, rng: np.random.Generator):
        if self.simulator_kind == "rule":
            return RuleSimulator()
        bank = DecisionMakerBank.create(k=self.k_sim, variant=self.simulator_variant,
                                        hidden_dims=tuple(self.hidden_dims),
                                        gamma=self.gamma, learning_rate=self.learning_rate,
                                        sync_period=self.sync_period, rng=rng)
        return DqnSimulator(bank)
