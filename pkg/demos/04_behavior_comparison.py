"""Behavioral comparison of user simulators: KL divergence and entropy.

Trains a small joint system, collects document-choice scenarios from greedy
evaluation episodes, and compares the rank-choice distributions of the
rule-based user, the trained user, and a synthetic stand-in for pooled human
choices.  The rule-based row has entropy exactly zero because it always
answers the same way.
"""

import tempfile
from pathlib import Path

import numpy as np

from iscr.config import RunConfig
from iscr.corpus import generate_synthetic_corpus, load_corpus
from iscr.cotrain import alternate_train, run_episode
from iscr.evaluation import (ActionDistribution, action_distribution, entropy,
                             kl_divergence)
from iscr.manager import SystemAction

workdir = Path(tempfile.mkdtemp(prefix="iscr-demo-"))
paths = generate_synthetic_corpus(seed=0, n_docs=200, n_queries=30, n_topics=6,
                                  out_dir=workdir)
corpus, queries = load_corpus(paths["corpus"], paths["queries"], paths["topics"])

cfg = RunConfig.desk_preset(simulator_kind="dqn", seed=0, epochs=8)
rng = np.random.default_rng(cfg.seed)
manager = cfg.make_manager(rng)
simulator = cfg.make_simulator(rng)
print("training a joint system (8 epochs)...")
alternate_train(corpus, queries[:24], queries[24:], manager, simulator,
                cfg.env_params(), cfg.schedule(), rng)

print("collecting document-choice scenarios from greedy episodes...")
scenarios = []
for query in queries:
    trace, _, _ = run_episode(query, corpus, manager, simulator, cfg.env_params(), rng)
    scenarios.extend(np.array(t.sim_state, dtype=float)
                     for t in trace.turns if len(t.top_relevant) >= 4)
print(f"{len(scenarios)} scenarios with four relevant candidates")

learner = simulator.bank[SystemAction.RETURN_DOCUMENTS]
distributions = {
    "rule": action_distribution(lambda s, r: 0, scenarios, 1, rng),
    "ours": action_distribution(lambda s, r: learner.act(s, 0.0, r), scenarios, 1, rng),
    # stand-in for a pooled human panel: mostly deep picks with some spread
    "human": ActionDistribution(("1st", "2nd", "3rd", "4th"), (0.15, 0.2, 0.35, 0.3)),
}

print(f"\n{'':8s}" + "".join(f"{label:>10s}" for label in ("1st", "2nd", "3rd", "4th"))
      + f"{'entropy':>10s}")
for name, dist in distributions.items():
    row = "".join(f"{p:>10.3f}" for p in dist.probabilities)
    print(f"{name:8s}{row}{entropy(dist):>10.4f}")

print("\npairwise KL divergence:")
for a in distributions:
    for b in distributions:
        if a != b:
            print(f"  KL({a}/{b}) = {kl_divergence(distributions[a], distributions[b]):.4f}")
