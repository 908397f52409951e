"""Operator entry points: gen, train, eval, compare, serve.

Everything is driven by one JSON config file; flags only pick the command,
the config path, and ad-hoc overrides.  Exit codes: 0 success, 1 usage,
2 data validation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .corpus import (CorpusFormatError, CorpusValidationError,
                     generate_synthetic_corpus, load_corpus)
from .cotrain import (alternate_train, crossval, crossval_folds, read_traces,
                      run_episode, write_traces, _evaluate)
from .dqn import CheckpointMismatch, QLearner, TrainingDiverged
from .evaluation import ActionDistribution, action_distribution, entropy, kl_divergence
from .manager import SystemAction
from .simulator import DecisionMakerBank

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key] = value
    if overrides:
        merged = json.loads(cfg.to_json())
        unknown = set(overrides) - RunConfig.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(overrides)
        cfg = RunConfig.from_dict(merged)
    return cfg


def _load_data(cfg: RunConfig):
    return load_corpus(cfg.corpus_path, cfg.query_path, cfg.topic_path,
                       cfg.key_term_path, cfg.one_best_equals_manual, cfg.n_key_terms)


def _split_queries(queries, cfg: RunConfig, rng: np.random.Generator):
    n_valid = max(1, int(len(queries) * cfg.valid_fraction))
    perm = rng.permutation(len(queries))
    valid = [queries[i] for i in perm[:n_valid]]
    train = [queries[i] for i in perm[n_valid:]]
    return train, valid


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out_dir = Path(cfg.corpus_path).parent
    paths = generate_synthetic_corpus(cfg.seed, cfg.synth_docs, cfg.synth_queries,
                                      cfg.synth_topics, out_dir)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    corpus, queries = _load_data(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save_resolved(out)

    if cfg.crossval_folds:
        report = crossval(corpus, queries, cfg.crossval_folds,
                          cfg.make_manager, cfg.make_simulator,
                          cfg.env_params(), cfg.schedule(), cfg.seed)
        (out / "crossval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
        print(f"crossval ({cfg.crossval_folds} folds): "
              f"MAP {report['map']:.4f}  Return {report['return']:.2f}")
        return EXIT_OK

    rng = np.random.default_rng(cfg.seed)
    train_queries, valid_queries = _split_queries(queries, cfg, rng)
    manager = cfg.make_manager(rng)
    simulator = cfg.make_simulator(rng)
    log = alternate_train(corpus, train_queries, valid_queries, manager, simulator,
                          cfg.env_params(), cfg.schedule(), rng)
    (out / "learning_curve.tsv").write_text(log.to_tsv(), encoding="utf-8")
    manager.save(out / "manager.npz")
    if simulator.trainable:
        for action in SystemAction:
            simulator.bank[action].save(out / f"sim_{action.name.lower()}.npz")
    print(f"trained {cfg.epochs} epochs; best valid return {log.best_valid_return:.2f} "
          f"at epoch {log.best_epoch}; outputs in {out}")
    return EXIT_OK


def _load_agents(cfg: RunConfig, run_dir: Path):
    manager = QLearner.load(run_dir / "manager.npz",
                            expect=cfg.make_manager(np.random.default_rng(0)).arch)
    simulator = cfg.make_simulator(np.random.default_rng(cfg.seed))
    if simulator.trainable:
        expect = cfg.make_simulator(np.random.default_rng(0)).bank[SystemAction.RETURN_DOCUMENTS].arch
        learners = {}
        for action in SystemAction:
            path = run_dir / f"sim_{action.name.lower()}.npz"
            learners[action] = QLearner.load(path, expect=expect)
        simulator.bank = DecisionMakerBank(learners)
    return manager, simulator


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    corpus, queries = _load_data(cfg)
    run_dir = Path(cfg.output_dir)
    manager, simulator = _load_agents(cfg, run_dir)
    rng = np.random.default_rng(cfg.seed)

    k = cfg.crossval_folds or 10
    folds = crossval_folds(len(queries), k, np.random.default_rng(cfg.seed))
    rows = []
    all_traces = []
    for f, fold in enumerate(folds):
        fold_queries = [queries[i] for i in fold]
        mean_return, mean_map, traces = _evaluate(fold_queries, corpus, manager,
                                                  simulator, cfg.env_params(), rng)
        rows.append({"fold": f, "map": mean_map, "return": mean_return,
                     "n_queries": len(fold)})
        all_traces.extend(traces)

    report = {"simulator": cfg.simulator_kind, "manager_variant": cfg.manager_variant,
              "simulator_variant": cfg.simulator_variant, "feature_mode": cfg.feature_mode,
              "folds": rows,
              "map": float(np.mean([r["map"] for r in rows])),
              "return": float(np.mean([r["return"] for r in rows]))}
    (run_dir / "eval_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    write_traces(all_traces, run_dir / "traces.jsonl")
    _write_humaneval_tasks(all_traces, corpus, run_dir / "humaneval_tasks.jsonl")
    print(f"{'fold':>4} {'MAP':>8} {'Return':>9}")
    for r in rows:
        print(f"{r['fold']:>4} {r['map']:8.4f} {r['return']:9.2f}")
    print(f"{'mean':>4} {report['map']:8.4f} {report['return']:9.2f}")
    return EXIT_OK


def _write_humaneval_tasks(traces, corpus, path, limit: int = 50) -> None:
    """Tasks for the behavioral study: states with >= 4 retrieved relevant docs."""
    tasks = []
    for trace in traces:
        for turn in trace.turns:
            if len(turn.top_relevant) < 4:
                continue
            tasks.append({"task_id": f"task{len(tasks):04d}",
                          "query_id": trace.query_id, "turn": turn.turn,
                          "sim_state": list(turn.sim_state),
                          "candidates": list(turn.top_relevant[:4])})
            if len(tasks) >= limit:
                break
        if len(tasks) >= limit:
            break
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task, sort_keys=True) + "\n")


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    corpus, queries = _load_data(cfg)
    run_dir = Path(cfg.output_dir)
    traces = read_traces(run_dir / "traces.jsonl")
    rng = np.random.default_rng(cfg.seed)

    scenarios = [np.array(turn.sim_state, dtype=float)
                 for trace in traces for turn in trace.turns
                 if len(turn.top_relevant) >= 4]
    if not scenarios:
        print("no logged states with 4 retrieved relevant candidates", file=sys.stderr)
        return EXIT_DATA

    distributions: dict[str, ActionDistribution] = {}
    distributions["rule"] = action_distribution(lambda s, r: 0, scenarios, 1, rng)

    _, simulator = _load_agents(cfg, run_dir)
    if simulator.trainable:
        learner = simulator.bank[SystemAction.RETURN_DOCUMENTS]
        distributions["ours"] = action_distribution(
            lambda s, r: learner.act(s, 0.0, r), scenarios, cfg.compare_samples, rng)

    if cfg.human_choices_path and Path(cfg.human_choices_path).exists():
        counts = [0, 0, 0, 0]
        with open(cfg.human_choices_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    counts[json.loads(line)["choice_index"]] += 1
        if sum(counts) > 0:
            distributions["human"] = ActionDistribution.from_counts(counts)

    names = sorted(distributions)
    report = {"entropy": {name: entropy(dist) for name, dist in distributions.items()},
              "kl": {f"{a}/{b}": kl_divergence(distributions[a], distributions[b])
                     for a in names for b in names if a != b},
              "n_scenarios": len(scenarios)}
    (run_dir / "compare.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    print("entropy:", "  ".join(f"{k}={v:.4f}" for k, v in sorted(report["entropy"].items())))
    for pair, value in sorted(report["kl"].items()):
        print(f"KL({pair}) = {value:.4f}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_service
    cfg = _load_config(args)
    corpus, queries = _load_data(cfg)
    run_dir = Path(cfg.output_dir)
    manager, _ = _load_agents(cfg, run_dir)
    app = build_service(corpus, queries, manager, cfg)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="iscr",
                                     description="interactive spoken-content retrieval workflows")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gen", cmd_gen), ("train", cmd_train), ("eval", cmd_eval),
                     ("compare", cmd_compare), ("serve", cmd_serve)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to the JSON run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (value parsed as JSON when possible)")
        p.set_defaults(fn=fn)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, CorpusValidationError, CheckpointMismatch, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
