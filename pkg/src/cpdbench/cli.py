"""Command-line front end.

Subcommands mirror the pipeline phases: train-experts, sample-demos, cpd
(one strategy/buffer/seed cell), report (full sweep + CSV/figure emission),
and verify (artifact file validation).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .artifacts import ArtifactError, verify_file
from .config import ConfigError, parse_config_file
from .pipeline import (
    get_demonstration,
    get_expert,
    get_family,
    run_cell,
    run_pipeline,
)
from .replay import STRATEGIES
from .report import write_score_matrix
from .config import config_hash


def _load_config(path):
    try:
        return parse_config_file(path)
    except ConfigError as err:
        for problem in err.errors:
            print(f"config error: {problem}", file=sys.stderr)
        raise SystemExit(2)


def cmd_train_experts(args):
    config = _load_config(args.config)
    specs = get_family(config)
    for seed in config.seeds:
        for spec in specs:
            artifact = get_expert(config, spec, seed)
            print(f"seed {seed} task {spec.object_id}: "
                  f"best eval z-rotation {artifact.best_eval_score:.2f} deg"
                  + (" [diverged]" if artifact.diverged else ""))


def cmd_sample_demos(args):
    config = _load_config(args.config)
    specs = get_family(config)
    for seed in config.seeds:
        for spec in specs:
            expert = get_expert(config, spec, seed)
            demo = get_demonstration(config, expert, spec, seed)
            rewards = [ep.episodic_reward for ep in demo.episodes]
            print(f"seed {seed} task {spec.object_id}: {demo.count} episodes, "
                  f"mean episodic reward {sum(rewards) / len(rewards):.2f}")


def cmd_cpd(args):
    config = _load_config(args.config)
    specs = get_family(config)
    stream = []
    for spec in specs:
        expert = get_expert(config, spec, args.seed)
        stream.append(get_demonstration(config, expert, spec, args.seed))
    matrix = run_cell(config, specs, stream, args.strategy, args.buffer, args.seed)
    path = write_score_matrix(Path(config.out_dir), matrix, config_hash(config))
    print(f"score matrix written to {path}")
    for r in range(matrix.n_experiences):
        row = " ".join(f"{v:8.2f}" for v in matrix.scores[r])
        print(f"exp {r}: {row}")


def cmd_report(args):
    config = _load_config(args.config)
    report = run_pipeline(config)
    print(f"report written to {config.out_dir} (config hash {report.hash})")
    if report.failures:
        print(f"{len(report.failures)} cell(s) failed; see failures.json",
              file=sys.stderr)
        raise SystemExit(1)


def cmd_verify(args):
    try:
        info = verify_file(args.file)
    except (ArtifactError, OSError) as err:
        print(f"INVALID: {err}", file=sys.stderr)
        raise SystemExit(1)
    print(f"OK: {info['kind']} artifact, {info['bytes']} bytes")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cpdbench",
        description="Continual policy distillation benchmark workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-experts", help="train/load per-task PPO experts")
    p.add_argument("config")
    p.set_defaults(func=cmd_train_experts)

    p = sub.add_parser("sample-demos", help="sample expert demonstrations")
    p.add_argument("config")
    p.set_defaults(func=cmd_sample_demos)

    p = sub.add_parser("cpd", help="run one continual-distillation cell")
    p.add_argument("config")
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--buffer", required=True, type=int, metavar="M")
    p.add_argument("--seed", required=True, type=int)
    p.set_defaults(func=cmd_cpd)

    p = sub.add_parser("report", help="full sweep + CSV/figure report")
    p.add_argument("config")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="validate any artifact file")
    p.add_argument("file")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
