"""Experiment orchestration: seed sweeps, caching, and aggregation.

Experts and demonstrations are cached on disk keyed by a hash of every input
that affects them, so repeated invocations retrain nothing and reproduce
byte-identical reports. Distillation cells are cheap and always recomputed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ExperimentConfig, config_hash
from .distill import Demonstration, sample_demonstrations
from .env import make_task_family
from .ppo import ExpertArtifact, train_expert
from .replay import EvalBundle, cpd_run
from .util import derive_seed, fnv1a64

CACHE_ENV_VAR = "CPD_CACHE_DIR"


@dataclass
class ScoreMatrix:
    """Per-experience x per-task mean z-rotation scores for one run cell."""

    scores: np.ndarray
    strategy: str
    capacity: int
    seed: int

    @property
    def n_experiences(self):
        return self.scores.shape[0]

    @property
    def n_tasks(self):
        return self.scores.shape[1]


def avg_seen_tasks(matrix: ScoreMatrix, experience_order=None) -> np.ndarray:
    """Row r -> mean score over the first r+1 tasks in encounter order."""
    scores = matrix.scores
    order = (list(range(scores.shape[1])) if experience_order is None
             else list(experience_order))
    if sorted(order) != list(range(scores.shape[1])):
        raise ValueError("experience_order must be a permutation of task columns")
    ordered = scores[:, order]
    return np.array([ordered[r, : r + 1].mean() for r in range(scores.shape[0])])


def forgetting(matrix: ScoreMatrix) -> np.ndarray:
    """Per task: best score over experiences minus the final score."""
    if matrix.n_experiences < 2:
        raise ValueError("forgetting needs at least two experiences")
    return matrix.scores.max(axis=0) - matrix.scores[-1]


@dataclass
class AggregateCell:
    """Cross-seed aggregate for one (strategy, capacity)."""

    strategy: str
    capacity: int
    mean_matrix: np.ndarray
    std_matrix: np.ndarray      # population std over the seed axis
    avg_seen: np.ndarray        # seed-mean of avg_seen_tasks
    overall_avg: float
    forgetting_mean: np.ndarray


@dataclass
class AggregateReport:
    config: ExperimentConfig
    cells: dict                 # (strategy, capacity) -> AggregateCell
    matrices: dict              # (strategy, capacity, seed) -> ScoreMatrix
    experts: dict               # (seed, object_id) -> ExpertArtifact
    failures: list = field(default_factory=list)

    @property
    def hash(self):
        return config_hash(self.config)


def cache_dir(config: ExperimentConfig) -> Path:
    override = os.environ.get(CACHE_ENV_VAR)
    root = Path(override) if override else Path(config.out_dir) / "cache"
    root.mkdir(parents=True, exist_ok=True)
    return root


def _family_key(config: ExperimentConfig) -> str:
    text = (f"family k={config.k} master_seed={config.master_seed} "
            f"noise={config.noise_scale!r} drop={config.drop_threshold!r}")
    return f"{fnv1a64(text.encode()):016x}"


def _expert_key(config: ExperimentConfig, object_id: int, seed: int) -> str:
    ppo = config.train_config(seed=0)
    ppo.seed = 0  # seed recorded separately below
    text = f"expert {_family_key(config)} {ppo} object={object_id} seed={seed}"
    return f"{fnv1a64(text.encode()):016x}"


def _demo_key(config: ExperimentConfig, object_id: int, seed: int) -> str:
    text = (f"demos {_expert_key(config, object_id, seed)} "
            f"episodes={config.demo_episodes} len={config.episode_length}")
    return f"{fnv1a64(text.encode()):016x}"


def get_family(config: ExperimentConfig):
    """Task family, persisted so every phase provably sees the same tasks."""
    path = cache_dir(config) / f"family_{_family_key(config)}.cpdf"
    if path.exists():
        specs, _ = artifacts.load_family(path)
        return specs
    specs = make_task_family(config.k, config.master_seed,
                             config.noise_scale, config.drop_threshold)
    artifacts.save_family(specs, config.master_seed, path)
    return specs


def get_expert(config: ExperimentConfig, spec, seed: int) -> ExpertArtifact:
    path = cache_dir(config) / f"expert_{_expert_key(config, spec.object_id, seed)}.cpda"
    if path.exists():
        return artifacts.load_expert(path)
    train_cfg = config.train_config(derive_seed(seed, "expert", spec.object_id))
    artifact = train_expert(spec, train_cfg)
    artifacts.save_expert(artifact, path)
    return artifacts.load_expert(path)  # hand out the persisted form


def get_demonstration(config: ExperimentConfig, expert: ExpertArtifact,
                      spec, seed: int) -> Demonstration:
    path = cache_dir(config) / f"demo_{_demo_key(config, spec.object_id, seed)}.cpdd"
    if path.exists():
        return artifacts.load_demonstration(path)
    demo = sample_demonstrations(
        expert.policy, expert.object_id, spec, config.demo_episodes,
        derive_seed(seed, "demos", spec.object_id), config.episode_length)
    artifacts.save_demonstration(demo, spec.object_id, path)
    return artifacts.load_demonstration(path)


def run_cell(config: ExperimentConfig, specs, demo_stream, strategy: str,
             capacity: int, seed: int) -> ScoreMatrix:
    """One (strategy, capacity, seed) CPD run scored on every task."""
    distill_cfg = config.distill_config(derive_seed(seed, "cpd", strategy, capacity))
    bundle = EvalBundle(
        specs=specs,
        n_episodes=config.cpd_eval_episodes,
        eval_seed=derive_seed(config.master_seed, seed, "cpd-eval") % 2**32,
        episode_length=config.episode_length,
    )
    result = cpd_run(demo_stream, strategy, capacity, distill_cfg, bundle)
    return ScoreMatrix(result.score_matrix, strategy, capacity, seed)


def aggregate(config: ExperimentConfig, matrices: dict) -> dict:
    """Cross-seed mean/std per (strategy, capacity)."""
    cells = {}
    pairs = sorted({(s, m) for (s, m, _seed) in matrices})
    for strategy, capacity in pairs:
        stack = np.stack([matrices[(strategy, capacity, seed)].scores
                          for seed in config.seeds])
        mean = stack.mean(axis=0)
        mean_sm = ScoreMatrix(mean, strategy, capacity, -1)
        seen = np.stack([
            avg_seen_tasks(matrices[(strategy, capacity, seed)])
            for seed in config.seeds
        ]).mean(axis=0)
        cells[(strategy, capacity)] = AggregateCell(
            strategy=strategy,
            capacity=capacity,
            mean_matrix=mean,
            std_matrix=stack.std(axis=0),
            avg_seen=seen,
            overall_avg=float(seen.mean()),
            forgetting_mean=forgetting(mean_sm) if mean.shape[0] >= 2 else np.zeros(mean.shape[1]),
        )
    return cells


def run_pipeline(config: ExperimentConfig, emit: bool = True) -> AggregateReport:
    """Train/load experts, sample demos, run every CPD cell, aggregate.

    Cell failures are recorded in the report (and a failure manifest on
    disk) without aborting the rest of the sweep.
    """
    from .report import emit_report  # cycle guard

    specs = get_family(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    experts, matrices, failures = {}, {}, []
    for seed in config.seeds:
        stream = []
        for spec in specs:
            expert = get_expert(config, spec, seed)
            experts[(seed, spec.object_id)] = expert
            stream.append(get_demonstration(config, expert, spec, seed))
        for strategy in config.strategies:
            # Naive and Cumulative do not consult M; run them once per seed
            capacities = ([max(config.buffer_sizes)]
                          if strategy in ("naive", "cumulative")
                          else config.buffer_sizes)
            for capacity in capacities:
                try:
                    matrices[(strategy, capacity, seed)] = run_cell(
                        config, specs, stream, strategy, capacity, seed)
                except Exception as err:
                    failures.append({"strategy": strategy, "capacity": capacity,
                                     "seed": seed, "error": str(err)})
    if failures:
        with open(out / "failures.json", "w") as fh:
            json.dump(failures, fh, indent=2)

    report = AggregateReport(
        config=config,
        cells=(aggregate(config, matrices) if not failures
               else _aggregate_partial(config, matrices)),
        matrices=matrices,
        experts=experts,
        failures=failures,
    )
    if emit:
        emit_report(report, out)
    return report


def _aggregate_partial(config: ExperimentConfig, matrices: dict) -> dict:
    """Aggregate only (strategy, capacity) pairs complete across all seeds."""
    pairs = sorted({(s, m) for (s, m, _seed) in matrices})
    full = {}
    for strategy, capacity in pairs:
        if all((strategy, capacity, seed) in matrices for seed in config.seeds):
            for seed in config.seeds:
                full[(strategy, capacity, seed)] = matrices[(strategy, capacity, seed)]
    return aggregate(config, full)
