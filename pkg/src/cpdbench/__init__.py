"""Continual policy distillation workbench.

Train per-task PPO experts on a synthetic object-rotation family, sample
offline demonstrations, distill them sequentially into one student under a
bounded replay buffer, and benchmark replay strategies and buffer sizes.
"""

from .env import ObjectSpec, make_task_family
from .net import NetArch, Policy
from .ppo import TrainConfig, train_expert, evaluate_policy
from .distill import DistillConfig, Demonstration, sample_demonstrations, distill_train
from .replay import ExperienceBuffer, EvalBundle, cpd_run
from .config import ExperimentConfig, parse_config, emit_config
from .pipeline import run_pipeline, ScoreMatrix, avg_seen_tasks, forgetting

__all__ = [
    "ObjectSpec", "make_task_family",
    "NetArch", "Policy",
    "TrainConfig", "train_expert", "evaluate_policy",
    "DistillConfig", "Demonstration", "sample_demonstrations", "distill_train",
    "ExperienceBuffer", "EvalBundle", "cpd_run",
    "ExperimentConfig", "parse_config", "emit_config",
    "run_pipeline", "ScoreMatrix", "avg_seen_tasks", "forgetting",
]
