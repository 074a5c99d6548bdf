"""Bounded exemplar buffers and the sequential distillation loop.

A stream of expert demonstrations arrives in chronological order; after each
arrival the buffer is re-subsampled by the active strategy (episodes are the
exemplar unit), the student continues training on the buffer contents, and it
is then scored on every task. Naive (no retention) and Cumulative (unbounded)
are the reference baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distill import Demonstration, DistillConfig, distill_train
from .env import ACT_DIM, ObjectSpec
from .net import Policy, default_actor_arch
from .ppo import evaluate_policy
from .util import derive_seed

STRATEGIES = ("naive", "cumulative", "replay_br", "replay_ex", "replay_rp", "replay_rpr")
REPLAY_STRATEGIES = ("replay_br", "replay_ex", "replay_rp", "replay_rpr")


@dataclass
class Slot:
    experience_index: int   # position in the stream, 0-based
    ordinal: int            # episode position within its demonstration
    episode: object         # DemoEpisode


@dataclass
class ExperienceBuffer:
    capacity: int
    strategy: str
    slots: list = field(default_factory=list)
    n_seen: int = 0
    rng: np.random.Generator = None

    @classmethod
    def create(cls, capacity: int, strategy: str, seed: int):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        return cls(capacity=capacity, strategy=strategy,
                   rng=np.random.default_rng(derive_seed(seed, "buffer", strategy)))

    def slot_counts(self) -> dict:
        """Retained episode count per source experience."""
        counts: dict[int, int] = {}
        for s in self.slots:
            counts[s.experience_index] = counts.get(s.experience_index, 0) + 1
        return counts

    def episodes(self):
        return [s.episode for s in self.slots]


def _as_slots(demo: Demonstration, experience_index: int):
    return [Slot(experience_index, j, ep) for j, ep in enumerate(demo.episodes)]


def _subsample(slots, k, rng):
    """Uniform subsample without replacement, preserving original order."""
    if k >= len(slots):
        return list(slots)
    idx = np.sort(rng.choice(len(slots), size=k, replace=False))
    return [slots[i] for i in idx]


def _br_quotas(capacity, n_experiences):
    """floor(M/N) per experience, remainder to the earliest experiences."""
    base, rem = divmod(capacity, n_experiences)
    return [base + (1 if i < rem else 0) for i in range(n_experiences)]


def update_replay_br(buffer: ExperienceBuffer, new_demo: Demonstration):
    """Experience-balanced retention; each experience only ever shrinks."""
    if new_demo.count == 0:
        raise ValueError("empty demonstration")
    i = buffer.n_seen
    groups = {}
    for s in buffer.slots:
        groups.setdefault(s.experience_index, []).append(s)
    groups[i] = _as_slots(new_demo, i)
    buffer.n_seen += 1
    quotas = _br_quotas(buffer.capacity, buffer.n_seen)
    new_slots = []
    for exp_idx in sorted(groups):
        new_slots.extend(_subsample(groups[exp_idx], quotas[exp_idx], buffer.rng))
    buffer.slots = new_slots
    return buffer


def update_replay_ex(buffer: ExperienceBuffer, new_demo: Demonstration):
    """Uniform subsampling of old buffer and new experience.

    The i-th arrival gets max(1, floor(M/i)) slots; the old buffer is
    uniformly squeezed (source-blind) into the remainder.
    """
    if new_demo.count == 0:
        raise ValueError("empty demonstration")
    i = buffer.n_seen + 1
    new_slots = _as_slots(new_demo, buffer.n_seen)
    if i == 1:
        buffer.slots = _subsample(new_slots, buffer.capacity, buffer.rng)
    else:
        quota_new = min(max(1, buffer.capacity // i), len(new_slots))
        kept_old = _subsample(buffer.slots, buffer.capacity - quota_new, buffer.rng)
        buffer.slots = kept_old + _subsample(new_slots, quota_new, buffer.rng)
    buffer.n_seen = i
    return buffer


def _rp_sort_key(slot: Slot):
    # highest reward first; ties: newer experience, then earlier ordinal
    return (-slot.episode.episodic_reward, -slot.experience_index, slot.ordinal)


def update_replay_rp(buffer: ExperienceBuffer, new_demo: Demonstration):
    """Keep the highest-episodic-reward episodes across buffer + new demo."""
    if new_demo.count == 0:
        raise ValueError("empty demonstration")
    pool = buffer.slots + _as_slots(new_demo, buffer.n_seen)
    buffer.n_seen += 1
    buffer.slots = sorted(pool, key=_rp_sort_key)[: buffer.capacity]
    return buffer


def reservoir_keys(rewards: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """u^(1/w) keys for reward-weighted sampling without replacement.

    Weights are rewards shifted to be strictly positive (min-subtraction plus
    a scale-aware epsilon), so negative episodic rewards are valid. Keys are
    returned in log space, ln(u)/w, which orders identically to u^(1/w) but
    does not underflow when every weight is tiny.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    eps = 1e-6 * max(1.0, abs(float(rewards.min())))
    weights = (rewards - rewards.min()) + eps
    u = rng.uniform(0.0, 1.0, size=rewards.size)
    return np.log(np.maximum(u, np.finfo(np.float64).tiny)) / weights


def update_replay_rpr(buffer: ExperienceBuffer, new_demo: Demonstration):
    """Reward-weighted reservoir sampling over buffer + new demo."""
    if new_demo.count == 0:
        raise ValueError("empty demonstration")
    pool = buffer.slots + _as_slots(new_demo, buffer.n_seen)
    buffer.n_seen += 1
    if len(pool) <= buffer.capacity:
        buffer.slots = pool
        return buffer
    keys = reservoir_keys([s.episode.episodic_reward for s in pool], buffer.rng)
    keep = np.sort(np.argsort(-keys, kind="stable")[: buffer.capacity])
    buffer.slots = [pool[i] for i in keep]
    return buffer


def update_buffer(buffer: ExperienceBuffer, new_demo: Demonstration):
    """Dispatch one arrival to the buffer's strategy."""
    if buffer.strategy == "naive":
        # no retention and no capacity bound: train on the new demo alone
        buffer.slots = _as_slots(new_demo, buffer.n_seen)
        buffer.n_seen += 1
        return buffer
    if buffer.strategy == "cumulative":
        buffer.slots = buffer.slots + _as_slots(new_demo, buffer.n_seen)
        buffer.n_seen += 1
        return buffer
    return {
        "replay_br": update_replay_br,
        "replay_ex": update_replay_ex,
        "replay_rp": update_replay_rp,
        "replay_rpr": update_replay_rpr,
    }[buffer.strategy](buffer, new_demo)


@dataclass
class EvalBundle:
    """Everything needed to score a student on every task."""

    specs: list               # ObjectSpec per task
    n_episodes: int
    eval_seed: int
    episode_length: int = 100


@dataclass
class CpdRunResult:
    student: Policy
    score_matrix: np.ndarray   # (n_experiences, n_tasks) mean z-rotation
    buffer_trace: list         # slot_counts() after each experience
    loss_curves: list          # distillation loss curve per experience


def cpd_run(demo_stream, strategy: str, capacity: int,
            distill_config: DistillConfig, eval_bundle: EvalBundle) -> CpdRunResult:
    """Sequentially distill a demonstration stream into one student."""
    if not demo_stream:
        raise ValueError("demonstration stream is empty")
    first = demo_stream[0].episodes[0]
    obs_dim = first.observations.shape[1]
    student = Policy.init(default_actor_arch(obs_dim, ACT_DIM),
                          derive_seed(distill_config.seed, "student"))
    buffer = ExperienceBuffer.create(capacity, strategy, distill_config.seed)
    rows, trace, curves = [], [], []
    for exp_idx, demo in enumerate(demo_stream):
        try:
            update_buffer(buffer, demo)
            student, curve = distill_train(student, buffer.episodes(), distill_config)
            row = [evaluate_policy(student, spec, eval_bundle.n_episodes,
                                   eval_bundle.eval_seed,
                                   eval_bundle.episode_length).mean_z_rotation
                   for spec in eval_bundle.specs]
        except Exception as err:
            raise RuntimeError(f"CPD failed at experience {exp_idx}") from err
        trace.append(buffer.slot_counts())
        curves.append(curve)
        rows.append(row)
    return CpdRunResult(
        student=student,
        score_matrix=np.array(rows),
        buffer_trace=trace,
        loss_curves=curves,
    )
