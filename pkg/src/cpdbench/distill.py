"""Offline expert demonstrations and supervised policy distillation.

Demonstrations are whole stochastic-rollout episodes (the replay strategies
need episodic rewards); distillation flattens whatever episodes it is given
into (observation, action) pairs and fits the student under one of three
losses: squared error on the mean, negative log-likelihood, or Gaussian KL
against a near-deterministic expert distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import IPHI, ObjectSpec, env_reset, env_step, observe
from .net import (
    AdamState,
    GaussianHead,
    Policy,
    adam_step,
    gaussian_log_prob,
    net_backward,
    net_forward,
)
from .util import derive_seed

DEFAULT_EXPERT_SIGMA = 1e-6


@dataclass
class DemoEpisode:
    observations: np.ndarray   # (T, obs_dim)
    actions: np.ndarray        # (T, act_dim)
    episodic_reward: float
    z_rotation: float
    source_object_id: int
    episode_seed: int

    def __post_init__(self):
        if len(self.observations) == 0:
            raise ValueError("demo episode must contain at least one step")

    def __len__(self):
        return len(self.observations)


@dataclass
class Demonstration:
    episodes: list
    expert_id: int

    @property
    def count(self):
        return len(self.episodes)


@dataclass
class DistillConfig:
    loss: str = "kl"            # mse | nll | kl
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    expert_sigma: float = DEFAULT_EXPERT_SIGMA

    def validate(self):
        if self.loss not in ("mse", "nll", "kl"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.expert_sigma <= 0:
            raise ValueError("expert_sigma must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def sample_demonstrations(expert_policy: Policy, expert_id: int, spec: ObjectSpec,
                          n_episodes: int, seed: int,
                          episode_length: int = 100) -> Demonstration:
    """Roll out the stochastic expert and record whole episodes.

    Episode seeds are seed + index, so any episode can be replayed through a
    fresh env for verification.
    """
    if expert_id != spec.object_id:
        raise ValueError(
            f"expert {expert_id} does not match object {spec.object_id}")
    action_rng = np.random.default_rng(derive_seed(seed, "demo-actions"))
    episodes = []
    for ep in range(n_episodes):
        episode_seed = seed + ep
        state = env_reset(spec, episode_seed, episode_length)
        obs_rows, act_rows = [], []
        total = 0.0
        done = False
        while not done:
            obs = observe(state)
            action = expert_policy.sample_action(obs, action_rng)
            _, _, r, done = env_step(state, action)
            obs_rows.append(obs)
            act_rows.append(action)
            total += r
        episodes.append(DemoEpisode(
            observations=np.array(obs_rows),
            actions=np.array(act_rows),
            episodic_reward=total,
            z_rotation=float(state.pose[IPHI]),
            source_object_id=spec.object_id,
            episode_seed=episode_seed,
        ))
    return Demonstration(episodes=episodes, expert_id=expert_id)


def loss_mse(student_mean: np.ndarray, expert_action: np.ndarray) -> float:
    """Squared Euclidean distance between predicted mean and expert action."""
    d = np.asarray(student_mean, dtype=np.float64) - np.asarray(expert_action, dtype=np.float64)
    return float(np.sum(d * d))


def loss_nll(head: GaussianHead, expert_action: np.ndarray) -> float:
    return -float(gaussian_log_prob(head, expert_action))


def expert_as_deterministic(expert_action: np.ndarray, expert_sigma: float):
    """Treat a sampled expert action as a near-deterministic Gaussian."""
    if expert_sigma <= 0:
        raise ValueError("expert_sigma must be positive")
    a = np.asarray(expert_action, dtype=np.float64)
    return a, np.full_like(a, expert_sigma)


def loss_kl(student, expert) -> float:
    """Per-dimension Gaussian KL in the student->expert direction, summed.

    log(sigma*/sigma) + (sigma^2 + (mu - mu*)^2) / (2 sigma*^2) - 1/2 per dim.
    """
    mu, sigma = (np.asarray(v, dtype=np.float64) for v in student)
    mu_star, sigma_star = (np.asarray(v, dtype=np.float64) for v in expert)
    if np.any(sigma <= 0) or np.any(sigma_star <= 0):
        raise ValueError("standard deviations must be positive")
    per_dim = (np.log(sigma_star / sigma)
               + (sigma * sigma + (mu - mu_star) ** 2) / (2.0 * sigma_star * sigma_star)
               - 0.5)
    return float(np.sum(per_dim))


def _batch_loss_and_grads(policy: Policy, obs, acts, config: DistillConfig):
    """Mean loss over the batch plus exact gradients w.r.t. theta and log_std."""
    batch = obs.shape[0]
    mean, cache = net_forward(policy.arch, policy.theta, obs)
    diff = mean - acts
    sigma = np.exp(policy.log_std)

    if config.loss == "mse":
        loss = float(np.mean(np.sum(diff * diff, axis=-1)))
        g_mean = 2.0 * diff / batch
        g_logstd = np.zeros_like(policy.log_std)
    elif config.loss == "nll":
        z = diff / sigma
        loss = float(np.mean(np.sum(
            0.5 * z * z + policy.log_std + 0.5 * np.log(2 * np.pi), axis=-1)))
        g_mean = (z / sigma) / batch
        g_logstd = np.sum(1.0 - z * z, axis=0) / batch
    else:  # kl
        s_star = config.expert_sigma
        per_dim = (np.log(s_star) - policy.log_std
                   + (sigma * sigma + diff * diff) / (2.0 * s_star * s_star) - 0.5)
        loss = float(np.mean(np.sum(per_dim, axis=-1)))
        g_mean = (diff / (s_star * s_star)) / batch
        g_logstd = (-1.0 + sigma * sigma / (s_star * s_star)) * np.ones_like(policy.log_std)
    g_theta = net_backward(policy.arch, policy.theta, cache, g_mean)
    return loss, np.concatenate([g_theta, g_logstd])


def flatten_demos(demos) -> tuple:
    """All (observation, action) pairs across a list of Demonstrations/episodes."""
    episodes = []
    for d in demos:
        episodes.extend(d.episodes if isinstance(d, Demonstration) else [d])
    if not episodes:
        raise ValueError("no demonstration episodes to train on")
    obs = np.concatenate([e.observations for e in episodes])
    acts = np.concatenate([e.actions for e in episodes])
    return obs, acts


def distill_train(student: Policy, demos, config: DistillConfig):
    """Minibatch gradient descent on the chosen loss over all demo pairs.

    Returns (trained Policy, per-epoch mean loss curve).
    """
    config.validate()
    obs, acts = flatten_demos(demos)
    if obs.shape[1] != student.obs_dim:
        raise ValueError("student input dim does not match demonstrations")
    rng = np.random.default_rng(derive_seed(config.seed, "distill-shuffle"))
    adam = AdamState.fresh(student.flat().size, learning_rate=config.learning_rate)
    n = obs.shape[0]
    curve = []
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo: lo + config.batch_size]
            loss, grad = _batch_loss_and_grads(student, obs[idx], acts[idx], config)
            if not np.isfinite(loss):
                raise ArithmeticError(
                    f"non-finite {config.loss} loss during distillation")
            adam, flat = adam_step(adam, student.flat(), grad,
                                   log_std_dims=student.act_dim)
            student = student.with_flat(flat)
            epoch_losses.append(loss)
        curve.append(float(np.mean(epoch_losses)))
    return student, curve
