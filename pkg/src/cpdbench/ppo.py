"""PPO expert training on the rotation task family.

Clipped-surrogate PPO with GAE, parallel (interleaved) environments, periodic
deterministic-mean evaluation, and checkpoint selection by best eval score
with a stability tie-break on the smoothed training curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import ACT_DIM, IPHI, ObjectSpec, env_reset, env_step, observe
from .net import (
    AdamState,
    GaussianHead,
    NetArch,
    Policy,
    adam_step,
    default_actor_arch,
    default_critic_arch,
    gaussian_entropy,
    gaussian_log_prob,
    net_backward,
    net_forward,
    net_init,
)
from .util import derive_seed, moving_average

SMOOTH_WINDOW = 20          # episodes, for training-curve smoothing
STABILITY_TAIL = 0.2        # fraction of the smoothed curve scored for stability
ELIGIBILITY_BAND = 0.05     # checkpoints within 5% of best eval score compete


@dataclass
class TrainConfig:
    total_steps: int = 100_000
    n_envs: int = 5
    n_steps_per_update: int = 2048
    epochs: int = 10
    minibatch_size: int = 256
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    eval_every_episodes: int = 100
    eval_episodes: int = 10
    episode_length: int = 100
    learning_rate: float = 3e-4
    seed: int = 0

    def validate(self):
        for name in ("total_steps", "n_envs", "n_steps_per_update", "epochs",
                     "minibatch_size", "eval_every_episodes", "eval_episodes",
                     "episode_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        for name in ("gamma", "gae_lambda"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class RolloutBuffer:
    obs: np.ndarray        # (T, N, obs_dim)
    actions: np.ndarray    # (T, N, act_dim)
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray    # (T, N)
    values: np.ndarray     # (T, N)
    dones: np.ndarray      # (T, N) bool, True = episode ended at this step
    bootstrap: np.ndarray  # (N,) value of the state after the last step

    @property
    def n_samples(self):
        return self.obs.shape[0] * self.obs.shape[1]


@dataclass
class EpisodeRecord:
    total_reward: float
    z_rotation: float
    length: int


def _critic_value(critic_arch, critic_params, obs):
    out, _ = net_forward(critic_arch, critic_params, obs)
    return out[..., 0]


def collect_rollouts(actor: Policy, critic_arch: NetArch, critic_params: np.ndarray,
                     envs: list, n_steps: int, rng: np.random.Generator,
                     episode_log: list | None = None) -> RolloutBuffer:
    """Advance every env n_steps, auto-resetting finished episodes.

    Completed episodes are appended to episode_log as EpisodeRecords.
    """
    if not envs:
        raise ValueError("need at least one environment")
    n = len(envs)
    obs = np.stack([observe(e) for e in envs])
    if obs.shape[1] != actor.obs_dim:
        raise ValueError("actor input dim does not match observations")
    ep_reward = np.array([0.0] * n)
    all_obs, all_act, all_logp, all_rew, all_val, all_done = [], [], [], [], [], []
    for _ in range(n_steps):
        mean, _ = net_forward(actor.arch, actor.theta, obs)
        head = GaussianHead(mean, actor.log_std)
        noise = rng.standard_normal(mean.shape)
        actions = mean + np.exp(actor.log_std) * noise
        log_probs = gaussian_log_prob(head, actions)
        values = _critic_value(critic_arch, critic_params, obs)

        rewards = np.empty(n)
        dones = np.zeros(n, dtype=bool)
        next_obs = np.empty_like(obs)
        for i, e in enumerate(envs):
            _, o, r, d = env_step(e, actions[i])
            rewards[i] = r
            dones[i] = d
            ep_reward[i] += r
            if d:
                if episode_log is not None:
                    episode_log.append(EpisodeRecord(
                        total_reward=float(ep_reward[i]),
                        z_rotation=float(e.pose[IPHI]),
                        length=e.step_index,
                    ))
                ep_reward[i] = 0.0
                envs[i] = env_reset(e.spec, int(rng.integers(0, 2**62)),
                                    e.episode_length)
                o = observe(envs[i])
            next_obs[i] = o

        all_obs.append(obs)
        all_act.append(actions)
        all_logp.append(log_probs)
        all_rew.append(rewards)
        all_val.append(values)
        all_done.append(dones)
        obs = next_obs

    bootstrap = _critic_value(critic_arch, critic_params, obs)
    return RolloutBuffer(
        obs=np.stack(all_obs),
        actions=np.stack(all_act),
        log_probs=np.stack(all_logp),
        rewards=np.stack(all_rew),
        values=np.stack(all_val),
        dones=np.stack(all_done),
        bootstrap=bootstrap,
    )


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Generalized advantage estimation over (T,) or (T, N) arrays.

    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards/values/dones must share a shape")
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
        bootstrap = np.atleast_1d(np.asarray(bootstrap, dtype=np.float64))
    t_steps = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    next_adv = np.zeros(rewards.shape[1])
    for t in range(t_steps - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


@dataclass
class PpoStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_fraction: float


def ppo_loss(actor: Policy, critic_arch: NetArch, critic_params: np.ndarray,
             obs, actions, old_log_probs, advantages, returns, config: TrainConfig):
    """Full clipped-surrogate loss and its exact gradients.

    Returns (loss, actor_grad, critic_grad, stats) where actor_grad covers
    [theta, log_std] and all gradients are of the minimized objective.
    """
    batch = obs.shape[0]
    mean, cache = net_forward(actor.arch, actor.theta, obs)
    std = np.exp(actor.log_std)
    z = (actions - mean) / std
    log_probs = np.sum(-0.5 * z * z - actor.log_std - 0.5 * np.log(2 * np.pi), axis=-1)
    ratio = np.exp(log_probs - old_log_probs)

    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * advantages
    surrogate = np.minimum(unclipped, clipped)
    policy_loss = -float(np.mean(surrogate))

    # gradient flows only through samples where the unclipped branch is active
    active = unclipped <= clipped
    dloss_dlogp = np.where(active, -advantages * ratio, 0.0) / batch

    g_mean = dloss_dlogp[:, None] * (z / std)
    g_logstd = np.sum(dloss_dlogp[:, None] * (z * z - 1.0), axis=0)

    entropy = gaussian_entropy(actor.log_std)
    g_logstd = g_logstd - config.entropy_coef * np.ones_like(actor.log_std)

    v, v_cache = net_forward(critic_arch, critic_params, obs)
    v = v[:, 0]
    v_err = v - returns
    value_loss = float(np.mean(v_err * v_err))
    g_v = (config.value_coef * 2.0 * v_err / batch)[:, None]

    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    actor_grad = np.concatenate([
        net_backward(actor.arch, actor.theta, cache, g_mean),
        g_logstd,
    ])
    critic_grad = net_backward(critic_arch, critic_params, v_cache, g_v)
    stats = PpoStats(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        mean_ratio=float(np.mean(ratio)),
        clip_fraction=float(np.mean(ratio != np.clip(
            ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon))),
    )
    return loss, actor_grad, critic_grad, stats


def ppo_update(actor: Policy, critic_arch: NetArch, critic_params: np.ndarray,
               adam_actor: AdamState, adam_critic: AdamState,
               buffer: RolloutBuffer, config: TrainConfig,
               rng: np.random.Generator):
    """Multiple epochs of shuffled minibatch updates over one rollout buffer.

    Returns (actor, critic_params, adam_actor, adam_critic, stats, ok).
    A non-finite loss aborts the whole update and keeps the incoming params.
    """
    adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones,
                           buffer.bootstrap, config.gamma, config.gae_lambda)
    obs = buffer.obs.reshape(-1, buffer.obs.shape[-1])
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    old_logp = buffer.log_probs.ravel()
    adv = adv.ravel()
    ret = ret.ravel()
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)

    start_actor, start_critic = actor, critic_params
    start_adam_a, start_adam_c = adam_actor, adam_critic
    n = obs.shape[0]
    last_stats = None
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo: lo + config.minibatch_size]
            loss, ga, gc, stats = ppo_loss(
                actor, critic_arch, critic_params,
                obs[idx], actions[idx], old_logp[idx], adv[idx], ret[idx], config)
            if not np.isfinite(loss):
                return (start_actor, start_critic, start_adam_a, start_adam_c,
                        last_stats, False)
            adam_actor, flat = adam_step(adam_actor, actor.flat(), ga,
                                         log_std_dims=actor.act_dim)
            actor = actor.with_flat(flat)
            adam_critic, critic_params = adam_step(adam_critic, critic_params, gc)
            last_stats = stats
    return actor, critic_params, adam_actor, adam_critic, last_stats, True


@dataclass
class EvalResult:
    mean_z_rotation: float
    mean_episodic_reward: float
    episodes: list  # of EpisodeRecord


def evaluate_policy(actor: Policy, spec: ObjectSpec, n_episodes: int,
                    eval_seed: int, episode_length: int = 100) -> EvalResult:
    """Deterministic-mean rollouts; episode seeds are eval_seed + index."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    records = []
    for ep in range(n_episodes):
        state = env_reset(spec, eval_seed + ep, episode_length)
        total = 0.0
        done = False
        while not done:
            action = actor.mean_action(observe(state))
            _, _, r, done = env_step(state, action)
            total += r
        records.append(EpisodeRecord(total, float(state.pose[IPHI]), state.step_index))
    return EvalResult(
        mean_z_rotation=float(np.mean([r.z_rotation for r in records])),
        mean_episodic_reward=float(np.mean([r.total_reward for r in records])),
        episodes=records,
    )


@dataclass
class ExpertArtifact:
    policy: Policy
    object_id: int
    best_eval_score: float
    training_curve: list          # EpisodeRecords in completion order
    config: TrainConfig
    eval_history: list = field(default_factory=list)  # (episode_count, score)
    diverged: bool = False


def _stability(episode_rewards) -> float:
    """Criterion-(ii) stability: negative std of the smoothed curve's tail."""
    if len(episode_rewards) < 2:
        return 0.0
    smoothed = moving_average(episode_rewards, SMOOTH_WINDOW)
    tail = smoothed[int(len(smoothed) * (1.0 - STABILITY_TAIL)):]
    if tail.size < 2:
        tail = smoothed
    return -float(np.std(tail))


def train_expert(spec: ObjectSpec, config: TrainConfig) -> ExpertArtifact:
    """Full PPO run with periodic evaluation and best-checkpoint retention."""
    config.validate()
    obs_dim = spec.obs_dim
    actor = Policy.init(default_actor_arch(obs_dim, ACT_DIM),
                        derive_seed(config.seed, "actor"))
    critic_arch = default_critic_arch(obs_dim)
    critic_params = net_init(critic_arch, derive_seed(config.seed, "critic"))
    adam_a = AdamState.fresh(actor.flat().size, learning_rate=config.learning_rate)
    adam_c = AdamState.fresh(critic_params.size, learning_rate=config.learning_rate)

    rollout_rng = np.random.default_rng(derive_seed(config.seed, "rollout"))
    update_rng = np.random.default_rng(derive_seed(config.seed, "update"))
    eval_seed = derive_seed(config.seed, "eval") % 2**32

    envs = [env_reset(spec, int(rollout_rng.integers(0, 2**62)), config.episode_length)
            for _ in range(config.n_envs)]

    curve: list[EpisodeRecord] = []
    eval_history = []
    checkpoints = []  # (score, stability, Policy)
    diverged = False
    consecutive_failures = 0
    next_eval_at = config.eval_every_episodes

    def run_eval():
        result = evaluate_policy(actor, spec, config.eval_episodes, eval_seed,
                                 config.episode_length)
        eval_history.append((len(curve), result.mean_z_rotation))
        checkpoints.append((
            result.mean_z_rotation,
            _stability([r.total_reward for r in curve]),
            Policy(actor.arch, actor.theta.copy(), actor.log_std.copy()),
        ))

    window = config.n_envs * config.n_steps_per_update
    n_updates = config.total_steps // window
    for _update in range(n_updates):
        buffer = collect_rollouts(actor, critic_arch, critic_params, envs,
                                  config.n_steps_per_update, rollout_rng,
                                  episode_log=curve)
        actor, critic_params, adam_a, adam_c, _stats, ok = ppo_update(
            actor, critic_arch, critic_params, adam_a, adam_c, buffer,
            config, update_rng)
        if not ok:
            consecutive_failures += 1
            if consecutive_failures >= 2:
                diverged = True
                break
        else:
            consecutive_failures = 0
        while len(curve) >= next_eval_at:
            run_eval()
            next_eval_at += config.eval_every_episodes

    run_eval()  # final policy always competes

    best_score = max(c[0] for c in checkpoints)
    band = abs(best_score) * ELIGIBILITY_BAND
    eligible = [c for c in checkpoints if c[0] >= best_score - band]
    score, _stab, policy = max(eligible, key=lambda c: (c[1], c[0]))
    return ExpertArtifact(
        policy=policy,
        object_id=spec.object_id,
        best_eval_score=score,
        training_curve=curve,
        config=config,
        eval_history=eval_history,
        diverged=diverged,
    )
