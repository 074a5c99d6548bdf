"""Synthetic object-rotation task family.

Each task is a linear response system with per-object gain/coupling matrices:
the 8-dim action produces a 6-dim pose delta (x, y, z, phi, psi, theta, angles
in degrees), plus Gaussian noise. The reward pays 1000 per degree of
counter-clockwise z-rotation and penalizes every other pose change, and an
episode fails ("drop") when the object drifts too far in the x/y plane.
Everything is deterministic given (spec, episode_seed, actions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSE_DIM = 6
ACT_DIM = 8

# pose vector layout
IX, IY, IZ, IPHI, IPSI, ITHETA = range(6)

DROP_PENALTY = -100.0
DEFAULT_EPISODE_LENGTH = 100

# per-axis gain scales: strong phi response, weaker nuisance axes
_GAIN_ROW_SCALE = np.array([0.05, 0.05, 0.05, 0.30, 0.10, 0.10])


@dataclass
class ObjectSpec:
    """One task's dynamics: action -> pose-delta response."""

    object_id: int
    n_objects: int
    gain: np.ndarray          # (6, 8)
    coupling: np.ndarray      # (6, 6)
    noise_scale: float
    drop_threshold: float
    seed_base: int

    @property
    def obs_dim(self):
        return POSE_DIM + ACT_DIM + self.n_objects

    def response(self):
        """Effective action -> pose-delta map (coupling @ gain)."""
        return self.coupling @ self.gain


def make_task_family(
    k: int,
    master_seed: int,
    noise_scale: float = 0.02,
    drop_threshold: float = 15.0,
    min_gain_distance: float = 0.5,
) -> list:
    """K deterministic ObjectSpecs with pairwise-distinct gain matrices."""
    if k < 1:
        raise ValueError(f"need at least one task, got k={k}")
    if noise_scale >= drop_threshold:
        raise ValueError("noise_scale must be smaller than drop_threshold")
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0xFA]))

    def draw_gain():
        g = rng.standard_normal((POSE_DIM, ACT_DIM)) * _GAIN_ROW_SCALE[:, None]
        while not np.any(g[IPHI] > 0.0):
            g[IPHI] = rng.standard_normal(ACT_DIM) * _GAIN_ROW_SCALE[IPHI]
        return g

    gains = []
    for _ in range(k):
        for _attempt in range(1000):
            g = draw_gain()
            if all(np.linalg.norm(g - h) >= min_gain_distance for h in gains):
                gains.append(g)
                break
        else:
            raise RuntimeError(
                f"could not draw {k} gain matrices at pairwise distance "
                f">= {min_gain_distance} in 1000 attempts"
            )

    specs = []
    for i, g in enumerate(gains):
        coupling = np.eye(POSE_DIM) + 0.1 * rng.standard_normal((POSE_DIM, POSE_DIM))
        specs.append(
            ObjectSpec(
                object_id=i,
                n_objects=k,
                gain=g,
                coupling=coupling,
                noise_scale=noise_scale,
                drop_threshold=drop_threshold,
                seed_base=int(rng.integers(0, 2**62)),
            )
        )
    return specs


@dataclass
class EnvState:
    spec: ObjectSpec
    pose: np.ndarray
    prev_pose: np.ndarray
    prev_action: np.ndarray
    step_index: int
    episode_length: int
    rng: np.random.Generator
    done: bool = False


def env_reset(spec: ObjectSpec, episode_seed: int, episode_length: int = DEFAULT_EPISODE_LENGTH) -> EnvState:
    """Fresh episode: all-zero pose, noise stream seeded from (spec, episode_seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed_base, int(episode_seed)]))
    return EnvState(
        spec=spec,
        pose=np.zeros(POSE_DIM),
        prev_pose=np.zeros(POSE_DIM),
        prev_action=np.zeros(ACT_DIM),
        step_index=0,
        episode_length=episode_length,
        rng=rng,
    )


def observe(state: EnvState) -> np.ndarray:
    """Current pose, previous action, one-hot object id."""
    one_hot = np.zeros(state.spec.n_objects)
    one_hot[state.spec.object_id] = 1.0
    return np.concatenate([state.pose, state.prev_action, one_hot])


def reward_fn(prev: np.ndarray, curr: np.ndarray) -> float:
    """1000*dphi - |dpsi| - |dtheta| - |dx| - |dy| (no z term)."""
    d = curr - prev
    return float(
        1000.0 * d[IPHI] - abs(d[IPSI]) - abs(d[ITHETA]) - abs(d[IX]) - abs(d[IY])
    )


def env_step(state: EnvState, action: np.ndarray):
    """Advance one step in place. Returns (state, observation, reward, done)."""
    if state.done:
        raise RuntimeError("env_step called on a finished episode")
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    noise = state.spec.noise_scale * state.rng.standard_normal(POSE_DIM)
    delta = state.spec.coupling @ (state.spec.gain @ a) + noise
    state.prev_pose = state.pose
    state.pose = state.pose + delta
    state.prev_action = a
    state.step_index += 1
    reward = reward_fn(state.prev_pose, state.pose)
    dropped = abs(state.pose[IX]) + abs(state.pose[IY]) > state.spec.drop_threshold
    if dropped:
        reward += DROP_PENALTY
    state.done = dropped or state.step_index >= state.episode_length
    return state, observe(state), reward, state.done


def episode_z_rotation(phi_trace) -> float:
    """Net z-rotation in degrees over an episode's phi trace (incl. initial)."""
    phis = np.asarray(phi_trace, dtype=np.float64)
    if phis.size < 2:
        raise ValueError("episode must contain at least one step")
    return float(phis[-1] - phis[0])
