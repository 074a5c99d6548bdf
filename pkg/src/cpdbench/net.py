"""Dense feed-forward networks with exact reverse-mode gradients.

Everything downstream (PPO actors/critics, distilled students) runs on this
substrate: flat float64 parameter vectors, manual backprop, a diagonal
Gaussian action head, and a bias-corrected Adam optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class NetArch:
    """Layer sizes (input, hidden..., output) and hidden activation."""

    layer_sizes: tuple
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output layer, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def param_count(self):
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def net_init(arch: NetArch, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases, deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unpack_params(arch: NetArch, params: np.ndarray):
    """Flat vector -> list of (W, b) per layer."""
    if params.shape != (arch.param_count(),):
        raise ValueError(
            f"parameter vector has length {params.shape}, arch needs {arch.param_count()}"
        )
    layers = []
    sizes = arch.layer_sizes
    off = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[off : off + fan_in * fan_out].reshape(fan_out, fan_in)
        off += fan_in * fan_out
        b = params[off : off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(z, kind):
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


@dataclass
class ForwardCache:
    arch: NetArch
    params: np.ndarray
    inputs: np.ndarray           # (B, d0)
    pre_activations: list        # z per hidden layer, (B, d)
    activations: list            # post-activation per hidden layer, (B, d)


def net_forward(arch: NetArch, params: np.ndarray, x: np.ndarray):
    """Forward pass. Accepts a single input (d0,) or a batch (B, d0).

    Returns (output, cache); the cache carries everything net_backward needs.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != arch.in_dim:
        raise ValueError(f"input dim {x.shape[1]} != arch input {arch.in_dim}")
    layers = unpack_params(arch, params)
    pre, post = [], []
    a = x
    for w, b in layers[:-1]:
        z = a @ w.T + b
        a = _act(z, arch.activation)
        pre.append(z)
        post.append(a)
    w, b = layers[-1]
    out = a @ w.T + b
    cache = ForwardCache(arch, params, x, pre, post)
    return (out[0] if single else out), cache


def net_backward(arch: NetArch, params: np.ndarray, cache: ForwardCache, output_grad: np.ndarray):
    """Exact gradient of sum_batch(output . output_grad) w.r.t. every parameter."""
    if cache.arch != arch or cache.params is not params and not np.array_equal(cache.params, params):
        raise ValueError("cache does not match the given arch/params")
    gy = np.asarray(output_grad, dtype=np.float64)
    if gy.ndim == 1:
        gy = gy[None, :]
    if gy.shape != (cache.inputs.shape[0], arch.out_dim) and gy.shape[0] != cache.inputs.shape[0]:
        raise ValueError("output_grad shape does not match forward batch")
    layers = unpack_params(arch, params)
    acts = [cache.inputs] + cache.activations
    grads = [None] * len(layers)
    g = gy
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw = g.T @ acts[li]
        gb = g.sum(axis=0)
        grads[li] = (gw, gb)
        if li > 0:
            g = (g @ w) * _act_grad(cache.pre_activations[li - 1], arch.activation)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n_params, learning_rate=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            m=np.zeros(n_params),
            v=np.zeros(n_params),
            step_count=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, log_std_dims: int = 0):
    """One Adam update. Returns (new_state, new_params); inputs untouched.

    When the trailing log_std_dims entries are a Gaussian head's log-stds,
    they are clamped to [LOG_STD_MIN, LOG_STD_MAX] after the update.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient length {grad.shape} != params {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite entries in gradient")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    if log_std_dims > 0:
        new_params[-log_std_dims:] = np.clip(
            new_params[-log_std_dims:], LOG_STD_MIN, LOG_STD_MAX
        )
    return replace(state, m=m, v=v, step_count=t), new_params


@dataclass
class GaussianHead:
    """Diagonal Gaussian over actions: state-dependent mean, shared log-std."""

    mean: np.ndarray
    log_std: np.ndarray


def gaussian_log_prob(head: GaussianHead, action: np.ndarray):
    """Log density of `action` under the head; sums over action dimensions.

    Batched means/actions (B, D) give a (B,) vector of log-probs.
    """
    mean = np.asarray(head.mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if mean.shape[-1] != action.shape[-1] or mean.shape[-1] != head.log_std.shape[-1]:
        raise ValueError("mean/action/log_std dimension mismatch")
    std = np.exp(head.log_std)
    z = (action - mean) / std
    return np.sum(-0.5 * z * z - head.log_std - 0.5 * _LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray):
    return float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))


def gaussian_sample(head: GaussianHead, rng: np.random.Generator):
    """a = mean + std * z with z drawn from the given stream."""
    mean = np.asarray(head.mean, dtype=np.float64)
    z = rng.standard_normal(mean.shape)
    return mean + np.exp(head.log_std) * z


@dataclass
class Policy:
    """Actor = mean network + state-independent log_std vector.

    `flat()` is the optimizer's view: network params followed by log_std.
    """

    arch: NetArch
    theta: np.ndarray
    log_std: np.ndarray

    @classmethod
    def init(cls, arch: NetArch, seed: int, log_std_init: float = 0.0):
        return cls(
            arch=arch,
            theta=net_init(arch, seed),
            log_std=np.full(arch.out_dim, log_std_init, dtype=np.float64),
        )

    @property
    def act_dim(self):
        return self.arch.out_dim

    @property
    def obs_dim(self):
        return self.arch.in_dim

    def flat(self):
        return np.concatenate([self.theta, self.log_std])

    def with_flat(self, flat: np.ndarray):
        n = self.arch.param_count()
        return Policy(self.arch, flat[:n].copy(), flat[n:].copy())

    def mean_action(self, obs: np.ndarray):
        out, _ = net_forward(self.arch, self.theta, obs)
        return out

    def sample_action(self, obs: np.ndarray, rng: np.random.Generator):
        mean = self.mean_action(obs)
        return gaussian_sample(GaussianHead(mean, self.log_std), rng)

    def log_prob(self, obs: np.ndarray, action: np.ndarray):
        mean = self.mean_action(obs)
        return gaussian_log_prob(GaussianHead(mean, self.log_std), action)


def default_actor_arch(obs_dim: int, act_dim: int) -> NetArch:
    return NetArch((obs_dim, 64, 64, act_dim), "tanh")


def default_critic_arch(obs_dim: int) -> NetArch:
    return NetArch((obs_dim, 64, 64, 1), "tanh")
