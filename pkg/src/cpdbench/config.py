"""Line-oriented experiment config files.

INI-style sections with `key = value` pairs, `#` comments, comma-separated
lists. Parsing validates every key and reports all problems at once, each
with its line number; unset keys fall back to the desk-scale defaults.
"""

from __future__ import annotations

from dataclasses import dataclass

from .distill import DistillConfig
from .ppo import TrainConfig
from .replay import STRATEGIES
from .util import fnv1a64


class ConfigError(ValueError):
    """One or more config problems; `.errors` lists them with line numbers."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ExperimentConfig:
    # [family]
    k: int = 3
    master_seed: int = 12345
    noise_scale: float = 0.02
    drop_threshold: float = 15.0
    episode_length: int = 100
    # [ppo]
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
    ppo_learning_rate: float = 3e-4
    # [demos]
    demo_episodes: int = 100
    # [distill]
    loss: str = "kl"
    distill_epochs: int = 20
    batch_size: int = 256
    distill_learning_rate: float = 1e-3
    expert_sigma: float = 1e-6
    # [cpd]
    strategies: tuple = ("naive", "cumulative", "replay_br", "replay_ex",
                         "replay_rp", "replay_rpr")
    buffer_sizes: tuple = (100, 10, 1)
    seeds: tuple = (0, 1, 2, 3, 4)
    cpd_eval_episodes: int = 10
    # [output]
    out_dir: str = "results"

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            total_steps=self.total_steps,
            n_envs=self.n_envs,
            n_steps_per_update=self.n_steps_per_update,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            clip_epsilon=self.clip_epsilon,
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            value_coef=self.value_coef,
            entropy_coef=self.entropy_coef,
            eval_every_episodes=self.eval_every_episodes,
            eval_episodes=self.eval_episodes,
            episode_length=self.episode_length,
            learning_rate=self.ppo_learning_rate,
            seed=seed,
        )

    def distill_config(self, seed: int) -> DistillConfig:
        return DistillConfig(
            loss=self.loss,
            epochs=self.distill_epochs,
            batch_size=self.batch_size,
            learning_rate=self.distill_learning_rate,
            seed=seed,
            expert_sigma=self.expert_sigma,
        )


def _positive(v):
    return v > 0


def _fraction(v):
    return 0.0 < v < 1.0


def _unit(v):
    return 0.0 < v <= 1.0


# section -> key -> (attribute, type, validator, description of valid range)
_SCHEMA = {
    "family": {
        "k": ("k", int, _positive, "positive integer"),
        "master_seed": ("master_seed", int, None, "integer"),
        "noise_scale": ("noise_scale", float, lambda v: v >= 0, "non-negative"),
        "drop_threshold": ("drop_threshold", float, _positive, "positive"),
        "episode_length": ("episode_length", int, _positive, "positive integer"),
    },
    "ppo": {
        "total_steps": ("total_steps", int, _positive, "positive integer"),
        "n_envs": ("n_envs", int, _positive, "positive integer"),
        "n_steps_per_update": ("n_steps_per_update", int, _positive, "positive integer"),
        "epochs": ("epochs", int, _positive, "positive integer"),
        "minibatch_size": ("minibatch_size", int, _positive, "positive integer"),
        "clip_epsilon": ("clip_epsilon", float, _fraction, "in (0, 1)"),
        "gamma": ("gamma", float, _unit, "in (0, 1]"),
        "gae_lambda": ("gae_lambda", float, _unit, "in (0, 1]"),
        "value_coef": ("value_coef", float, lambda v: v >= 0, "non-negative"),
        "entropy_coef": ("entropy_coef", float, lambda v: v >= 0, "non-negative"),
        "eval_every_episodes": ("eval_every_episodes", int, _positive, "positive integer"),
        "eval_episodes": ("eval_episodes", int, _positive, "positive integer"),
        "learning_rate": ("ppo_learning_rate", float, _positive, "positive"),
    },
    "demos": {
        "n_episodes": ("demo_episodes", int, _positive, "positive integer"),
    },
    "distill": {
        "loss": ("loss", str, lambda v: v in ("mse", "nll", "kl"), "one of mse, nll, kl"),
        "epochs": ("distill_epochs", int, lambda v: v >= 0, "non-negative integer"),
        "batch_size": ("batch_size", int, _positive, "positive integer"),
        "learning_rate": ("distill_learning_rate", float, _positive, "positive"),
        "expert_sigma": ("expert_sigma", float, _positive, "positive"),
    },
    "cpd": {
        "strategies": ("strategies", "list_str",
                       lambda v: len(v) > 0 and all(s in STRATEGIES for s in v),
                       f"nonempty subset of {', '.join(STRATEGIES)}"),
        "buffer_sizes": ("buffer_sizes", "list_int",
                         lambda v: len(v) > 0 and all(m > 0 for m in v),
                         "nonempty list of positive integers"),
        "seeds": ("seeds", "list_int", lambda v: len(v) > 0, "nonempty list of integers"),
        "eval_episodes": ("cpd_eval_episodes", int, _positive, "positive integer"),
    },
    "output": {
        "dir": ("out_dir", str, lambda v: len(v) > 0, "nonempty path"),
    },
}

_ATTR_TO_SECTION_KEY = {
    attr: (section, key)
    for section, keys in _SCHEMA.items()
    for key, (attr, _t, _v, _d) in keys.items()
}


def _convert(raw: str, kind):
    if kind is int:
        return int(raw, 0)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    items = [x.strip() for x in raw.split(",") if x.strip()]
    if kind == "list_int":
        return tuple(int(x, 0) for x in items)
    return tuple(items)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate; raises ConfigError listing every problem."""
    values = {}
    errors = []
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if section is None:
            errors.append(f"line {lineno}: key outside any known section")
            continue
        key, _, raw = (p.strip() for p in line.partition("="))
        if key not in _SCHEMA[section]:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        attr, kind, validator, valid_range = _SCHEMA[section][key]
        try:
            value = _convert(raw, kind)
        except ValueError:
            errors.append(
                f"line {lineno}: {key} = {raw!r} is not a valid "
                f"{kind if isinstance(kind, str) else kind.__name__}")
            continue
        if validator is not None and not validator(value):
            errors.append(
                f"line {lineno}: {key} = {raw!r} out of range (expected {valid_range})")
            continue
        values[attr] = value
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**values)


def parse_config_file(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def emit_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse_config(emit_config(c)) == c."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (attr, kind, _v, _d) in keys.items():
            value = getattr(config, attr)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def config_hash(config: ExperimentConfig) -> str:
    """Stable hex fingerprint of the full config."""
    return f"{fnv1a64(emit_config(config).encode()):016x}"
