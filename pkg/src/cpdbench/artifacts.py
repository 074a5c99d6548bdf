"""Versioned binary artifact files.

Every format shares the same envelope: 4 magic bytes, a u16 format version,
little-endian payload, and a trailing 64-bit FNV-1a checksum of everything
before it. Formats: policy checkpoints (CPDP), expert artifacts (CPDA), task
families (CPDF), demonstration sets (CPDD), buffer snapshots (CPDB).
"""

from __future__ import annotations

import struct
from dataclasses import fields

import numpy as np

from .distill import DemoEpisode, Demonstration
from .env import POSE_DIM, ACT_DIM, ObjectSpec
from .net import NetArch, Policy
from .ppo import EpisodeRecord, ExpertArtifact, TrainConfig
from .replay import ExperienceBuffer, Slot
from .util import fnv1a64

FORMAT_VERSION = 1

MAGIC_CHECKPOINT = b"CPDP"
MAGIC_EXPERT = b"CPDA"
MAGIC_FAMILY = b"CPDF"
MAGIC_DEMO = b"CPDD"
MAGIC_BUFFER = b"CPDB"

_ACTIVATION_CODES = {"tanh": 0, "relu": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}
_STRATEGY_CODES = {s: i for i, s in enumerate(
    ("naive", "cumulative", "replay_br", "replay_ex", "replay_rp", "replay_rpr"))}
_STRATEGY_NAMES = {v: k for k, v in _STRATEGY_CODES.items()}


class ArtifactError(ValueError):
    """Corrupt, truncated, or mismatched artifact file."""


def _seal(magic: bytes, payload: bytes) -> bytes:
    body = magic + struct.pack("<H", FORMAT_VERSION) + payload
    return body + struct.pack("<Q", fnv1a64(body))


def _open(data: bytes, magic: bytes) -> bytes:
    if len(data) < 14:
        raise ArtifactError("file too short to be an artifact")
    if data[:4] != magic:
        raise ArtifactError(f"bad magic {data[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported format version {version}")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    if fnv1a64(data[:-8]) != stored:
        raise ArtifactError("checksum mismatch; file is corrupt")
    return data[6:-8]


class _Reader:
    def __init__(self, payload: bytes):
        self.data = payload
        self.off = 0

    def unpack(self, fmt):
        vals = struct.unpack_from("<" + fmt, self.data, self.off)
        self.off += struct.calcsize("<" + fmt)
        return vals if len(vals) > 1 else vals[0]

    def floats(self, n) -> np.ndarray:
        out = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.off).copy()
        self.off += 8 * n
        return out

    def blob(self) -> bytes:
        n = self.unpack("I")
        out = self.data[self.off: self.off + n]
        self.off += n
        return out

    def done(self):
        if self.off != len(self.data):
            raise ArtifactError("trailing bytes in artifact payload")


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


# --- checkpoints ------------------------------------------------------------

def _encode_checkpoint_payload(policy: Policy) -> bytes:
    arch = policy.arch
    parts = [struct.pack("<H", len(arch.layer_sizes))]
    parts.append(struct.pack(f"<{len(arch.layer_sizes)}I", *arch.layer_sizes))
    parts.append(struct.pack("<B", _ACTIVATION_CODES[arch.activation]))
    parts.append(struct.pack("<I", policy.log_std.size))
    parts.append(_f64(policy.theta))
    parts.append(_f64(policy.log_std))
    return b"".join(parts)


def _decode_checkpoint_payload(r: _Reader) -> Policy:
    n_layers = r.unpack("H")
    sizes = r.unpack(f"{n_layers}I")
    sizes = (sizes,) if n_layers == 1 else sizes
    activation = _ACTIVATION_NAMES[r.unpack("B")]
    arch = NetArch(tuple(sizes), activation)
    log_std_len = r.unpack("I")
    theta = r.floats(arch.param_count())
    log_std = r.floats(log_std_len)
    return Policy(arch, theta, log_std)


def save_checkpoint(policy: Policy, path):
    with open(path, "wb") as fh:
        fh.write(_seal(MAGIC_CHECKPOINT, _encode_checkpoint_payload(policy)))


def load_checkpoint(path) -> Policy:
    with open(path, "rb") as fh:
        r = _Reader(_open(fh.read(), MAGIC_CHECKPOINT))
    policy = _decode_checkpoint_payload(r)
    r.done()
    return policy


# --- expert artifacts -------------------------------------------------------

def _config_text(config: TrainConfig) -> str:
    return "".join(f"{f.name} = {getattr(config, f.name)!r}\n"
                   for f in fields(TrainConfig))


def _config_from_text(text: str) -> TrainConfig:
    kwargs = {}
    for line in text.splitlines():
        key, _, value = line.partition(" = ")
        kwargs[key] = eval(value)  # noqa: S307 - values we wrote ourselves
    return TrainConfig(**kwargs)


def _curve_csv(curve) -> str:
    lines = ["episode,total_reward,z_rotation,length"]
    for i, rec in enumerate(curve):
        lines.append(f"{i},{rec.total_reward!r},{rec.z_rotation!r},{rec.length}")
    return "\n".join(lines) + "\n"


def _curve_from_csv(text: str):
    out = []
    for line in text.strip().splitlines()[1:]:
        _, reward, z, length = line.split(",")
        out.append(EpisodeRecord(float(reward), float(z), int(length)))
    return out


def save_expert(artifact: ExpertArtifact, path):
    payload = b"".join([
        _blob(_encode_checkpoint_payload(artifact.policy)),
        struct.pack("<IdB", artifact.object_id, artifact.best_eval_score,
                    int(artifact.diverged)),
        _blob(_config_text(artifact.config).encode()),
        _blob(_curve_csv(artifact.training_curve).encode()),
    ])
    with open(path, "wb") as fh:
        fh.write(_seal(MAGIC_EXPERT, payload))


def load_expert(path) -> ExpertArtifact:
    with open(path, "rb") as fh:
        r = _Reader(_open(fh.read(), MAGIC_EXPERT))
    ckpt = _Reader(r.blob())
    policy = _decode_checkpoint_payload(ckpt)
    ckpt.done()
    object_id, score, diverged = r.unpack("IdB")
    config = _config_from_text(r.blob().decode())
    curve = _curve_from_csv(r.blob().decode())
    r.done()
    return ExpertArtifact(
        policy=policy,
        object_id=object_id,
        best_eval_score=score,
        training_curve=curve,
        config=config,
        diverged=bool(diverged),
    )


# --- task families ----------------------------------------------------------

def save_family(specs: list, master_seed: int, path):
    parts = [struct.pack("<Iq", len(specs), master_seed)]
    for s in specs:
        parts.append(struct.pack("<II", s.object_id, s.n_objects))
        parts.append(_f64(s.gain))
        parts.append(_f64(s.coupling))
        parts.append(struct.pack("<ddQ", s.noise_scale, s.drop_threshold, s.seed_base))
    with open(path, "wb") as fh:
        fh.write(_seal(MAGIC_FAMILY, b"".join(parts)))


def load_family(path):
    with open(path, "rb") as fh:
        r = _Reader(_open(fh.read(), MAGIC_FAMILY))
    k, master_seed = r.unpack("Iq")
    specs = []
    for _ in range(k):
        object_id, n_objects = r.unpack("II")
        gain = r.floats(POSE_DIM * ACT_DIM).reshape(POSE_DIM, ACT_DIM)
        coupling = r.floats(POSE_DIM * POSE_DIM).reshape(POSE_DIM, POSE_DIM)
        noise_scale, drop_threshold, seed_base = r.unpack("ddQ")
        specs.append(ObjectSpec(object_id, n_objects, gain, coupling,
                                noise_scale, drop_threshold, seed_base))
    r.done()
    return specs, master_seed


# --- demonstrations ---------------------------------------------------------

def _encode_episode(ep: DemoEpisode) -> bytes:
    steps = len(ep)
    interleaved = np.concatenate([ep.observations, ep.actions], axis=1)
    return (struct.pack("<Idd", steps, ep.episodic_reward, ep.z_rotation)
            + _f64(interleaved))


def _decode_episode(r: _Reader, obs_dim: int, act_dim: int,
                    source_object_id: int) -> DemoEpisode:
    steps, reward, z = r.unpack("Idd")
    rows = r.floats(steps * (obs_dim + act_dim)).reshape(steps, obs_dim + act_dim)
    return DemoEpisode(
        observations=rows[:, :obs_dim],
        actions=rows[:, obs_dim:],
        episodic_reward=reward,
        z_rotation=z,
        source_object_id=source_object_id,
        episode_seed=-1,
    )


def save_demonstration(demo: Demonstration, object_id: int, path):
    first = demo.episodes[0]
    obs_dim = first.observations.shape[1]
    act_dim = first.actions.shape[1]
    parts = [struct.pack("<IIIII", demo.expert_id, object_id, demo.count,
                         obs_dim, act_dim)]
    parts.extend(_encode_episode(ep) for ep in demo.episodes)
    with open(path, "wb") as fh:
        fh.write(_seal(MAGIC_DEMO, b"".join(parts)))


def load_demonstration(path) -> Demonstration:
    with open(path, "rb") as fh:
        r = _Reader(_open(fh.read(), MAGIC_DEMO))
    expert_id, object_id, n_episodes, obs_dim, act_dim = r.unpack("IIIII")
    episodes = [_decode_episode(r, obs_dim, act_dim, object_id)
                for _ in range(n_episodes)]
    r.done()
    return Demonstration(episodes=episodes, expert_id=expert_id)


# --- buffer snapshots -------------------------------------------------------

def _encode_rng(rng: np.random.Generator) -> bytes:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ArtifactError("only PCG64 buffer rng state is supported")
    inner = st["state"]
    return (inner["state"].to_bytes(16, "little")
            + inner["inc"].to_bytes(16, "little")
            + struct.pack("<BI", int(st["has_uint32"]), st["uinteger"]))


def _decode_rng(r: _Reader) -> np.random.Generator:
    raw = r.data[r.off: r.off + 32]
    r.off += 32
    has_uint32, uinteger = r.unpack("BI")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(raw[:16], "little"),
                  "inc": int.from_bytes(raw[16:], "little")},
        "has_uint32": has_uint32,
        "uinteger": uinteger,
    }
    return rng


def save_buffer(buffer: ExperienceBuffer, path):
    parts = [struct.pack("<BII", _STRATEGY_CODES[buffer.strategy],
                         buffer.capacity, buffer.n_seen),
             _encode_rng(buffer.rng),
             struct.pack("<I", len(buffer.slots))]
    for slot in buffer.slots:
        ep = slot.episode
        parts.append(struct.pack("<IIIII", slot.experience_index, slot.ordinal,
                                 ep.source_object_id,
                                 ep.observations.shape[1], ep.actions.shape[1]))
        parts.append(_encode_episode(ep))
    with open(path, "wb") as fh:
        fh.write(_seal(MAGIC_BUFFER, b"".join(parts)))


def load_buffer(path) -> ExperienceBuffer:
    with open(path, "rb") as fh:
        r = _Reader(_open(fh.read(), MAGIC_BUFFER))
    strategy_code, capacity, n_seen = r.unpack("BII")
    rng = _decode_rng(r)
    n_slots = r.unpack("I")
    slots = []
    for _ in range(n_slots):
        exp_idx, ordinal, source_id, obs_dim, act_dim = r.unpack("IIIII")
        slots.append(Slot(exp_idx, ordinal,
                          _decode_episode(r, obs_dim, act_dim, source_id)))
    r.done()
    return ExperienceBuffer(capacity=capacity,
                            strategy=_STRATEGY_NAMES[strategy_code],
                            slots=slots, n_seen=n_seen, rng=rng)


# --- verification -----------------------------------------------------------

_KNOWN = {
    MAGIC_CHECKPOINT: "checkpoint",
    MAGIC_EXPERT: "expert",
    MAGIC_FAMILY: "task-family",
    MAGIC_DEMO: "demonstration",
    MAGIC_BUFFER: "buffer-snapshot",
}

_LOADERS = {
    MAGIC_CHECKPOINT: load_checkpoint,
    MAGIC_EXPERT: load_expert,
    MAGIC_FAMILY: load_family,
    MAGIC_DEMO: load_demonstration,
    MAGIC_BUFFER: load_buffer,
}


def verify_file(path) -> dict:
    """Validate magic, version, checksum, and full decode of any artifact."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:4]
    if magic not in _KNOWN:
        raise ArtifactError(f"unrecognized artifact magic {magic!r}")
    _open(data, magic)          # envelope checks
    _LOADERS[magic](path)       # full structural decode
    return {"kind": _KNOWN[magic], "bytes": len(data)}
