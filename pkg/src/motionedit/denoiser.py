"""Toy conditional denoiser and the synthetic gesture corpus it trains on.

The network is a per-frame MLP that maps a noisy pose frame plus its
conditioning (sinusoidal timestep embedding, per-frame "speech" features,
speaker one-hot, flattened seed pose) straight to a prediction of the clean
pose frame. Sharing the MLP across frames keeps the frame count free, and
tanh activations keep the map smooth, which matters for stable inversion.

The corpus is deliberately synthetic: every joint channel is a sum of
sinusoids whose frequency and amplitude derive from the condition while the
phase comes from a clip-level latent, so conditions never fully determine a
motion. That split is what makes style-copy experiments meaningful at desk
scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor
from .schedule import VarianceSchedule, schedule_from_json, schedule_to_json

CHECKPOINT_FORMAT = 1

# desk-scale training defaults shared by the CLI, demos, and test fixtures
DEFAULT_CORPUS_CLIPS = 8
DEFAULT_CORPUS_FRAMES = 60
DEFAULT_TRAIN_EPOCHS = 800
DEFAULT_TRAIN_LR = 0.25


class DenoiserError(ValueError):
    """Shape/timestep contract violation in a denoiser call."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the offending step index."""

    def __init__(self, step: int):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.step = step


class CheckpointError(ValueError):
    """Unreadable checkpoint or schedule fingerprint mismatch."""


@dataclass(frozen=True)
class DenoiserConfig:
    joints: int = 16
    channels: int = 3
    cond_dim: int = 4
    n_speakers: int = 2
    hidden: int = 128
    time_dim: int = 16
    max_timestep: int = 1000

    @property
    def pose_dim(self) -> int:
        return self.joints * self.channels

    @property
    def input_dim(self) -> int:
        return 2 * self.pose_dim + self.time_dim + self.cond_dim + self.n_speakers


@dataclass(frozen=True)
class ConditionVector:
    """Abstract per-clip conditioning: per-frame features, speaker, seed pose."""

    speech_features: np.ndarray  # (F, cond_dim)
    speaker_id: int
    seed_pose: np.ndarray  # (joints, channels); zeros when no previous clip

    def __post_init__(self):
        sf = np.asarray(self.speech_features, dtype=np.float64)
        sp = np.asarray(self.seed_pose, dtype=np.float64)
        sf.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "speech_features", sf)
        object.__setattr__(self, "seed_pose", sp)

    @property
    def frames(self) -> int:
        return self.speech_features.shape[0]


def _time_table(max_timestep: int, time_dim: int) -> np.ndarray:
    """Fixed sinusoidal embedding rows for timesteps 0..max_timestep."""
    half = time_dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = np.arange(max_timestep + 1)[:, None] * freqs[None, :]
    table = np.empty((max_timestep + 1, 2 * half))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


_WEIGHT_KEYS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class DenoiserParams:
    config: DenoiserConfig
    weights: dict[str, np.ndarray]
    rng_seed: int
    time_table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.time_table is None:
            object.__setattr__(
                self, "time_table",
                _time_table(self.config.max_timestep, self.config.time_dim))
        for arr in self.weights.values():
            arr.setflags(write=False)
        self.time_table.setflags(write=False)


def init_params(config: DenoiserConfig = DenoiserConfig(), seed: int = 0) -> DenoiserParams:
    rng = np.random.default_rng(seed)
    d_in, h, d_out = config.input_dim, config.hidden, config.pose_dim
    weights = {
        "w1": rng.standard_normal((d_in, h)) / np.sqrt(d_in),
        "b1": np.zeros(h),
        "w2": rng.standard_normal((h, h)) / np.sqrt(h),
        "b2": np.zeros(h),
        "w3": rng.standard_normal((h, d_out)) * (0.1 / np.sqrt(h)),
        "b3": np.zeros(d_out),
    }
    return DenoiserParams(config=config, weights=weights, rng_seed=seed)


def _check_inputs(config: DenoiserConfig, x_shape: tuple, t: int,
                  cond: ConditionVector):
    if len(x_shape) != 3 or x_shape[1] != config.joints or x_shape[2] != config.channels:
        raise DenoiserError(
            f"pose tensor shape {x_shape} does not match configured "
            f"(F, {config.joints}, {config.channels})")
    if not 1 <= t <= config.max_timestep:
        raise DenoiserError(f"timestep {t} outside [1, {config.max_timestep}]")
    if cond.speech_features.shape != (x_shape[0], config.cond_dim):
        raise DenoiserError(
            f"speech features shape {cond.speech_features.shape} does not match "
            f"(frames={x_shape[0]}, {config.cond_dim})")
    if not 0 <= cond.speaker_id < config.n_speakers:
        raise DenoiserError(f"speaker_id {cond.speaker_id} outside vocabulary "
                            f"of {config.n_speakers}")
    if cond.seed_pose.shape != (config.joints, config.channels):
        raise DenoiserError(f"seed pose shape {cond.seed_pose.shape} does not match "
                            f"({config.joints}, {config.channels})")


def _forward(config: DenoiserConfig, w: dict[str, Tensor], x: Tensor, t: int,
             cond: ConditionVector, time_table: np.ndarray) -> Tensor:
    frames = x.shape[0]
    pose = ad.reshape(x, (frames, config.pose_dim))
    spk = np.zeros(config.n_speakers)
    spk[cond.speaker_id] = 1.0
    inp = ad.concat([
        pose,
        ad.broadcast_to(ad.constant(time_table[t]), (frames, config.time_dim)),
        ad.constant(cond.speech_features),
        ad.broadcast_to(ad.constant(spk), (frames, config.n_speakers)),
        ad.broadcast_to(ad.constant(cond.seed_pose.reshape(-1)),
                        (frames, config.pose_dim)),
    ], axis=1)
    h1 = ad.tanh(ad.add(ad.matmul(inp, w["w1"]),
                        ad.broadcast_to(w["b1"], (frames, config.hidden))))
    h2 = ad.tanh(ad.add(ad.matmul(h1, w["w2"]),
                        ad.broadcast_to(w["b2"], (frames, config.hidden))))
    out = ad.add(ad.matmul(h2, w["w3"]),
                 ad.broadcast_to(w["b3"], (frames, config.pose_dim)))
    return ad.reshape(out, (frames, config.joints, config.channels))


def denoise(params: DenoiserParams, x_t: Tensor | np.ndarray, t: int,
            cond: ConditionVector) -> Tensor:
    """Predict the clean pose tensor from a noisy one at timestep t."""
    x = ad.as_tensor(x_t)
    _check_inputs(params.config, x.shape, t, cond)
    w = {k: ad.constant(v) for k, v in params.weights.items()}
    return _forward(params.config, w, x, t, cond, params.time_table)


class ConditionedDenoiser:
    """Denoiser with parameters and condition bound; what the sampler calls."""

    def __init__(self, params: DenoiserParams, cond: ConditionVector):
        self.params = params
        self.cond = cond
        self._w = {k: ad.constant(v) for k, v in params.weights.items()}

    def predict(self, x: Tensor, t: int) -> Tensor:
        _check_inputs(self.params.config, x.shape, t, self.cond)
        return _forward(self.params.config, self._w, x, t, self.cond,
                        self.params.time_table)


def noised(x_0: np.ndarray, t: int, schedule: VarianceSchedule,
           z: np.ndarray) -> np.ndarray:
    """Forward diffusion q(x_t | x_0): sqrt(abar_t) x_0 + sqrt(1 - abar_t) z."""
    x_0 = np.asarray(x_0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x_0.shape:
        raise DenoiserError(f"noise shape {z.shape} does not match pose shape {x_0.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x_0 + np.sqrt(1.0 - abar) * z


# -- synthetic corpus ---------------------------------------------------------

_SPEAKER_AMP = (0.6, 0.9)
_SPEAKER_FREQ = (0.5, 0.8)
_CHANNEL_WEIGHT = (0.9, 0.7, 0.5)
_CHANNEL_PHASE = (0.0, 1.1, 2.3)
_FPS = 30.0


@dataclass(frozen=True)
class SyntheticCorpus:
    clips: tuple[tuple[np.ndarray, ConditionVector], ...]
    generator_seed: int


def synth_condition(seed: int, frames: int, speaker_id: int,
                    config: DenoiserConfig = DenoiserConfig()) -> ConditionVector:
    """Deterministic smooth per-frame feature rows standing in for speech."""
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / _FPS
    feats = np.empty((frames, config.cond_dim))
    for c in range(config.cond_dim):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        feats[:, c] = 0.5 + 0.5 * np.sin(2.0 * np.pi * (0.2 + 0.1 * c) * t + phase)
    return ConditionVector(speech_features=feats,
                           speaker_id=speaker_id % config.n_speakers,
                           seed_pose=np.zeros((config.joints, config.channels)))


def synth_motion(cond: ConditionVector, latent_seed: int,
                 config: DenoiserConfig = DenoiserConfig()) -> np.ndarray:
    """One clip: condition picks amplitude/frequency, latent picks phases."""
    rng = np.random.default_rng(latent_seed)
    frames = cond.frames
    amp = _SPEAKER_AMP[cond.speaker_id % len(_SPEAKER_AMP)]
    freq = _SPEAKER_FREQ[cond.speaker_id % len(_SPEAKER_FREQ)]
    theta = rng.uniform(0.0, 2.0 * np.pi, size=config.joints)
    detail = rng.uniform(0.5, 1.0)
    t = np.arange(frames) / _FPS
    drive = cond.speech_features.mean(axis=1)  # in [0, 1]
    x = np.empty((frames, config.joints, config.channels))
    for r in range(config.channels):
        w = _CHANNEL_WEIGHT[r % len(_CHANNEL_WEIGHT)]
        base = np.sin(2.0 * np.pi * freq * t[:, None] + theta[None, :]
                      + _CHANNEL_PHASE[r % len(_CHANNEL_PHASE)])
        ripple = drive[:, None] * np.sin(4.0 * np.pi * freq * t[:, None] + theta[None, :])
        x[:, :, r] = amp * w * (base + 0.3 * detail * ripple)
    return x


def synth_corpus(seed: int, n_clips: int, frames: int,
                 config: DenoiserConfig = DenoiserConfig()) -> SyntheticCorpus:
    if n_clips < 1:
        raise ValueError(f"n_clips must be >= 1, got {n_clips}")
    if frames < 2:
        raise ValueError(f"frames must be >= 2, got {frames}")
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        cond_seed = int(rng.integers(0, 2**31))
        latent_seed = int(rng.integers(0, 2**31))
        cond = synth_condition(cond_seed, frames, i % config.n_speakers, config)
        clips.append((synth_motion(cond, latent_seed, config), cond))
    return SyntheticCorpus(clips=tuple(clips), generator_seed=seed)


# -- training -----------------------------------------------------------------

def train(params: DenoiserParams, corpus: SyntheticCorpus,
          schedule: VarianceSchedule, epochs: int, lr: float,
          seed: int = 0) -> tuple[DenoiserParams, list[float]]:
    """Plain seeded SGD on MSE between predicted and true clean poses.

    One step per clip per epoch; the timestep and the injected noise are
    drawn fresh each step from the training rng. Returns new params; the
    input params object is never mutated.
    """
    if not corpus.clips:
        raise ValueError("corpus is empty")
    weights = {k: v.copy() for k, v in params.weights.items()}
    rng = np.random.default_rng(seed)
    history: list[float] = []
    step = 0
    for _ in range(epochs):
        for idx in rng.permutation(len(corpus.clips)):
            x0, cond = corpus.clips[idx]
            t = int(rng.integers(1, schedule.total_steps + 1))
            z = rng.standard_normal(x0.shape)
            x_t = noised(x0, t, schedule, z)
            tape = GradTape()
            leaves = {k: tape.leaf(v) for k, v in weights.items()}
            pred = _forward(params.config, leaves, ad.constant(x_t), t, cond,
                            params.time_table)
            loss = ad.tmean(ad.square(ad.sub(pred, ad.constant(x0))))
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(step)
            grads = ad.backward(tape, loss)
            for k in weights:
                weights[k] = weights[k] - lr * grads[leaves[k].node]
            history.append(value)
            step += 1
    new_params = DenoiserParams(config=params.config, weights=weights,
                                rng_seed=params.rng_seed,
                                time_table=params.time_table)
    return new_params, history


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(params: DenoiserParams, schedule: VarianceSchedule,
                    path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "joints": params.config.joints,
            "channels": params.config.channels,
            "cond_dim": params.config.cond_dim,
            "n_speakers": params.config.n_speakers,
            "hidden": params.config.hidden,
            "time_dim": params.config.time_dim,
            "max_timestep": params.config.max_timestep,
        },
        "rng_seed": params.rng_seed,
        "schedule": schedule.to_json_dict(),
        "schedule_fingerprint": schedule.fingerprint,
        "weights": {k: params.weights[k].tolist() for k in _WEIGHT_KEYS},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path, schedule: VarianceSchedule | None = None
                    ) -> tuple[DenoiserParams, VarianceSchedule]:
    """Load params plus the training schedule; validates fingerprints.

    When ``schedule`` is given it must be the training schedule itself or a
    respacing of it.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
    config = DenoiserConfig(**doc["config"])
    weights = {k: np.asarray(doc["weights"][k], dtype=np.float64)
               for k in _WEIGHT_KEYS}
    params = DenoiserParams(config=config, weights=weights,
                            rng_seed=int(doc["rng_seed"]))
    stored = schedule_from_json(doc["schedule"])
    if stored.fingerprint != doc.get("schedule_fingerprint"):
        raise CheckpointError("checkpoint schedule fingerprint mismatch")
    if schedule is not None:
        if (schedule.fingerprint != stored.fingerprint
                and schedule.base_fingerprint != stored.base_fingerprint):
            raise CheckpointError(
                "requested schedule is neither the training schedule nor a "
                "respacing of it")
    return params, stored


# -- condition JSON boundary ----------------------------------------------------

def condition_to_json_dict(cond: ConditionVector) -> dict:
    return {
        "speaker_id": cond.speaker_id,
        "speech_features": cond.speech_features.tolist(),
        "seed_pose": cond.seed_pose.tolist(),
    }


def condition_from_json_dict(doc: dict,
                             config: DenoiserConfig = DenoiserConfig()
                             ) -> ConditionVector:
    """Accepts explicit arrays or {frames, speech_seed} for synthesized features."""
    speaker = int(doc.get("speaker_id", 0))
    if "speech_features" in doc:
        feats = np.asarray(doc["speech_features"], dtype=np.float64)
        seed_pose = np.asarray(
            doc.get("seed_pose",
                    np.zeros((config.joints, config.channels))), dtype=np.float64)
        return ConditionVector(speech_features=feats, speaker_id=speaker,
                               seed_pose=seed_pose)
    frames = int(doc["frames"])
    cond = synth_condition(int(doc.get("speech_seed", 0)), frames, speaker, config)
    if "seed_pose" in doc:
        cond = ConditionVector(
            speech_features=cond.speech_features, speaker_id=speaker,
            seed_pose=np.asarray(doc["seed_pose"], dtype=np.float64))
    return cond
