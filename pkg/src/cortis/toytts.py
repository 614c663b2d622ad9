"""Synthetic speaker world and a small conditional generation model.

The world holds a population of unit voice vectors, a fixed random nonlinear
ground-truth generator mapping (voice, content) to a signal, and two linear
probes fit by least squares that read the voice and the content back out of
a signal. The probes are the evaluation instruments: cosine similarity of
probed voice embeddings stands in for a speaker-verification score, and the
squared error of the probed content stands in for a transcription error.

The model is a plain tanh MLP over the concatenated (noisy voice prompt,
content code) input, trained by regression onto generator output, with
hand-written forward and backward passes over one flat parameter vector.
Pretraining samples fresh voices from the whole sphere, so every named
speaker in the world is unseen at training time and cloning them is a
zero-shot act.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .container import read_container, write_container
from .optim import Adam, linear_warmup_decay


class WorldBuildError(RuntimeError):
    """Raised when world construction cannot satisfy its invariants."""


@dataclass(frozen=True)
class WorldConfig:
    num_speakers: int = 50
    voice_dim: int = 16
    content_dim: int = 8
    signal_dim: int = 64
    generator_hidden: int = 48
    nonlinear_scale: float = 0.25
    prompt_noise: float = 0.05
    probe_fit_samples: int = 4000
    probe_max_mae: float = 0.05
    separability_max_cos: float = 0.5
    max_speaker_retries: int = 5000

    def validate(self) -> None:
        if self.num_speakers < 2:
            raise ValueError("num_speakers must be >= 2")
        for name in ("voice_dim", "content_dim", "signal_dim", "generator_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def random_unit_voices(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return _unit_rows(rng.standard_normal((n, dim)))


@dataclass(frozen=True)
class Utterance:
    """One (noisy voice prompt, content code, clean target signal) triple."""

    speaker_id: int
    prompt: np.ndarray
    content: np.ndarray
    target: np.ndarray


class SpeakerWorld:
    """Speaker population, ground-truth generator, and analytic probes."""

    def __init__(
        self,
        config: WorldConfig,
        seed: int,
        voices: np.ndarray,
        gen_voice: np.ndarray,
        gen_content: np.ndarray,
        gen_mix: np.ndarray,
        gen_out: np.ndarray,
        probe_speaker_mat: np.ndarray,
        probe_content_mat: np.ndarray,
        probe_speaker_mae: float,
        probe_content_mae: float,
    ):
        self.config = config
        self.seed = seed
        self.voices = voices
        self.gen_voice = gen_voice
        self.gen_content = gen_content
        self.gen_mix = gen_mix
        self.gen_out = gen_out
        self.probe_speaker_mat = probe_speaker_mat
        self.probe_content_mat = probe_content_mat
        self.probe_speaker_mae = probe_speaker_mae
        self.probe_content_mae = probe_content_mae

    @property
    def num_speakers(self) -> int:
        return self.voices.shape[0]

    def generate(self, voices: np.ndarray, contents: np.ndarray) -> np.ndarray:
        """Ground-truth signal for (voice, content); broadcasts over rows."""
        v = np.atleast_2d(voices)
        y = np.atleast_2d(contents)
        z = np.concatenate([v, y], axis=-1)
        out = (
            v @ self.gen_voice.T
            + y @ self.gen_content.T
            + self.config.nonlinear_scale * np.tanh(z @ self.gen_mix.T) @ self.gen_out.T
        )
        return out[0] if np.asarray(voices).ndim == 1 else out

    def probe_speaker(self, signals: np.ndarray) -> np.ndarray:
        return np.asarray(signals) @ self.probe_speaker_mat

    def probe_content(self, signals: np.ndarray) -> np.ndarray:
        return np.asarray(signals) @ self.probe_content_mat

    def sample_contents(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.config.content_dim))

    def prompt_for(self, voices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(np.shape(voices))
        return np.asarray(voices) + self.config.prompt_noise * noise

    def utterances(self, speaker_id: int, n: int, rng: np.random.Generator) -> list[Utterance]:
        """Fresh utterances for one named speaker."""
        voice = self.voices[speaker_id]
        contents = self.sample_contents(rng, n)
        prompts = self.prompt_for(np.tile(voice, (n, 1)), rng)
        targets = self.generate(np.tile(voice, (n, 1)), contents)
        return [
            Utterance(speaker_id, prompts[i], contents[i], targets[i]) for i in range(n)
        ]

    def save(self, path) -> None:
        meta = {
            "seed": self.seed,
            "dims": {
                "num_speakers": self.config.num_speakers,
                "voice_dim": self.config.voice_dim,
                "content_dim": self.config.content_dim,
                "signal_dim": self.config.signal_dim,
                "generator_hidden": self.config.generator_hidden,
            },
            "nonlinear_scale": self.config.nonlinear_scale,
            "prompt_noise": self.config.prompt_noise,
            "probe_fit_samples": self.config.probe_fit_samples,
            "probe_max_mae": self.config.probe_max_mae,
            "separability_max_cos": self.config.separability_max_cos,
            "max_speaker_retries": self.config.max_speaker_retries,
            "probe_speaker_mae": self.probe_speaker_mae,
            "probe_content_mae": self.probe_content_mae,
        }
        arrays = {
            "voices": self.voices,
            "gen_voice": self.gen_voice,
            "gen_content": self.gen_content,
            "gen_mix": self.gen_mix,
            "gen_out": self.gen_out,
            "probe_speaker": self.probe_speaker_mat,
            "probe_content": self.probe_content_mat,
        }
        write_container(path, "world", meta, arrays)

    @classmethod
    def load(cls, path) -> "SpeakerWorld":
        kind, meta, arrays = read_container(path)
        if kind != "world":
            raise ValueError(f"{path} holds a {kind!r} artifact, expected a world")
        dims = meta["dims"]
        config = WorldConfig(
            num_speakers=dims["num_speakers"],
            voice_dim=dims["voice_dim"],
            content_dim=dims["content_dim"],
            signal_dim=dims["signal_dim"],
            generator_hidden=dims["generator_hidden"],
            nonlinear_scale=meta["nonlinear_scale"],
            prompt_noise=meta["prompt_noise"],
            probe_fit_samples=meta["probe_fit_samples"],
            probe_max_mae=meta["probe_max_mae"],
            separability_max_cos=meta["separability_max_cos"],
            max_speaker_retries=meta["max_speaker_retries"],
        )
        return cls(
            config,
            meta["seed"],
            arrays["voices"],
            arrays["gen_voice"],
            arrays["gen_content"],
            arrays["gen_mix"],
            arrays["gen_out"],
            arrays["probe_speaker"],
            arrays["probe_content"],
            meta["probe_speaker_mae"],
            meta["probe_content_mae"],
        )


def make_world(config: WorldConfig, seed: int) -> SpeakerWorld:
    """Build a world deterministically from (config, seed).

    Voices are rejection-sampled until every pair stays below the
    separability bound; the probes are least-squares fits on one half of a
    fresh sample with the error measured on the held-out half.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x776F726C]))

    m, c, o, h = (
        config.voice_dim,
        config.content_dim,
        config.signal_dim,
        config.generator_hidden,
    )
    gen_voice = rng.standard_normal((o, m)) / np.sqrt(m)
    gen_content = rng.standard_normal((o, c)) / np.sqrt(4.0 * c)
    gen_mix = rng.standard_normal((h, m + c)) / np.sqrt(m + c)
    gen_out = rng.standard_normal((o, h)) / np.sqrt(h)

    voices = np.zeros((config.num_speakers, m))
    retries = 0
    count = 0
    while count < config.num_speakers:
        candidate = random_unit_voices(rng, 1, m)[0]
        if count == 0 or np.max(voices[:count] @ candidate) < config.separability_max_cos:
            voices[count] = candidate
            count += 1
        else:
            retries += 1
            if retries > config.max_speaker_retries:
                raise WorldBuildError(
                    f"could not place {config.num_speakers} speakers below "
                    f"pairwise cosine {config.separability_max_cos} "
                    f"after {retries} retries"
                )

    world = SpeakerWorld(
        config,
        seed,
        voices,
        gen_voice,
        gen_content,
        gen_mix,
        gen_out,
        np.zeros((o, m)),
        np.zeros((o, c)),
        0.0,
        0.0,
    )

    n_fit = config.probe_fit_samples
    fit_v = random_unit_voices(rng, 2 * n_fit, m)
    fit_y = rng.standard_normal((2 * n_fit, c))
    signals = world.generate(fit_v, fit_y)
    probe_speaker, _, _, _ = np.linalg.lstsq(signals[:n_fit], fit_v[:n_fit], rcond=None)
    probe_content, _, _, _ = np.linalg.lstsq(signals[:n_fit], fit_y[:n_fit], rcond=None)

    held_s = signals[n_fit:]
    mae_speaker = float(np.mean(np.abs(held_s @ probe_speaker - fit_v[n_fit:])))
    mae_content = float(np.mean(np.abs(held_s @ probe_content - fit_y[n_fit:])))
    if mae_speaker > config.probe_max_mae or mae_content > config.probe_max_mae:
        raise WorldBuildError(
            f"probe residuals too large (speaker {mae_speaker:.4f}, "
            f"content {mae_content:.4f}, bound {config.probe_max_mae})"
        )

    world.probe_speaker_mat = probe_speaker
    world.probe_content_mat = probe_content
    world.probe_speaker_mae = mae_speaker
    world.probe_content_mae = mae_content
    return world


@dataclass(frozen=True)
class ModelConfig:
    voice_dim: int = 16
    content_dim: int = 8
    signal_dim: int = 64
    hidden: tuple[int, ...] = (80, 80, 80)


@dataclass(frozen=True)
class _LayerSlot:
    w_offset: int
    w_shape: tuple[int, int]
    b_offset: int
    b_size: int


def _layer_slots(config: ModelConfig) -> tuple[list[_LayerSlot], int]:
    sizes = [config.voice_dim + config.content_dim, *config.hidden, config.signal_dim]
    slots = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w_off = offset
        offset += n_in * n_out
        b_off = offset
        offset += n_out
        slots.append(_LayerSlot(w_off, (n_out, n_in), b_off, n_out))
    return slots, offset


class ToyModel:
    """Tanh MLP with all parameters in one flat float64 vector."""

    def __init__(self, config: ModelConfig, theta: np.ndarray):
        self.config = config
        self._slots, self.dim = _layer_slots(config)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        self.theta = theta

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ToyModel":
        slots, dim = _layer_slots(config)
        theta = np.zeros(dim)
        for slot in slots:
            n_out, n_in = slot.w_shape
            w = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
            theta[slot.w_offset : slot.w_offset + n_out * n_in] = w.ravel()
        return cls(config, theta)

    def with_theta(self, theta: np.ndarray) -> "ToyModel":
        return ToyModel(self.config, theta)

    def _weights(self, theta: np.ndarray | None = None):
        t = self.theta if theta is None else theta
        for slot in self._slots:
            w = t[slot.w_offset : slot.w_offset + slot.w_shape[0] * slot.w_shape[1]]
            b = t[slot.b_offset : slot.b_offset + slot.b_size]
            yield w.reshape(slot.w_shape), b

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "d": self.dim,
            "dims": {
                "voice_dim": self.config.voice_dim,
                "content_dim": self.config.content_dim,
                "signal_dim": self.config.signal_dim,
                "hidden": list(self.config.hidden),
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        write_container(path, "model", meta, {"theta": self.theta})

    @classmethod
    def load(cls, path) -> "ToyModel":
        kind, meta, arrays = read_container(path)
        if kind != "model":
            raise ValueError(f"{path} holds a {kind!r} artifact, expected a model")
        dims = meta["dims"]
        config = ModelConfig(
            voice_dim=dims["voice_dim"],
            content_dim=dims["content_dim"],
            signal_dim=dims["signal_dim"],
            hidden=tuple(dims["hidden"]),
        )
        return cls(config, arrays["theta"])


def forward(model: ToyModel, prompts: np.ndarray, contents: np.ndarray) -> np.ndarray:
    """Model output for a batch (or single) of (prompt, content) pairs."""
    single = np.asarray(prompts).ndim == 1
    x = np.concatenate([np.atleast_2d(prompts), np.atleast_2d(contents)], axis=1)
    layers = list(model._weights())
    a = x
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
    w, b = layers[-1]
    out = a @ w.T + b
    return out[0] if single else out


def _forward_trace(model: ToyModel, x: np.ndarray):
    activations = [x]
    layers = list(model._weights())
    a = x
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
        activations.append(a)
    w, b = layers[-1]
    out = a @ w.T + b
    return out, activations


def loss_and_grad(
    model: ToyModel,
    prompts: np.ndarray,
    contents: np.ndarray,
    targets: np.ndarray,
    need_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Batch regression loss (mean squared error) and its flat gradient.

    The loss is the mean over samples of the per-sample mean squared error
    across signal coordinates, so batch loss is the mean of per-sample
    losses.
    """
    prompts = np.atleast_2d(prompts)
    contents = np.atleast_2d(contents)
    targets = np.atleast_2d(targets)
    if prompts.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    x = np.concatenate([prompts, contents], axis=1)
    out, activations = _forward_trace(model, x)
    err = out - targets
    batch, o = err.shape
    loss = float(np.mean(err * err))
    if not need_grad:
        return loss, None

    grad = np.zeros(model.dim)
    layers = list(model._weights())
    delta = 2.0 * err / (batch * o)
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        slot = model._slots[idx]
        a_prev = activations[idx]
        grad[slot.w_offset : slot.w_offset + w.size] = (delta.T @ a_prev).ravel()
        grad[slot.b_offset : slot.b_offset + slot.b_size] = delta.sum(axis=0)
        if idx > 0:
            delta = (delta @ w) * (1.0 - activations[idx] ** 2)
    return loss, grad


def per_sample_squared_grad_mean(
    model: ToyModel,
    prompts: np.ndarray,
    contents: np.ndarray,
    targets: np.ndarray,
) -> np.ndarray:
    """Mean over the batch of elementwise-squared per-sample gradients.

    Exploits the outer-product structure of dense-layer gradients: the mean
    of squared per-sample weight gradients is (delta^2)^T (a^2) / n, so no
    per-sample loop is needed.
    """
    prompts = np.atleast_2d(prompts)
    contents = np.atleast_2d(contents)
    targets = np.atleast_2d(targets)
    if prompts.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    x = np.concatenate([prompts, contents], axis=1)
    out, activations = _forward_trace(model, x)
    err = out - targets
    batch, o = err.shape

    result = np.zeros(model.dim)
    layers = list(model._weights())
    delta = 2.0 * err / o
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        slot = model._slots[idx]
        a_prev = activations[idx]
        sq = (delta**2).T @ (a_prev**2) / batch
        result[slot.w_offset : slot.w_offset + w.size] = sq.ravel()
        result[slot.b_offset : slot.b_offset + slot.b_size] = np.mean(delta**2, axis=0)
        if idx > 0:
            delta = (delta @ w) * (1.0 - activations[idx] ** 2)
    return result


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 5000
    batch_size: int = 32
    peak_lr: float = 2e-3
    warmup_frac: float = 0.1
    zero_shot_min_fraction: float = 0.95


def pretrain(
    world: SpeakerWorld,
    model: ToyModel,
    config: PretrainConfig,
    rng: np.random.Generator,
) -> ToyModel:
    """Regress the model onto the generator over fresh random voices.

    Every batch samples new unit voices from the whole sphere with noisy
    prompts and clean targets; no named world speaker is ever drawn, so the
    ability to clone them afterwards is purely zero-shot generalization.
    """
    if config.steps == 0:
        return model
    if config.steps < 0:
        raise ValueError("steps must be >= 0")
    theta = model.theta.copy()
    opt = Adam(model.dim)
    warmup = int(round(config.warmup_frac * config.steps))
    work = model.with_theta(theta)
    for step in range(1, config.steps + 1):
        voices = random_unit_voices(rng, config.batch_size, world.config.voice_dim)
        contents = world.sample_contents(rng, config.batch_size)
        prompts = world.prompt_for(voices, rng)
        targets = world.generate(voices, contents)
        _, grad = loss_and_grad(work, prompts, contents, targets)
        lr = linear_warmup_decay(step, config.steps, config.peak_lr, warmup)
        theta = opt.step(theta, grad, lr)
        work = model.with_theta(theta)
    return work


def teacher_random_voice_targets(
    world: SpeakerWorld,
    teacher: ToyModel,
    contents: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Distillation targets: the frozen teacher prompted with fresh random voices.

    One independently sampled unit voice per content row; no forget-speaker
    information enters the target.
    """
    contents = np.atleast_2d(contents)
    voices = random_unit_voices(rng, contents.shape[0], teacher.config.voice_dim)
    return forward(teacher, voices, contents)
