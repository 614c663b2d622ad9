"""Similarity and content metrics, threshold calibration, and analyses.

Speaker similarity is the cosine between probed voice embeddings of a
reference utterance's clean target and a generated signal. Retention and
forgetting thresholds are calibrated from the world alone: the lower Tukey
whisker of the same-speaker similarity distribution and the upper whisker of
the different-speaker distribution, mirroring how a deployment would anchor
pass/fail bands in real speaker-verification scores before touching any
model.

Evaluation prompts for previously forgotten speakers are regenerated from
the world's latent voices on demand; they are the experimenter's measuring
instrument and never persist inside run state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .toytts import SpeakerWorld, ToyModel, Utterance, forward


class CalibrationError(RuntimeError):
    """Raised when the similarity distributions cannot support thresholds."""


@dataclass(frozen=True)
class Thresholds:
    """Calibrated pass/fail bounds for similarity scores."""

    retain_fail_below: float
    forget_fail_above: float
    pairs: int
    whisker: str = "tukey-1.5iqr-clipped"

    def __post_init__(self) -> None:
        if not self.forget_fail_above < self.retain_fail_below:
            raise CalibrationError(
                f"forget bound {self.forget_fail_above:.4f} must sit below "
                f"retain bound {self.retain_fail_below:.4f}"
            )

    def to_dict(self) -> dict:
        return {
            "retain_fail_below": self.retain_fail_below,
            "forget_fail_above": self.forget_fail_above,
            "pairs": self.pairs,
            "whisker": self.whisker,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Thresholds":
        return cls(
            data["retain_fail_below"],
            data["forget_fail_above"],
            data["pairs"],
            data.get("whisker", "tukey-1.5iqr-clipped"),
        )


@dataclass
class EvalReport:
    """Per-request metrics: content errors and similarities with seed stats."""

    request_index: int
    w_r: float
    w_f: float
    s_r: float
    s_f: dict[int, float]
    w_r_std: float = 0.0
    w_f_std: float = 0.0
    s_r_std: float = 0.0
    s_f_std: dict[int, float] = field(default_factory=dict)
    per_seed: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not -1.0 <= self.s_r <= 1.0:
            raise ValueError("similarity out of range")
        if self.w_r < 0 or self.w_f < 0:
            raise ValueError("content error must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "request_index": self.request_index,
            "w_r": self.w_r,
            "w_f": self.w_f,
            "s_r": self.s_r,
            "s_f": {str(k): v for k, v in self.s_f.items()},
            "w_r_std": self.w_r_std,
            "w_f_std": self.w_f_std,
            "s_r_std": self.s_r_std,
            "s_f_std": {str(k): v for k, v in self.s_f_std.items()},
            "per_seed": self.per_seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            request_index=data["request_index"],
            w_r=data["w_r"],
            w_f=data["w_f"],
            s_r=data["s_r"],
            s_f={int(k): v for k, v in data["s_f"].items()},
            w_r_std=data.get("w_r_std", 0.0),
            w_f_std=data.get("w_f_std", 0.0),
            s_r_std=data.get("s_r_std", 0.0),
            s_f_std={int(k): v for k, v in data.get("s_f_std", {}).items()},
            per_seed=data.get("per_seed", {}),
        )


def embedding_cosine(world: SpeakerWorld, signal_a: np.ndarray, signal_b: np.ndarray) -> float:
    """Cosine of probed voice embeddings of two signals."""
    ea = world.probe_speaker(signal_a)
    eb = world.probe_speaker(signal_b)
    na = float(np.linalg.norm(ea))
    nb = float(np.linalg.norm(eb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm speaker embedding; similarity undefined")
    return float(np.clip(ea @ eb / (na * nb), -1.0, 1.0))


def similarity(world: SpeakerWorld, reference: Utterance, generated: np.ndarray) -> float:
    """Speaker similarity between a reference utterance and a generated signal."""
    return embedding_cosine(world, reference.target, generated)


def _tukey_whiskers(values: np.ndarray) -> tuple[float, float]:
    q1, q3 = np.percentile(values, [25.0, 75.0])
    iqr = q3 - q1
    low = max(float(values.min()), float(q1 - 1.5 * iqr))
    high = min(float(values.max()), float(q3 + 1.5 * iqr))
    return low, high


def calibrate_thresholds(
    world: SpeakerWorld,
    rng: np.random.Generator,
    pairs: int = 200,
) -> Thresholds:
    """Thresholds from same- and different-speaker utterance-pair similarities.

    Only world data enters: both sides of every pair are clean generator
    targets, so the bounds are independent of any model. Raises when the two
    distributions overlap enough to invert the bounds.
    """
    if pairs < 50:
        raise ValueError("pairs must be >= 50")
    n = world.num_speakers

    same = np.zeros(pairs)
    for i in range(pairs):
        s = int(rng.integers(n))
        contents = world.sample_contents(rng, 2)
        a = world.generate(world.voices[s], contents[0])
        b = world.generate(world.voices[s], contents[1])
        same[i] = embedding_cosine(world, a, b)

    diff = np.zeros(pairs)
    for i in range(pairs):
        s, t = rng.choice(n, size=2, replace=False)
        contents = world.sample_contents(rng, 2)
        a = world.generate(world.voices[s], contents[0])
        b = world.generate(world.voices[t], contents[1])
        diff[i] = embedding_cosine(world, a, b)

    retain_low, _ = _tukey_whiskers(same)
    _, forget_high = _tukey_whiskers(diff)
    if forget_high >= retain_low:
        raise CalibrationError(
            f"similarity distributions overlap: different-speaker upper whisker "
            f"{forget_high:.4f} >= same-speaker lower whisker {retain_low:.4f}"
        )
    return Thresholds(retain_fail_below=retain_low, forget_fail_above=forget_high, pairs=pairs)


@dataclass(frozen=True)
class EvalConfig:
    remain_speakers: tuple[int, ...]
    utterances_per_speaker: int = 4
    gen_seeds: int = 3


def _speaker_metrics(
    model: ToyModel,
    world: SpeakerWorld,
    speaker_id: int,
    contents: np.ndarray,
    references: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """(mean similarity, mean content error) for one speaker under fresh prompts."""
    n = contents.shape[0]
    voice = np.tile(world.voices[speaker_id], (n, 1))
    prompts = world.prompt_for(voice, rng)
    generated = forward(model, prompts, contents)
    sims = np.zeros(n)
    for i in range(n):
        sims[i] = embedding_cosine(world, references[i], generated[i])
    content_err = float(np.mean((world.probe_content(generated) - contents) ** 2))
    return float(np.mean(sims)), content_err


def evaluate(
    model: ToyModel,
    world: SpeakerWorld,
    forgotten_speakers: Sequence[int],
    config: EvalConfig,
    seed: int,
    request_index: int = 0,
) -> EvalReport:
    """Metrics over held-out remain speakers and every forgotten speaker.

    The evaluation set (contents and reference targets) is fixed by the
    seed; each generation seed redraws only the prompt noise, and reported
    values are means over generation seeds with their standard deviations.
    """
    data_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x65766C]))
    n_utt = config.utterances_per_speaker

    def eval_set(speaker_id: int) -> tuple[np.ndarray, np.ndarray]:
        contents = world.sample_contents(data_rng, n_utt)
        refs = world.generate(np.tile(world.voices[speaker_id], (n_utt, 1)), contents)
        return contents, refs

    remain_sets = {s: eval_set(s) for s in config.remain_speakers}
    forget_sets = {s: eval_set(s) for s in forgotten_speakers}

    s_r_seeds, w_r_seeds, w_f_seeds = [], [], []
    s_f_seeds: dict[int, list[float]] = {s: [] for s in forgotten_speakers}
    for gen_seed in range(config.gen_seeds):
        gen_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x67656E, gen_seed]))
        sims_r, errs_r = [], []
        for s, (contents, refs) in remain_sets.items():
            sim, err = _speaker_metrics(model, world, s, contents, refs, gen_rng)
            sims_r.append(sim)
            errs_r.append(err)
        s_r_seeds.append(float(np.mean(sims_r)))
        w_r_seeds.append(float(np.mean(errs_r)))

        errs_f = []
        for s, (contents, refs) in forget_sets.items():
            sim, err = _speaker_metrics(model, world, s, contents, refs, gen_rng)
            s_f_seeds[s].append(sim)
            errs_f.append(err)
        w_f_seeds.append(float(np.mean(errs_f)) if errs_f else 0.0)

    def _std(values: list[float]) -> float:
        return float(np.std(values)) if len(values) > 1 else 0.0

    return EvalReport(
        request_index=request_index,
        w_r=float(np.mean(w_r_seeds)),
        w_f=float(np.mean(w_f_seeds)),
        s_r=float(np.mean(s_r_seeds)),
        s_f={s: float(np.mean(v)) for s, v in s_f_seeds.items()},
        w_r_std=_std(w_r_seeds),
        w_f_std=_std(w_f_seeds),
        s_r_std=_std(s_r_seeds),
        s_f_std={s: _std(v) for s, v in s_f_seeds.items()},
        per_seed={
            "s_r": s_r_seeds,
            "w_r": w_r_seeds,
            "w_f": w_f_seeds,
            "s_f": {str(s): v for s, v in s_f_seeds.items()},
        },
    )


def separability_matrix(
    world: SpeakerWorld,
    speakers: Sequence[int],
    utterances_per_speaker: int = 30,
    seed: int = 0,
) -> np.ndarray:
    """Pairwise cosine similarity between mean probed speaker embeddings.

    Each speaker's embedding is the mean probe over a fixed sample of clean
    utterance targets; the matrix is symmetric with a unit diagonal.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x736570]))
    ids = list(speakers)
    embeddings = []
    for s in ids:
        contents = world.sample_contents(rng, utterances_per_speaker)
        signals = world.generate(np.tile(world.voices[s], (utterances_per_speaker, 1)), contents)
        embeddings.append(world.probe_speaker(signals).mean(axis=0))
    mat = np.eye(len(ids))
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            ei, ej = embeddings[i], embeddings[j]
            val = float(ei @ ej / (np.linalg.norm(ei) * np.linalg.norm(ej)))
            mat[i, j] = mat[j, i] = val
    return mat
