"""Diagonal Fisher information estimates over utterance datasets.

The estimate is the empirical variant: the mean over samples of the
elementwise-squared per-sample gradient of the training loss at the given
parameters. The remain-side diagonal is computed once per run over a fixed
seeded subset and cached, so later requests reuse the identical object.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .toytts import SpeakerWorld, ToyModel, per_sample_squared_grad_mean


@dataclass(frozen=True)
class FisherDiagonal:
    """Per-parameter mean squared gradient with provenance."""

    values: np.ndarray
    source: str
    sample_count: int

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError("values must be a flat vector")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Fisher diagonal contains non-finite entries")
        if np.any(self.values < 0):
            raise ValueError("Fisher diagonal contains negative entries")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def dim(self) -> int:
        return self.values.size

    def save(self, path, request_index: int | None = None) -> None:
        meta = {"d": self.dim, "source": self.source, "sample_count": self.sample_count}
        if request_index is not None:
            meta["request_index"] = request_index
        write_container(path, "fisher", meta, {"values": self.values})

    @classmethod
    def load(cls, path) -> "FisherDiagonal":
        kind, meta, arrays = read_container(path)
        if kind != "fisher":
            raise ValueError(f"{path} holds a {kind!r} artifact, expected a fisher diagonal")
        return cls(arrays["values"], meta["source"], meta["sample_count"])


def fisher_diag(
    model: ToyModel,
    prompts: np.ndarray,
    contents: np.ndarray,
    targets: np.ndarray,
    max_samples: int | None = None,
    source: str = "dataset",
) -> FisherDiagonal:
    """Diagonal Fisher over a dataset, truncated to the first ``max_samples``."""
    prompts = np.atleast_2d(prompts)
    contents = np.atleast_2d(contents)
    targets = np.atleast_2d(targets)
    n = prompts.shape[0]
    if n == 0:
        raise ValueError("dataset must be nonempty")
    if max_samples is not None:
        if max_samples < 1:
            raise ValueError("max_samples must be >= 1")
        n = min(n, max_samples)
    values = per_sample_squared_grad_mean(model, prompts[:n], contents[:n], targets[:n])
    return FisherDiagonal(values, source, n)


def remain_fisher(
    world: SpeakerWorld,
    model: ToyModel,
    remain_speakers: np.ndarray,
    subset_size: int,
    rng: np.random.Generator,
) -> FisherDiagonal:
    """Fisher diagonal of the retain loss over a seeded remain-data subset.

    The subset draws speakers uniformly from the remain pool with fresh
    contents and noisy prompts; the caller fixes the stream so the subset is
    identical whenever it is rebuilt.
    """
    if subset_size < 1:
        raise ValueError("subset_size must be >= 1")
    ids = rng.choice(np.asarray(remain_speakers), size=subset_size, replace=True)
    voices = world.voices[ids]
    contents = world.sample_contents(rng, subset_size)
    prompts = world.prompt_for(voices, rng)
    targets = world.generate(voices, contents)
    return fisher_diag(model, prompts, contents, targets, source="remain")


class RemainFisherCache:
    """Compute-once holder for the remain Fisher diagonal of a run."""

    def __init__(self) -> None:
        self._value: FisherDiagonal | None = None

    def get(
        self,
        world: SpeakerWorld,
        model: ToyModel,
        remain_speakers: np.ndarray,
        subset_size: int,
        seed_stream,
    ) -> FisherDiagonal:
        if self._value is None:
            self._value = remain_fisher(world, model, remain_speakers, subset_size, seed_stream())
        return self._value
