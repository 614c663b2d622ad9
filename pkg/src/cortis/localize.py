"""Contrastive saliency and top-k trainable-mask construction.

The saliency of a coordinate is the ratio of the current forget-side Fisher
to the elementwise maximum of the remain Fisher and every prior forget
Fisher, with a small epsilon guarding both sides. The denominator max acts
as a soft guard: coordinates important for retention or for any previously
unlearned speaker sink in the ranking. The top-k% of the flat vector, ties
broken toward lower index, forms the trainable mask; everything else stays
frozen for the request.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .container import read_container, write_container
from .fisher import FisherDiagonal

DEFAULT_EPSILON = 1e-8


@dataclass(frozen=True)
class SaliencyMask:
    """Sorted trainable-coordinate indices for one unlearning request."""

    request_index: int
    indices: np.ndarray
    k_percent: float
    epsilon: float
    dim: int

    def __post_init__(self) -> None:
        idx = self.indices
        if idx.ndim != 1 or idx.dtype.kind != "i":
            raise ValueError("indices must be a 1-D integer array")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("indices out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        expected = int(np.floor(self.k_percent / 100.0 * self.dim))
        if idx.size != expected:
            raise ValueError(f"mask has {idx.size} indices, expected {expected}")

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def dense(self) -> np.ndarray:
        """Boolean membership vector of length dim."""
        out = np.zeros(self.dim, dtype=bool)
        out[self.indices] = True
        return out

    def save(self, path) -> None:
        meta = {
            "d": self.dim,
            "request_index": self.request_index,
            "k_percent": self.k_percent,
            "epsilon": self.epsilon,
        }
        write_container(path, "mask", meta, {"indices": self.indices})

    @classmethod
    def load(cls, path) -> "SaliencyMask":
        kind, meta, arrays = read_container(path)
        if kind != "mask":
            raise ValueError(f"{path} holds a {kind!r} artifact, expected a mask")
        return cls(
            meta["request_index"],
            arrays["indices"],
            meta["k_percent"],
            meta["epsilon"],
            meta["d"],
        )


def saliency(
    fisher_forget: FisherDiagonal,
    fisher_remain: FisherDiagonal,
    prior_forget_fishers: Sequence[FisherDiagonal] = (),
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Contrastive saliency vector over the flat parameter space."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    d = fisher_forget.dim
    denominator = fisher_remain.values
    if fisher_remain.dim != d:
        raise ValueError("remain Fisher dimension mismatch")
    for prior in prior_forget_fishers:
        if prior.dim != d:
            raise ValueError("prior forget Fisher dimension mismatch")
        denominator = np.maximum(denominator, prior.values)
    return (fisher_forget.values + epsilon) / (denominator + epsilon)


def top_k_mask(
    saliency_values: np.ndarray,
    k_percent: float,
    request_index: int,
    epsilon: float = DEFAULT_EPSILON,
) -> SaliencyMask:
    """Trainable mask from the top-k% of a saliency vector.

    Selection is global over the flat vector; ties are broken toward the
    lower coordinate index so masks are deterministic.
    """
    if not 0.0 < k_percent <= 100.0:
        raise ValueError("k_percent must be in (0, 100]")
    values = np.asarray(saliency_values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("saliency must be a flat vector")
    d = values.size
    count = int(np.floor(k_percent / 100.0 * d))
    order = np.lexsort((np.arange(d), -values))
    chosen = np.sort(order[:count]).astype(np.int64)
    return SaliencyMask(request_index, chosen, k_percent, epsilon, d)


def mask_jaccard(a: SaliencyMask, b: SaliencyMask) -> float:
    """Jaccard overlap |a intersect b| / |a union b| of two masks."""
    if a.dim != b.dim:
        raise ValueError("masks must cover the same parameter space")
    sa = set(a.indices.tolist())
    sb = set(b.indices.tolist())
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)
