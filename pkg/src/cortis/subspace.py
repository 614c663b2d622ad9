"""Gradient-snapshot memory, per-request bases, fixed-rank merging, projection.

Bases live on an explicit sorted coordinate set (the union of the saliency
masks seen so far) with vectors stored over that set only; when a later
request widens the union, existing vectors are zero-extended. Snapshots are
deflated against the cumulative basis at capture time, so each per-request
basis is orthogonal to everything already protected. Merging stacks each
basis scaled by its singular values (columns weighted by how much the
optimizer used the direction) and takes a fixed-rank truncated SVD of the
stack, which bounds projection cost by a constant regardless of how many
requests have accumulated.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit
from .container import read_container, write_container
from .localize import SaliencyMask


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal column basis with singular values over a coordinate set."""

    request_index: int | None
    coordinate_set: np.ndarray
    vectors: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        coords = self.coordinate_set
        if coords.ndim != 1 or coords.dtype.kind != "i":
            raise ValueError("coordinate_set must be a 1-D integer array")
        if coords.size and np.any(np.diff(coords) <= 0):
            raise ValueError("coordinate_set must be strictly increasing")
        if self.vectors.shape[0] != coords.size:
            raise ValueError("vector rows must match coordinate_set size")
        if self.sigma.shape != (self.vectors.shape[1],):
            raise ValueError("sigma length must match column count")

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.rank == 0

    @classmethod
    def empty(cls, request_index: int | None = None) -> "SubspaceBasis":
        return cls(request_index, np.zeros(0, dtype=np.int64), np.zeros((0, 0)), np.zeros(0))

    def embed(self, coordinate_set: np.ndarray) -> "SubspaceBasis":
        """Zero-extend the basis onto a superset coordinate domain."""
        coords = np.asarray(coordinate_set, dtype=np.int64)
        if self.is_empty:
            return SubspaceBasis(self.request_index, coords, np.zeros((coords.size, 0)), self.sigma)
        positions = np.searchsorted(coords, self.coordinate_set)
        if np.any(positions >= coords.size) or np.any(coords[positions] != self.coordinate_set):
            raise ValueError("target coordinate set does not contain the basis domain")
        vectors = np.zeros((coords.size, self.rank))
        vectors[positions] = self.vectors
        return SubspaceBasis(self.request_index, coords, vectors, self.sigma)

    def save(self, path) -> None:
        meta = {"request_index": self.request_index, "rank": self.rank}
        write_container(
            path,
            "basis",
            meta,
            {
                "coordinate_set": self.coordinate_set,
                "vectors": self.vectors,
                "sigma": self.sigma,
            },
        )

    @classmethod
    def load(cls, path) -> "SubspaceBasis":
        kind, meta, arrays = read_container(path)
        if kind != "basis":
            raise ValueError(f"{path} holds a {kind!r} artifact, expected a basis")
        return cls(
            meta["request_index"],
            arrays["coordinate_set"],
            arrays["vectors"],
            arrays["sigma"],
        )


class SnapshotBuffer:
    """Collects deflated gradient snapshots at a fixed step interval."""

    def __init__(self, request_index: int, interval: int, coordinate_set: np.ndarray):
        if interval < 1:
            raise ValueError("interval must be >= 1")
        self.request_index = request_index
        self.interval = interval
        self.coordinate_set = np.asarray(coordinate_set, dtype=np.int64)
        self.snapshots: list[np.ndarray] = []
        self._last_step = 0

    def capture(
        self,
        step: int,
        grad: np.ndarray,
        cumulative: SubspaceBasis | None,
    ) -> bool:
        """Store the restricted, deflated gradient when the step is due.

        Returns True when a snapshot was stored. Steps must arrive in
        increasing order; off-interval steps are no-ops.
        """
        if step <= self._last_step:
            raise ValueError(f"step counter must be monotonic (got {step} after {self._last_step})")
        self._last_step = step
        if step % self.interval != 0:
            return False
        g = np.asarray(grad, dtype=np.float64)[self.coordinate_set].copy()
        if cumulative is not None and not cumulative.is_empty:
            u = cumulative.embed(self.coordinate_set).vectors
            # Two deflation passes keep the residual component at roundoff.
            g -= u @ (u.T @ g)
            g -= u @ (u.T @ g)
        self.snapshots.append(g)
        return True


def extract_basis(buffer: SnapshotBuffer, rank: int, cutoff: float | None = None) -> SubspaceBasis:
    """Truncated SVD of the stacked snapshots (columns) for one request."""
    nonzero = [s for s in buffer.snapshots if np.linalg.norm(s) > 0.0]
    if not buffer.snapshots:
        raise ValueError("no snapshots captured for this request")
    if not nonzero:
        warnings.warn(
            f"request {buffer.request_index}: all gradient snapshots are zero; "
            "no new directions to protect",
            RuntimeWarning,
            stacklevel=2,
        )
        return SubspaceBasis(
            buffer.request_index,
            buffer.coordinate_set,
            np.zeros((buffer.coordinate_set.size, 0)),
            np.zeros(0),
        )
    stacked = np.column_stack(nonzero)
    result = numkit.gram_truncated_svd(numkit.stream_rows(stacked), rank, cutoff)
    return SubspaceBasis(
        buffer.request_index, buffer.coordinate_set, result.left_vectors, result.singular_values
    )


def merge(bases: Sequence[SubspaceBasis], rank_merge: int) -> SubspaceBasis:
    """Fixed-rank merge of per-request bases via the energy-weighted stack.

    Each basis contributes its vectors scaled column-wise by its singular
    values; the merged basis is the rank-limited truncated SVD of the
    concatenation over the union coordinate domain.
    """
    active = [b for b in bases if not b.is_empty]
    if not active:
        return SubspaceBasis.empty(None)
    union = active[0].coordinate_set
    for b in active[1:]:
        union = np.union1d(union, b.coordinate_set)
    weighted = [b.embed(union).vectors * b.sigma for b in active]
    stacked = np.concatenate(weighted, axis=1)
    result = numkit.gram_truncated_svd(numkit.stream_rows(stacked), rank_merge)
    return SubspaceBasis(None, union, result.left_vectors, result.singular_values)


class DeltaProjector:
    """Per-request projector of weight deltas against the merged basis.

    The merged basis rows are restricted to the trainable mask and
    re-orthonormalized once, so applying the projector keeps the delta
    supported inside the mask while still annihilating its component along
    the full basis. With no basis (first request) the projector is the
    identity.
    """

    def __init__(self, positions: np.ndarray, q: np.ndarray):
        self._positions = positions
        self._q = q

    @classmethod
    def prepare(cls, mask: SaliencyMask | None, merged: SubspaceBasis | None) -> "DeltaProjector":
        if merged is None or merged.is_empty:
            return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 0)))
        coords = merged.coordinate_set
        if mask is None:
            positions = coords
            rows = merged.vectors
        else:
            keep = np.isin(coords, mask.indices)
            positions = coords[keep]
            rows = merged.vectors[keep]
        if positions.size == 0:
            return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 0)))
        if mask is None:
            q = rows
        else:
            # The restriction may be wide (fewer mask rows than basis columns)
            # and is rarely orthonormal, so rebuild a basis for its span.
            q = numkit._modified_gram_schmidt(rows, drop_tol=1e-10)
        return cls(positions, q)

    @property
    def active(self) -> bool:
        return self._q.shape[1] > 0

    def apply(self, delta: np.ndarray) -> np.ndarray:
        """Return the delta with its protected-subspace component removed."""
        out = np.asarray(delta, dtype=np.float64).copy()
        if not self.active:
            return out
        restricted = out[self._positions]
        restricted -= self._q @ (self._q.T @ restricted)
        out[self._positions] = restricted
        return out


def project_delta(
    delta: np.ndarray,
    mask: SaliencyMask | None,
    merged: SubspaceBasis | None,
) -> np.ndarray:
    """One-shot projection of a masked weight delta (see DeltaProjector)."""
    return DeltaProjector.prepare(mask, merged).apply(delta)
