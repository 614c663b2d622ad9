"""Dense linear-algebra primitives for basis extraction and merging.

The central routine is a truncated SVD that never materializes its tall
input: the caller streams row chunks of a d x C matrix, the Gram matrix
C x C is accumulated chunk by chunk, eigendecomposed, and the left singular
vectors are recovered in a second streaming pass. Peak working memory is one
chunk plus the Gram matrix plus the d x r output, with C bounded by the sum
of per-request basis ranks (a few hundred here).

All numerics are float64; singular vectors follow a deterministic sign
convention (the largest-magnitude entry of each column is made positive) so
artifacts are reproducible across runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

ChunkStream = Union[Sequence[np.ndarray], Callable[[], Iterable[np.ndarray]]]

DEFAULT_RANK_CUTOFF_REL = 1e-10
DEFAULT_CHUNK_ROWS = 4096


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D finite float array and return it as float64."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_vector(a: np.ndarray, name: str = "vector") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class TruncatedSVDResult:
    """Top left singular vectors (orthonormal columns) with their values."""

    left_vectors: np.ndarray
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.left_vectors.shape[1]

    def __post_init__(self) -> None:
        if self.left_vectors.ndim != 2:
            raise ValueError("left_vectors must be 2-D")
        if self.singular_values.shape != (self.left_vectors.shape[1],):
            raise ValueError("singular_values length must match column count")


def _iterate(chunks: ChunkStream) -> Iterator[np.ndarray]:
    source = chunks() if callable(chunks) else chunks
    for chunk in source:
        yield check_matrix(chunk, "chunk")


def stream_rows(matrix: np.ndarray, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> Callable[[], Iterator[np.ndarray]]:
    """Chunk provider over the rows of an in-memory matrix."""
    m = check_matrix(matrix)
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")

    def provider() -> Iterator[np.ndarray]:
        for start in range(0, m.shape[0], chunk_rows):
            yield m[start : start + chunk_rows]

    return provider


def gram_accumulate(chunks: ChunkStream) -> np.ndarray:
    """Accumulate G = M^T M from streamed row chunks of M.

    The result is independent of how the rows are partitioned (up to float
    summation order). Chunks must agree on column count.
    """
    gram: np.ndarray | None = None
    for chunk in _iterate(chunks):
        if gram is None:
            gram = np.zeros((chunk.shape[1], chunk.shape[1]))
        elif chunk.shape[1] != gram.shape[0]:
            raise ValueError(
                f"chunk column count {chunk.shape[1]} does not match {gram.shape[0]}"
            )
        gram += chunk.T @ chunk
    if gram is None:
        raise ValueError("empty chunk stream")
    return gram


def _count_rows(chunks: ChunkStream) -> int:
    return sum(chunk.shape[0] for chunk in _iterate(chunks))


def gram_truncated_svd(
    chunks: ChunkStream,
    rank: int,
    cutoff: float | None = None,
) -> TruncatedSVDResult:
    """Truncated SVD of a streamed tall matrix via its Gram matrix.

    Eigenvalues of G below cutoff^2 are discarded before forming
    U = M V diag(1/sigma), which guards the inverse square root against
    numerical-noise directions. ``cutoff`` is an absolute singular-value
    threshold; when None it defaults to 1e-10 times the largest singular
    value. If every singular value falls below the cutoff the result is
    empty (rank 0), which is not an error.

    ``chunks`` must be re-iterable (a sequence of row blocks, or a zero-arg
    callable returning a fresh iterator) because two passes are made.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if cutoff is not None and not cutoff > 0:
        raise ValueError("cutoff must be > 0")

    gram = gram_accumulate(chunks)
    n_cols = gram.shape[0]
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    sigma = np.sqrt(eigvals)

    if cutoff is None:
        cutoff = DEFAULT_RANK_CUTOFF_REL * (sigma[0] if n_cols else 0.0)
    keep = int(np.sum(sigma > cutoff))
    r = min(rank, keep)

    total_rows = _count_rows(chunks)
    if r == 0:
        return TruncatedSVDResult(np.zeros((total_rows, 0)), np.zeros(0))

    recover = eigvecs[:, :r] / sigma[:r]
    blocks = [chunk @ recover for chunk in _iterate(chunks)]
    left = np.vstack(blocks)
    if left.shape[0] != total_rows:
        raise ValueError("chunk stream changed between passes; pass a re-iterable source")

    # Gram recovery can lose orthogonality when trailing retained values are
    # close; a cheap re-orthonormalization pass restores it without changing
    # well-separated directions.
    dev = np.abs(left.T @ left - np.eye(r)).max()
    if dev > 1e-12:
        left = _modified_gram_schmidt(left, drop_tol=0.0)
    left = fix_signs(left)
    return TruncatedSVDResult(left, sigma[:r].copy())


def _modified_gram_schmidt(a: np.ndarray, drop_tol: float) -> np.ndarray:
    cols: list[np.ndarray] = []
    for j in range(a.shape[1]):
        v = a[:, j].copy()
        norm0 = float(np.linalg.norm(v))
        for _ in range(2):
            for q in cols:
                v -= (q @ v) * q
        norm = float(np.linalg.norm(v))
        if norm0 == 0.0 or norm <= drop_tol * norm0:
            continue
        cols.append(v / norm)
    if not cols:
        return np.zeros((a.shape[0], 0))
    return np.column_stack(cols)


def orthonormalize(m: np.ndarray, drop_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis for the column space of ``m``.

    Modified Gram-Schmidt with a second re-orthogonalization pass; columns
    whose residual falls below ``drop_tol`` times their original norm are
    treated as linearly dependent and dropped.
    """
    a = check_matrix(m)
    if a.shape[1] > a.shape[0]:
        raise ValueError("column count must not exceed row count")
    return _modified_gram_schmidt(a, drop_tol=drop_tol)


def fix_signs(u: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    out = u.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        if col.shape[0] == 0:
            continue
        pivot = int(np.argmax(np.abs(col)))
        if col[pivot] < 0:
            out[:, j] = -col
    return out


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spaces of two bases."""
    qa = orthonormalize(a)
    qb = orthonormalize(b)
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        return np.zeros(0)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))
