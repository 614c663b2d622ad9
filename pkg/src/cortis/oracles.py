"""Brute-force reference implementations used only by tests.

Nothing here shares code with the production paths it checks: the SVD is a
one-sided Jacobi iteration on the materialized matrix, gradients come from
central finite differences, top-k selection is a full sort, and the Fisher
diagonal is a per-sample python loop. Clarity over speed throughout; sizes
are capped at desk scale.
"""
from __future__ import annotations

import numpy as np

from .numkit import TruncatedSVDResult, check_matrix, fix_signs


def oracle_svd(
    m: np.ndarray,
    rank: int | None = None,
    tol: float = 1e-14,
    max_sweeps: int = 100,
) -> TruncatedSVDResult:
    """Reference SVD by one-sided Jacobi iteration on the materialized matrix.

    Returns all singular values (including near-zero ones for rank-deficient
    input) unless ``rank`` truncates them.
    """
    a = check_matrix(m).copy()
    rows, cols = a.shape
    if rows > 2000:
        raise ValueError("oracle_svd is desk scale only (rows <= 2000)")

    for _ in range(max_sweeps):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                app = float(a[:, p] @ a[:, p])
                aqq = float(a[:, q] @ a[:, q])
                apq = float(a[:, p] @ a[:, q])
                scale = np.sqrt(app * aqq)
                if scale == 0.0 or abs(apq) <= tol * scale:
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
        if not rotated:
            break

    norms = np.linalg.norm(a, axis=0)
    order = np.argsort(norms)[::-1]
    values = norms[order]
    vectors = np.zeros((rows, cols))
    for j, idx in enumerate(order):
        if values[j] > 0.0:
            vectors[:, j] = a[:, idx] / values[j]
    if rank is not None:
        values = values[:rank]
        vectors = vectors[:, :rank]
    return TruncatedSVDResult(fix_signs(vectors), values.copy())


def oracle_grad(model, prompts, contents, targets, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the batch regression loss."""
    from .toytts import loss_and_grad

    theta = model.theta
    if theta.size > 2000:
        raise ValueError("oracle_grad is desk scale only (d <= 2000)")
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        bumped = model.with_theta(_bump(theta, j, step))
        loss_plus, _ = loss_and_grad(bumped, prompts, contents, targets, need_grad=False)
        bumped = model.with_theta(_bump(theta, j, -step))
        loss_minus, _ = loss_and_grad(bumped, prompts, contents, targets, need_grad=False)
        grad[j] = (loss_plus - loss_minus) / (2.0 * step)
    return grad


def _bump(theta: np.ndarray, index: int, step: float) -> np.ndarray:
    out = theta.copy()
    out[index] += step
    return out


def oracle_topk(values: np.ndarray, k_percent: float) -> np.ndarray:
    """Full-sort top-k index selection, ties broken by lower index."""
    if not 0.0 < k_percent <= 100.0:
        raise ValueError("k_percent must be in (0, 100]")
    vals = np.asarray(values, dtype=np.float64)
    count = int(np.floor(k_percent / 100.0 * vals.size))
    ranked = sorted(range(vals.size), key=lambda i: (-vals[i], i))
    return np.array(sorted(ranked[:count]), dtype=np.int64)


def oracle_fisher_diag(model, prompts, contents, targets) -> np.ndarray:
    """Mean squared per-sample gradient via an explicit sample loop."""
    from .toytts import loss_and_grad

    n = prompts.shape[0]
    if n > 64:
        raise ValueError("oracle_fisher_diag is desk scale only (<= 64 samples)")
    acc = np.zeros(model.theta.size)
    for i in range(n):
        _, grad = loss_and_grad(
            model, prompts[i : i + 1], contents[i : i + 1], targets[i : i + 1]
        )
        acc += grad * grad
    return acc / n
