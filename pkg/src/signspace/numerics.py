"""Small dense linear-algebra and scoring kernels.

Matrices are 2-D float64 numpy arrays (row-major). Singular values are
computed through the smaller Gram matrix with a cyclic Jacobi eigensolver:
every matrix in this codebase has a short side of at most a few dozen, where
Jacobi is simple, accurate, and fast enough. The eigensolver also accepts a
stack of same-shape matrices and rotates them all per sweep, which is what
the per-frame skeleton feature path uses.
"""

from __future__ import annotations

import numpy as np

from .types import NumericError, ValidationError

_EPS = np.finfo(np.float64).eps


def _as_matrix(a, what: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{what}: expected a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what}: non-finite entries")
    return arr


def _jacobi_diagonalize(mats: np.ndarray, rel_tol: float, max_sweeps: int = 60) -> np.ndarray:
    """Run cyclic Jacobi sweeps on a stack (B, k, k) of symmetric matrices
    until every off-diagonal magnitude falls below rel_tol * max|A| (per
    matrix). Returns the final near-diagonal stack.
    """
    A = np.array(mats, dtype=np.float64)
    b, k, _ = A.shape
    if k == 1:
        return A
    # Per-matrix absolute threshold; a zero matrix is already converged.
    thresh = rel_tol * np.max(np.abs(A), axis=(1, 2))
    iu = np.triu_indices(k, 1)
    for _ in range(max_sweeps):
        off = np.max(np.abs(A[:, iu[0], iu[1]]), axis=1)
        if np.all(off <= thresh):
            return A
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[:, p, q]
                active = np.abs(apq) > thresh
                if not np.any(active):
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    tau = (A[:, q, q] - A[:, p, p]) / (2.0 * apq)
                tau = np.where(active, tau, 0.0)
                t = np.where(tau >= 0.0, 1.0, -1.0) / (
                    np.abs(tau) + np.sqrt(1.0 + tau * tau)
                )
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = A[:, p, :]
                rq = A[:, q, :]
                new_p = c[:, None] * rp - s[:, None] * rq
                new_q = s[:, None] * rp + c[:, None] * rq
                # Inactive matrices must be bit-exact no-ops.
                mask = active[:, None]
                A[:, p, :] = np.where(mask, new_p, rp)
                A[:, q, :] = np.where(mask, new_q, rq)
                cp = A[:, :, p]
                cq = A[:, :, q]
                new_cp = c[:, None] * cp - s[:, None] * cq
                new_cq = s[:, None] * cp + c[:, None] * cq
                A[:, :, p] = np.where(mask, new_cp, cp)
                A[:, :, q] = np.where(mask, new_cq, cq)
                A[:, p, q] = np.where(active, 0.0, A[:, p, q])
                A[:, q, p] = np.where(active, 0.0, A[:, q, p])
    off = np.max(np.abs(A[:, iu[0], iu[1]]), axis=1)
    if np.all(off <= thresh):
        return A
    raise NumericError(f"jacobi eigensolver: no convergence after {max_sweeps} sweeps")


def _sorted_descending(values: np.ndarray) -> np.ndarray:
    """Descending stable sort along the last axis (ties keep original order)."""
    order = np.argsort(-values, axis=-1, kind="stable")
    return np.take_along_axis(values, order, axis=-1)


def jacobi_eigh(a, tol: float | None = None) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Cyclic Jacobi rotations run until every off-diagonal magnitude is below
    `tol` (default 1e-12) times max|A|.
    """
    A = _as_matrix(a, "jacobi_eigh")
    k, k2 = A.shape
    if k != k2:
        raise ValidationError(f"jacobi_eigh: matrix must be square, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > 1e-12 * scale:
        raise ValidationError("jacobi_eigh: matrix is not symmetric")
    rel_tol = 1e-12 if tol is None else float(tol)
    if rel_tol <= 0.0:
        raise ValidationError("jacobi_eigh: tol must be positive")
    D = _jacobi_diagonalize(A[None, :, :], rel_tol)
    return _sorted_descending(np.diagonal(D, axis1=1, axis2=2).copy())[0]


def _gram_singular_values(mats: np.ndarray) -> np.ndarray:
    """Singular values for a stack (B, m, n): sqrt of the eigenvalues of the
    smaller Gram matrix, sorted descending per matrix."""
    b, m, n = mats.shape
    if n <= m:
        gram = np.einsum("bij,bik->bjk", mats, mats)
    else:
        gram = np.einsum("bij,bkj->bik", mats, mats)
    gram = 0.5 * (gram + np.transpose(gram, (0, 2, 1)))
    k = gram.shape[1]
    # Tighter-than-default threshold keeps sqrt() error on small singular
    # values well below the 1e-8 contract; floor sits just above the rounding
    # noise a sweep can reach.
    rel_tol = max(1e-15, 4.0 * k * _EPS)
    D = _jacobi_diagonalize(gram, rel_tol)
    eig = _sorted_descending(np.diagonal(D, axis1=1, axis2=2).copy())
    return np.sqrt(np.maximum(eig, 0.0))


def singular_values(a) -> np.ndarray:
    """Singular values of an m-by-n matrix: min(m, n) nonnegative reals sorted
    descending."""
    A = _as_matrix(a, "singular_values")
    return _gram_singular_values(A[None, :, :])[0]


def singular_values_stack(mats) -> np.ndarray:
    """Singular values of a stack (B, m, n) of same-shape matrices; returns
    (B, min(m, n)). Each matrix is solved independently, so results match
    the single-matrix path bit for bit."""
    arr = np.asarray(mats, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"singular_values_stack: expected 3-D stack, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("singular_values_stack: non-finite entries")
    if arr.shape[0] == 0:
        return np.zeros((0, min(arr.shape[1], arr.shape[2])))
    return _gram_singular_values(arr)


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two nonzero vectors, clamped to [-1, 1]."""
    uv = np.asarray(u, dtype=np.float64)
    vv = np.asarray(v, dtype=np.float64)
    if uv.shape != vv.shape or uv.ndim != 1:
        raise ValidationError(
            f"cosine_similarity: dimension mismatch {uv.shape} vs {vv.shape}"
        )
    nu = float(np.linalg.norm(uv))
    nv = float(np.linalg.norm(vv))
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine_similarity: zero-norm input")
    return float(np.clip(float(uv @ vv) / (nu * nv), -1.0, 1.0))


def cosine_distance(u, v) -> float:
    """1 - cosine_similarity; in [0, 2]. Ranking by ascending distance is the
    same as ranking by descending similarity."""
    return 1.0 - cosine_similarity(u, v)


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    """Max-shifted softmax over a score vector; preserves argmax."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError("softmax: expected a nonempty 1-D score vector")
    if not np.all(np.isfinite(s)):
        raise ValidationError("softmax: non-finite scores")
    if not temperature > 0.0:
        raise ValidationError("softmax: temperature must be positive")
    z = s / temperature
    e = np.exp(z - np.max(z))
    return e / np.sum(e)
