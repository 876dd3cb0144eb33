"""Small dense linear-algebra helpers shared by the geometric modules.

Rank decisions use one scale-invariant rule everywhere: a singular value
counts as zero when it is below ``RANK_RTOL * max(largest singular value, 1)``.
"""

import numpy as np

RANK_RTOL = 1e-9


def rank_cutoff(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    top = s[..., :1] if s.shape[-1] else np.zeros(s.shape[:-1] + (1,))
    return RANK_RTOL * np.maximum(top, 1.0)


def numerical_rank(M) -> np.ndarray:
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return np.sum(s > rank_cutoff(s), axis=-1)


def pinv(M) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with the package rank rule (batched)."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rank_cutoff(s)
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (np.swapaxes(Vt, -1, -2) * sinv[..., None, :]) @ np.swapaxes(U, -1, -2)


def pinv_sym(S) -> np.ndarray:
    """Pseudo-inverse of a symmetric matrix by eigendecomposition (batched).

    For symmetric input the absolute eigenvalues are the singular values, so
    this applies the same rank rule as ``pinv`` at a fraction of the cost.
    """
    S = sym(S)
    w, V = np.linalg.eigh(S)
    a = np.abs(w)
    cut = RANK_RTOL * np.maximum(np.max(a, axis=-1, keepdims=True), 1.0)
    keep = a > cut
    winv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (V * winv[..., None, :]) @ np.swapaxes(V, -1, -2)


def image_projector_sym(S) -> np.ndarray:
    """Orthogonal projector onto the image of a symmetric matrix (batched)."""
    S = sym(S)
    w, V = np.linalg.eigh(S)
    a = np.abs(w)
    cut = RANK_RTOL * np.maximum(np.max(a, axis=-1, keepdims=True), 1.0)
    keep = (a > cut).astype(float)
    return (V * keep[..., None, :]) @ np.swapaxes(V, -1, -2)


def image_basis(M) -> np.ndarray:
    """Orthonormal basis (as columns) of the column space of a single matrix."""
    U, s, _ = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    r = int(np.sum(s > rank_cutoff(s)))
    return U[:, :r]


def image_projector(M) -> np.ndarray:
    """Orthogonal projector onto the column space of M (batched)."""
    M = np.asarray(M, dtype=float)
    return M @ pinv(M)


def null_basis(M) -> np.ndarray:
    """Orthonormal basis (as columns) of the kernel of a single matrix."""
    M = np.asarray(M, dtype=float)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > rank_cutoff(s))) if s.size else 0
    return Vt[r:].T


def pinv_derivative(A, dA) -> np.ndarray:
    """Directional derivative of the pseudo-inverse of A along dA.

    Valid where the rank of A is locally constant (Golub-Pereyra formula).
    """
    Ap = pinv(A)
    m, n = A.shape[-2:]
    I_m = np.eye(m)
    I_n = np.eye(n)
    dAt = np.swapaxes(dA, -1, -2)
    Apt = np.swapaxes(Ap, -1, -2)
    return (-Ap @ dA @ Ap
            + Ap @ Apt @ dAt @ (I_m - A @ Ap)
            + (I_n - Ap @ A) @ dAt @ Apt @ Ap)


def sym(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))
