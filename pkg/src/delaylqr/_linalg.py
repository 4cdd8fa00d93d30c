"""Small dense linear-algebra helpers shared by the modules."""

import numpy as np


def as_matrix(value, name="matrix"):
    """Coerce ``value`` to a finite 2-D float array."""
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def min_eig(M):
    """Smallest eigenvalue of the symmetric part of ``M`` (batched over leading axes)."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 0:
        return np.full(M.shape[:-2], np.inf)
    return np.linalg.eigvalsh(symmetrize(M))[..., 0]


def max_eig(M):
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 0:
        return np.full(M.shape[:-2], -np.inf)
    return np.linalg.eigvalsh(symmetrize(M))[..., -1]


def psd_sqrt(M):
    """Symmetric square root of a PSD matrix, negative eigenvalues clamped to zero."""
    w, V = np.linalg.eigh(symmetrize(np.asarray(M, dtype=float)))
    return symmetrize((V * np.sqrt(np.clip(w, 0.0, None))) @ V.T)


def inv_sqrt_nd(M):
    """Inverse square root of a symmetric positive definite matrix."""
    w, V = np.linalg.eigh(symmetrize(M))
    if w[0] <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return symmetrize((V / np.sqrt(w)) @ V.T)


def spectral_radius(M):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def psd_tol(M, rel=1e-8):
    """Scale-aware slack ``rel * (1 + max|entry|)`` used for PSD tests."""
    M = np.asarray(M, dtype=float)
    return rel * (1.0 + (np.max(np.abs(M)) if M.size else 0.0))


def block_diag(*blocks):
    from scipy.linalg import block_diag as _bd

    return _bd(*[np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks])
