"""Membership tests and sampling for quadratic matrix sets.

The set is ``{Z in R^{m x n} : Na + Nb' Z + Z' Nb + Z' Nc Z >= 0}``, i.e.
``[I; Z]' [[Na, Nb'], [Nb, Nc]] [I; Z] >= 0``.  With ``Nc <= 0`` the map is
matrix-concave in ``Z`` so the set is convex and every ray from an interior
point crosses its boundary at most once.
"""

import numpy as np

from ._linalg import min_eig, symmetrize


class EmptySetError(ValueError):
    """Raised when no member of the quadratic set can be found."""


def quad_form(Na, Nb, Nc, Z):
    """Evaluate the quadratic form at ``Z`` (shape ``(m, n)`` or batched ``(k, m, n)``)."""
    Z = np.asarray(Z, dtype=float)
    ZT = np.swapaxes(Z, -1, -2)
    F = Na + ZT @ Nb + np.swapaxes(ZT @ Nb, -1, -2) + ZT @ Nc @ Z
    return symmetrize(F)


def margin(Na, Nb, Nc, Z):
    return min_eig(quad_form(Na, Nb, Nc, Z))


def center(Nb, Nc):
    """Maximizer of the form in the PSD order: ``-Nc^+ Nb`` (minimum norm)."""
    return -np.linalg.pinv(Nc) @ Nb


def _directions(rng, k, m, n, Nc):
    G = rng.standard_normal((k, m, n))
    w, V = np.linalg.eigh(symmetrize(-Nc))
    if w.size and w[0] > 1e-12 * max(1.0, w[-1]):
        G = ((V / np.sqrt(w)) @ V.T) @ G
    G /= np.linalg.norm(G, axis=(1, 2), keepdims=True)
    return G


def boundary_radius(Na, Nb, Nc, Z0, D, threshold, iters=60, t_max=None):
    """Largest ``t`` with ``margin(Z0 + t D) >= threshold`` along each ray (vectorized bisection)."""
    k = D.shape[0]
    if t_max is None:
        t_max = 1e6 * (1.0 + np.linalg.norm(Z0))
    hi = np.ones(k)
    lo = np.zeros(k)
    # bracket: grow hi until it leaves the set or hits t_max
    for _ in range(200):
        inside = margin(Na, Nb, Nc, Z0 + hi[:, None, None] * D) >= threshold
        grow = inside & (hi < t_max)
        if not np.any(grow):
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, np.minimum(2.0 * hi, t_max), hi)
    unbounded = margin(Na, Nb, Nc, Z0 + hi[:, None, None] * D) >= threshold
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = margin(Na, Nb, Nc, Z0 + mid[:, None, None] * D) >= threshold
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    lo = np.where(unbounded, hi, lo)
    return lo


def sample(Na, Nb, Nc, count, rng, boundary_fraction=0.5, tol=0.0, max_draws=None):
    """Sample members of the set.

    Returns ``(Z, on_boundary)`` with ``Z`` of shape ``(count, m, n)``.  The
    first sample is the center; a ``boundary_fraction`` share are boundary
    points found by bisection along random rays; the rest come from
    rejection sampling of Gaussian proposals around the center.
    """
    Na, Nb, Nc = (np.asarray(a, dtype=float) for a in (Na, Nb, Nc))
    m, n = Nb.shape
    Z0 = center(Nb, Nc)
    m0 = float(margin(Na, Nb, Nc, Z0))
    if m0 < -tol:
        raise EmptySetError(
            f"set appears empty: form at the center has minimum eigenvalue {m0:.3e} < -{tol:.3e}"
        )
    threshold = min(0.0, m0)
    count = int(count)
    if count < 1:
        return np.empty((0, m, n)), np.zeros(0, dtype=bool)
    n_bnd = int(round(boundary_fraction * (count - 1)))
    n_int = count - 1 - n_bnd

    probe = _directions(rng, max(n_bnd, 16), m, n, Nc)
    radii = boundary_radius(Na, Nb, Nc, Z0, probe, threshold)
    bnd = Z0 + radii[:n_bnd, None, None] * probe[:n_bnd]

    scale = float(np.median(radii))
    accepted = []
    draws = 0
    max_draws = max_draws if max_draws is not None else 200 * max(n_int, 1)
    while len(accepted) < n_int:
        batch = max(2 * (n_int - len(accepted)), 16)
        D = _directions(rng, batch, m, n, Nc)
        r = scale * rng.uniform(0.0, 1.5, size=batch) ** (1.0 / (m * n))
        prop = Z0 + r[:, None, None] * D
        ok = margin(Na, Nb, Nc, prop) >= threshold
        accepted.extend(prop[ok])
        draws += batch
        if draws > max_draws and len(accepted) < n_int:
            raise EmptySetError(
                f"rejection sampling accepted {len(accepted)} of {draws} draws; "
                f"needed {n_int}"
            )
    interior = np.array(accepted[:n_int]).reshape(n_int, m, n)
    Z = np.concatenate([Z0[None], bnd, interior], axis=0)
    flags = np.zeros(count, dtype=bool)
    flags[1:1 + n_bnd] = True
    return Z, flags
