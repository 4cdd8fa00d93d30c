"""Block assembly of the synthesis LMIs.

Every assembler works on numpy arrays (for checking a candidate point) and on
cvxpy expressions (for building the SDP).  Row blocks of size zero, which
appear when ``d = 1``, are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from ._linalg import psd_sqrt, inv_sqrt_nd, symmetrize


def _is_expr(x):
    return isinstance(x, cp.Expression)


def bmat(rows, sizes_r, sizes_c=None):
    """Assemble a block matrix; ``None`` entries become zero blocks, empty rows/cols are dropped."""
    sizes_c = sizes_r if sizes_c is None else sizes_c
    keep_r = [i for i, s in enumerate(sizes_r) if s > 0]
    keep_c = [j for j, s in enumerate(sizes_c) if s > 0]
    use_cvx = any(_is_expr(b) for row in rows for b in row)
    out = []
    for i in keep_r:
        line = []
        for j in keep_c:
            b = rows[i][j]
            if b is None:
                b = np.zeros((sizes_r[i], sizes_c[j]))
            elif not _is_expr(b):
                b = np.asarray(b, dtype=float).reshape(sizes_r[i], sizes_c[j])
            line.append(b)
        out.append(line)
    if use_cvx:
        return cp.bmat(out)
    return np.block(out)


def sym(M):
    return 0.5 * (M + M.T) if _is_expr(M) else symmetrize(M)


@dataclass(frozen=True)
class PPartition:
    """Views of the augmented Lyapunov matrix ``P`` used by the data-driven LMI.

    ``hat_*`` split ``P`` after the first ``n`` rows/cols (state part vs
    input history) and then the history part after ``m(d-1)``.  ``rows_a``
    are the first ``n+m`` rows of ``P``, ``rows_b`` the remaining ``m(d-1)``.
    """

    P: object
    n: int
    m: int
    d: int

    @property
    def _r1(self):
        return self.m * (self.d - 1)

    @property
    def hat_a(self):
        return self.P[:self.n, :self.n]

    @property
    def hat_b(self):
        return self.P[self.n:, :self.n]

    @property
    def hat_c(self):
        return self.P[self.n:, self.n:]

    @property
    def hat_b0(self):
        return self.P[self.n:self.n + self._r1, :self.n]

    @property
    def hat_b1(self):
        return self.P[self.n + self._r1:, :self.n]

    @property
    def hat_c00(self):
        s = slice(self.n, self.n + self._r1)
        return self.P[s, s]

    @property
    def hat_c10(self):
        return self.P[self.n + self._r1:, self.n:self.n + self._r1]

    @property
    def hat_c11(self):
        s = slice(self.n + self._r1, None)
        return self.P[s, s]

    @property
    def rows_a(self):
        return self.P[:self.n + self.m, :]

    @property
    def rows_b(self):
        return self.P[self.n + self.m:, :]

    def reassemble(self):
        """Rebuild ``P`` from the ``hat`` blocks (numpy only)."""
        top = np.hstack([self.hat_a, self.hat_b0.T, self.hat_b1.T])
        mid = np.hstack([self.hat_b0, self.hat_c00, self.hat_c10.T])
        bot = np.hstack([self.hat_b1, self.hat_c10, self.hat_c11])
        return np.vstack([top, mid, bot])


def weight_roots(weights):
    """Symmetric PSD square roots ``(Q^{1/2}, R^{1/2})``."""
    return psd_sqrt(weights.Q), psd_sqrt(weights.R)


# -- model-based --------------------------------------------------------

def assemble_model_lmis(model, weights, gamma, P, L):
    """The Lyapunov/cost LMI (size ``3N+m``) and the ``gamma`` LMI (size ``2N``)."""
    N, m = model.dim, model.m
    Qh, Rh = weight_roots(weights)
    APBL = model.calA @ P + model.calB @ L
    first = bmat([
        [P, APBL, None, None],
        [APBL.T, P, P @ Qh, L.T @ Rh],
        [None, Qh @ P, np.eye(N), None],
        [None, Rh @ L, None, np.eye(m)],
    ], [N, N, N, m])
    return sym(first), performance_lmi(P, gamma, N)


def performance_lmi(P, gamma, N):
    """``[[gamma I, I], [I, P]]``; PSD together with ``P > 0`` iff ``P^{-1} <= gamma I``."""
    return sym(bmat([[gamma * np.eye(N), np.eye(N)], [np.eye(N), P]], [N, N]))


def model_stabilization_lmi(model, P, L):
    """``[[P, calA P + calB L], [(.)', P]]``: homogeneous stabilization condition."""
    N = model.dim
    APBL = model.calA @ P + model.calB @ L
    return sym(bmat([[P, APBL], [APBL.T, P]], [N, N]))


# -- data-driven ----------------------------------------------------------

def dd_block_sizes(n, m, d, performance=True):
    N = n + m * d
    sizes = [n, n + m, m * (d - 1), m, N]
    if performance:
        sizes += [m, N]
    return sizes


def assemble_dd_lmi(P, L, alpha, eps, eps_prime, psi, weights, n, m, d, performance=True):
    """Data-driven sub-optimal LQR LMI.

    Row blocks have sizes ``(n, n+m, m(d-1), m, N, m, N)`` with ``N = n+md``.
    With ``performance=False`` only the leading five blocks (the
    stabilization condition) are returned.
    """
    N = n + m * d
    part = PPartition(P, n, m, d)
    r1 = m * (d - 1)
    Psa, Psb, Psc = psi.a, psi.b, psi.c
    b11 = part.hat_a - eps * np.eye(n) - alpha * Psa
    b12 = -alpha * Psb.T
    b22 = -alpha * Psc
    b33 = part.hat_c00 - eps_prime * np.eye(r1) if r1 else None
    b44 = part.hat_c11 - eps_prime * np.eye(m)
    b13 = part.hat_b0.T if r1 else None
    b34 = part.hat_c10.T if r1 else None
    b35 = part.rows_b if r1 else None
    rows = [
        [b11, b12, b13, part.hat_b1.T, None],
        [None, b22, None, None, part.rows_a],
        [None, None, b33, b34, b35],
        [None, None, None, b44, L],
        [None, None, None, None, P],
    ]
    if performance:
        Qh, Rh = weight_roots(weights)
        for row in rows:
            row.extend([None, None])
        rows[4][5] = L.T @ Rh
        rows[4][6] = P @ Qh
        rows.append([None] * 5 + [np.eye(m), None])
        rows.append([None] * 6 + [np.eye(N)])
    # fill the lower triangle from the upper one
    k = len(rows)
    for i in range(k):
        for j in range(i):
            up = rows[j][i]
            rows[i][j] = None if up is None else up.T
    return sym(bmat(rows, dd_block_sizes(n, m, d, performance)))


def assemble_dd_pre_schur(P, L, alpha, eps, eps_prime, psi, weights, n, m, d):
    """Oracle form: the 4-block matrix minus ``[0; P_a; P_b; L] Pi^{-1} [.]'``.

    Returns ``(M, Pi)`` with ``Pi = P - P Q P - L' R L``.  Numpy only.
    """
    N = n + m * d
    P = np.asarray(P, dtype=float)
    L = np.asarray(L, dtype=float)
    part = PPartition(P, n, m, d)
    r1 = m * (d - 1)
    Pi = P - P @ weights.Q @ P - L.T @ weights.R @ L
    top = bmat([
        [part.hat_a - eps * np.eye(n) - alpha * psi.a, -alpha * psi.b.T, part.hat_b0.T, part.hat_b1.T],
        [-alpha * psi.b, -alpha * psi.c, None, None],
        [part.hat_b0, None, part.hat_c00 - eps_prime * np.eye(r1), part.hat_c10.T],
        [part.hat_b1, None, part.hat_c10, part.hat_c11 - eps_prime * np.eye(m)],
    ], [n, n + m, r1, m])
    v = np.vstack([np.zeros((n, N)), part.rows_a, part.rows_b, L])
    return symmetrize(top - v @ np.linalg.solve(Pi, v.T)), symmetrize(Pi)


def equilibrator(psi, n, m, d, performance=True):
    """Congruence ``T`` that recenters the model blocks at the set center and whitens ``Psi22``.

    ``T' M T`` is PSD iff ``M`` is.  In the new coordinates the ``alpha``
    terms read ``-alpha diag(Psi / Psi22, -I)``, which keeps the multiplier
    well scaled even when the consistent set is thin.  Falls back to the
    identity when ``Psi22`` is not negative definite.
    """
    sizes = dd_block_sizes(n, m, d, performance)
    T = np.eye(sum(sizes))
    try:
        W = inv_sqrt_nd(-psi.c)
    except np.linalg.LinAlgError:
        return T
    T[n:2 * n + m, :n] = psi.center()
    T[n:2 * n + m, n:2 * n + m] = W
    return T


def lyapunov_residual(Acl, S, Q, K, R):
    """``Acl' S Acl - S + Q + K' R K`` (batched over leading axes of ``Acl``)."""
    AclT = np.swapaxes(Acl, -1, -2)
    return symmetrize(AclT @ S @ Acl - S + Q + K.T @ R @ K)


def closed_loops_for_models(Zs, calA, calB, K, n, m):
    """Closed-loop matrices for a batch of ``Z = [A B]'`` sharing the shift structure."""
    Acl = np.broadcast_to(calA + calB @ K, (len(Zs),) + calA.shape).copy()
    Acl[:, :n, :n + m] = np.swapaxes(np.asarray(Zs), -1, -2)
    return Acl
