"""Robust quadratic matrix inequalities over a quadratic matrix set.

For ``S_N = {Z : [I; Z]' N [I; Z] >= 0}`` with ``N_c <= 0`` and
``ker N_c in ker N_b'``, the strict inequality

    [[P'_a, P'_b'], [P'_b, P'_c]] > [[Z' Q_a Z, Z' Q_b'], [Q_b Z, Q_c]]   for all Z in S_N

holds exactly when multipliers ``alpha >= 0, eps > 0, eps' > 0`` make

    [[P'_a - eps I, 0, P'_b'], [0, -Q_a, -Q_b'], [P'_b, -Q_b, P'_c - Q_c - eps' I]]
        - alpha [[N_a, N_b', 0], [N_b, N_c, 0], [0, 0, 0]]

positive semidefinite.  This module checks such certificates, searches for
them with a small SDP and falsifies the robust inequality by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import cvxpy as cp
import numpy as np

from . import _qset, _sdp
from ._linalg import as_matrix, min_eig, symmetrize, psd_tol

EPS_FLOOR = 1e-9
KERNEL_TOL = 1e-8


class CertificateSolverError(RuntimeError):
    """The certificate SDP failed without proving infeasibility."""


def _sym_block(M, name):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * (1 + np.max(np.abs(M), initial=0.0)):
        raise ValueError(f"{name} must be symmetric")
    return symmetrize(M)


@dataclass(frozen=True)
class QuadraticSet:
    """``S_N`` for ``N = [[N_a, N_b'], [N_b, N_c]]``; members ``Z`` are ``m x n``."""

    N_a: np.ndarray
    N_b: np.ndarray
    N_c: np.ndarray

    def __post_init__(self):
        Na = _sym_block(self.N_a, "N_a")
        Nc = _sym_block(self.N_c, "N_c")
        Nb = as_matrix(np.asarray(self.N_b, dtype=float).reshape(Nc.shape[0], Na.shape[0]), "N_b")
        scale = 1.0 + max(np.abs(Na).max(initial=0), np.abs(Nb).max(initial=0), np.abs(Nc).max(initial=0))
        w, V = np.linalg.eigh(Nc)
        if w.size and w[-1] > KERNEL_TOL * scale:
            raise ValueError(f"N_c must be negative semidefinite (max eigenvalue {w[-1]:.3e})")
        null = V[:, np.abs(w) <= KERNEL_TOL * scale]
        if null.shape[1] and np.linalg.norm(Nb.T @ null, axis=0).max() > KERNEL_TOL * scale:
            raise ValueError("kernel condition ker N_c in ker N_b' is violated")
        object.__setattr__(self, "N_a", Na)
        object.__setattr__(self, "N_b", Nb)
        object.__setattr__(self, "N_c", Nc)

    @property
    def n(self) -> int:
        return self.N_a.shape[0]

    @property
    def m(self) -> int:
        return self.N_c.shape[0]

    @classmethod
    def from_psi(cls, psi) -> "QuadraticSet":
        """The set of data-consistent ``Z = [A B]'`` for a :class:`~delaylqr.data.PsiForm`."""
        return cls(psi.a, psi.b, psi.c)

    def margin(self, Z):
        return _qset.margin(self.N_a, self.N_b, self.N_c, Z)

    def contains(self, Z, tol=0.0):
        return self.margin(Z) >= -tol

    def sample(self, count, rng, boundary_fraction=0.5):
        return _qset.sample(self.N_a, self.N_b, self.N_c, count, rng, boundary_fraction)


@dataclass(frozen=True)
class QmiPair:
    """``P' = [[P_a, P_b'], [P_b, P_c]]`` (n+l) and ``Q = [[Q_a, Q_b'], [Q_b, Q_c]]`` (m+l)."""

    P_a: np.ndarray
    P_b: np.ndarray
    P_c: np.ndarray
    Q_a: np.ndarray
    Q_b: np.ndarray
    Q_c: np.ndarray

    def __post_init__(self):
        Pa = _sym_block(self.P_a, "P_a")
        Pc = _sym_block(self.P_c, "P_c")
        Qa = _sym_block(self.Q_a, "Q_a")
        Qc = _sym_block(self.Q_c, "Q_c")
        l = Pc.shape[0]
        Pb = np.asarray(self.P_b, dtype=float).reshape(l, Pa.shape[0])
        Qb = np.asarray(self.Q_b, dtype=float).reshape(l, Qa.shape[0])
        if Qc.shape[0] != l:
            raise ValueError(f"Q_c must be {l}x{l}")
        if min_eig(Qa) < -psd_tol(Qa):
            raise ValueError("Q_a must be positive semidefinite")
        for name, M in (("P_a", Pa), ("P_b", Pb), ("P_c", Pc), ("Q_a", Qa), ("Q_b", Qb), ("Q_c", Qc)):
            object.__setattr__(self, name, M)

    @property
    def l(self) -> int:
        return self.P_c.shape[0]

    @property
    def P(self):
        return np.block([[self.P_a, self.P_b.T], [self.P_b, self.P_c]])

    def margin(self, Z):
        """Minimum eigenvalue of ``P' - [[Z'Q_aZ, Z'Q_b'], [Q_bZ, Q_c]]`` (batched in ``Z``)."""
        Z = np.asarray(Z, dtype=float)
        ZT = np.swapaxes(Z, -1, -2)
        top_left = self.P_a - ZT @ self.Q_a @ Z
        lower_left = self.P_b - self.Q_b @ Z
        lower_right = np.broadcast_to(self.P_c - self.Q_c, lower_left.shape[:-2] + self.P_c.shape)
        H = np.concatenate([
            np.concatenate([top_left, np.swapaxes(lower_left, -1, -2)], axis=-1),
            np.concatenate([lower_left, lower_right], axis=-1),
        ], axis=-2)
        return min_eig(H)


@dataclass(frozen=True)
class QmiCertificate:
    alpha: float
    eps: float
    eps_prime: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.eps <= 0 or self.eps_prime <= 0:
            raise ValueError("eps and eps_prime must be positive")


class CertificateCheck(NamedTuple):
    ok: bool
    margin: float


class RobustCheck(NamedTuple):
    holds_on_samples: bool
    worst_margin: float
    worst_Z: np.ndarray


def _dims(qset: QuadraticSet, pair: QmiPair):
    if pair.P_a.shape[0] != qset.n or pair.Q_a.shape[0] != qset.m:
        raise ValueError(
            f"pair sized for n={pair.P_a.shape[0]}, m={pair.Q_a.shape[0]}; set has n={qset.n}, m={qset.m}"
        )


def certificate_matrix(qset: QuadraticSet, pair: QmiPair, alpha, eps, eps_prime):
    """The multiplier matrix; numeric or cvxpy depending on the arguments."""
    _dims(qset, pair)
    n, m, l = qset.n, qset.m, pair.l
    rows = [
        [pair.P_a - eps * np.eye(n) - alpha * qset.N_a, -alpha * qset.N_b.T, pair.P_b.T],
        [-alpha * qset.N_b, -pair.Q_a - alpha * qset.N_c, -pair.Q_b.T],
        [pair.P_b, -pair.Q_b, pair.P_c - pair.Q_c - eps_prime * np.eye(l)],
    ]
    if any(isinstance(v, cp.Expression) for v in (alpha, eps, eps_prime)):
        return cp.bmat(rows)
    return symmetrize(np.block(rows))


def check_certificate(qset: QuadraticSet, pair: QmiPair, cert: QmiCertificate,
                      tol: Optional[float] = None) -> CertificateCheck:
    M = certificate_matrix(qset, pair, cert.alpha, cert.eps, cert.eps_prime)
    tol = psd_tol(M, 1e-9) if tol is None else tol
    mg = float(min_eig(M))
    return CertificateCheck(mg >= -tol, mg)


def verify_robust_qmi(qset: QuadraticSet, pair: QmiPair, samples: int = 10_000, seed=None,
                      boundary_fraction=0.5) -> RobustCheck:
    """Check the strict robust inequality on sampled members of ``S_N``."""
    _dims(qset, pair)
    rng = np.random.default_rng(seed)
    Zs, _ = qset.sample(samples, rng, boundary_fraction)
    margins = pair.margin(Zs)
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return RobustCheck(worst > 0.0, worst, Zs[k])


def find_certificate(qset: QuadraticSet, pair: QmiPair, eps_floor: float = EPS_FLOOR,
                     options: Optional[_sdp.SolverOptions] = None) -> Optional[QmiCertificate]:
    """Search for multipliers; ``None`` when no certificate with ``eps, eps' >= eps_floor`` exists.

    Raises :class:`CertificateSolverError` when the solver fails without a verdict.
    """
    options = options or _sdp.SolverOptions()
    _dims(qset, pair)
    alpha = cp.Variable(nonneg=True)
    eps = cp.Variable()
    eps_p = cp.Variable()
    s = cp.Variable()
    M = certificate_matrix(qset, pair, alpha, eps, eps_p)
    cap = 1.0 + np.abs(pair.P).max()
    prob = cp.Problem(cp.Maximize(s), [_sdp.psd(M), eps >= s, eps_p >= s, s <= cap])
    status = _sdp.solve(prob, options)
    if status in _sdp.INFEASIBLE:
        return None
    if status not in _sdp.SOLVED:
        raise CertificateSolverError(f"certificate SDP ended with status {status!r}")
    if s.value is None or s.value < eps_floor:
        return None
    cert = QmiCertificate(max(float(alpha.value), 0.0), float(eps.value), float(eps_p.value))
    if not check_certificate(qset, pair, cert).ok:
        # back off the multipliers once before giving up
        cert = QmiCertificate(cert.alpha, 0.5 * cert.eps, 0.5 * cert.eps_prime)
        if not check_certificate(qset, pair, cert).ok:
            raise CertificateSolverError("solver returned multipliers that fail the PSD check")
    return cert
