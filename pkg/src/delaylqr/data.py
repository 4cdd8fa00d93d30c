"""Data matrices, the noise bound and the set of data-consistent models.

From a noisy run ``x[t+1] = A x[t] + B u[t-d] + w[t]`` we keep

    X_minus   = [x[t0]     ... x[t0+T-1]]
    X_plus    = [x[t0+1]   ... x[t0+T]]
    U_minus_d = [u[t0-d]   ... u[t0-d+T-1]]

so that ``X_plus = A X_minus + B U_minus_d + W_minus``.  The noise bound
``[I; W']' Phi [I; W'] >= 0`` maps to the quadratic form ``Psi`` in
``Z = [A B]'``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _qset
from ._linalg import as_matrix, symmetrize, min_eig, max_eig
from .plant import Trajectory


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _row_matrix(value, rows, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(rows, -1)
    return as_matrix(arr, name)


@dataclass(frozen=True)
class DataSet:
    X_plus: np.ndarray
    X_minus: np.ndarray
    U_minus_d: np.ndarray
    d: int
    t0: int = 0
    W_minus: Optional[np.ndarray] = None

    def __post_init__(self):
        Xp = as_matrix(self.X_plus, "X_plus")
        Xm = as_matrix(self.X_minus, "X_minus")
        U = as_matrix(self.U_minus_d, "U_minus_d")
        if Xp.shape != Xm.shape:
            raise ValueError(f"X_plus {Xp.shape} and X_minus {Xm.shape} differ in shape")
        if U.shape[1] != Xm.shape[1]:
            raise ValueError(f"U_minus_d has {U.shape[1]} columns, expected {Xm.shape[1]}")
        if Xm.shape[1] < 1:
            raise ValueError("need at least one sample (T >= 1)")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"delay length d must be an integer >= 1, got {self.d}")
        # consecutive samples overlap: X_plus[:, k] is X_minus[:, k+1]
        if Xm.shape[1] > 1 and not np.array_equal(Xp[:, :-1], Xm[:, 1:]):
            raise ValueError("X_plus[:, k] must equal X_minus[:, k+1] (shifted state sequence)")
        object.__setattr__(self, "X_plus", _frozen(Xp))
        object.__setattr__(self, "X_minus", _frozen(Xm))
        object.__setattr__(self, "U_minus_d", _frozen(U))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "t0", int(self.t0))
        if self.W_minus is not None:
            W = as_matrix(self.W_minus, "W_minus")
            if W.shape != Xm.shape:
                raise ValueError(f"W_minus must be {Xm.shape}, got {W.shape}")
            object.__setattr__(self, "W_minus", _frozen(W))

    @property
    def n(self) -> int:
        return self.X_minus.shape[0]

    @property
    def m(self) -> int:
        return self.U_minus_d.shape[0]

    @property
    def T(self) -> int:
        return self.X_minus.shape[1]

    @property
    def regressors(self) -> np.ndarray:
        """Stacked ``[X_minus; U_minus_d]``."""
        return np.vstack([self.X_minus, self.U_minus_d])


def build_data(traj: Trajectory, d: Optional[int] = None, t0: int = 0,
               T: Optional[int] = None) -> DataSet:
    """Data matrices from a trajectory, using samples ``t0 .. t0+T``."""
    d = traj.d if d is None else int(d)
    if T is None:
        T = traj.horizon - t0
    if T < 1 or t0 < 0 or t0 + T > traj.horizon:
        raise ValueError(f"window t0={t0}, T={T} does not fit a trajectory of horizon {traj.horizon}")
    # traj.u[k] holds u_{k - traj.d}
    first = t0 - d + traj.d
    if first < 0:
        raise ValueError(
            f"insufficient input history: need u[{t0 - d}] but the trajectory starts at u[{-traj.d}]"
        )
    Xm = traj.x[t0:t0 + T].T
    Xp = traj.x[t0 + 1:t0 + T + 1].T
    U = traj.u[first:first + T].T
    W = None if traj.w is None else traj.w[t0:t0 + T].T
    return DataSet(Xp, Xm, U, d, t0, W)


@dataclass(frozen=True)
class NoiseModel:
    """Bound ``[I; W']' [[Phi11, Phi12], [Phi12', Phi22]] [I; W'] >= 0`` on the noise matrix."""

    Phi11: np.ndarray
    Phi12: np.ndarray
    Phi22: np.ndarray

    def __post_init__(self):
        P11 = as_matrix(self.Phi11, "Phi11")
        P22 = as_matrix(self.Phi22, "Phi22")
        P12 = np.asarray(self.Phi12, dtype=float)
        if P12.ndim < 2:
            P12 = P12.reshape(P11.shape[0], P22.shape[0])
        P12 = as_matrix(P12, "Phi12")
        if P12.shape != (P11.shape[0], P22.shape[0]):
            raise ValueError(f"Phi12 must be {P11.shape[0]}x{P22.shape[0]}, got {P12.shape}")
        for name, M in (("Phi11", P11), ("Phi22", P22)):
            if M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * (1 + np.max(np.abs(M))):
                raise ValueError(f"{name} must be symmetric")
        if not max_eig(P22) < -1e-12 * (1 + np.max(np.abs(P22))):
            raise ValueError("Phi22 must be negative definite")
        object.__setattr__(self, "Phi11", _frozen(symmetrize(P11)))
        object.__setattr__(self, "Phi12", _frozen(P12))
        object.__setattr__(self, "Phi22", _frozen(symmetrize(P22)))

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.Phi11, self.Phi12], [self.Phi12.T, self.Phi22]])

    def admits(self, W, tol=1e-10) -> bool:
        """Whether the noise matrix ``W`` (n x T) satisfies the bound."""
        W = as_matrix(W, "W")
        F = self.Phi11 + self.Phi12 @ W.T + W @ self.Phi12.T + W @ self.Phi22 @ W.T
        return bool(min_eig(F) >= -tol * (1 + np.abs(F).max()))


def make_sigma_phi(sigma: float, n: int, T: int) -> NoiseModel:
    """``Phi = diag(sigma^2 T I_n, -I_T)``: the energy of the noise is at most ``sigma^2 T``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return NoiseModel(sigma ** 2 * T * np.eye(n), np.zeros((n, T)), -np.eye(T))


@dataclass(frozen=True)
class PsiForm:
    """Quadratic form ``Psi`` of size ``2n+m`` defining the consistent models."""

    Psi: np.ndarray
    n: int
    m: int

    @property
    def Psi11(self):
        return self.Psi[:self.n, :self.n]

    @property
    def Psi12(self):
        return self.Psi[:self.n, self.n:]

    @property
    def Psi22(self):
        return self.Psi[self.n:, self.n:]

    # aliases used by the synthesis LMI: a = Psi11, b = Psi12', c = Psi22
    @property
    def a(self):
        return self.Psi11

    @property
    def b(self):
        return self.Psi12.T

    @property
    def c(self):
        return self.Psi22

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.Psi, 2))

    @property
    def tol(self) -> float:
        """Consistency tolerance ``1e-8 (1 + ||Psi||)``."""
        return 1e-8 * (1.0 + self.norm)

    def center(self) -> np.ndarray:
        """``Z = [A B]'`` maximizing the form (weighted least squares)."""
        return _qset.center(self.b, self.c)


def compute_psi(D: DataSet, Phi: NoiseModel) -> PsiForm:
    n, m, T = D.n, D.m, D.T
    if Phi.Phi11.shape[0] != n or Phi.Phi22.shape[0] != T:
        raise ValueError(
            f"noise model sized for n={Phi.Phi11.shape[0]}, T={Phi.Phi22.shape[0]}; data has n={n}, T={T}"
        )
    M = np.block([
        [np.eye(n), D.X_plus],
        [np.zeros((n, n)), -D.X_minus],
        [np.zeros((m, n)), -D.U_minus_d],
    ])
    Psi = M @ Phi.matrix @ M.T
    Psi = _frozen(symmetrize(Psi))
    return PsiForm(Psi, n, m)


def model_to_z(A, B) -> np.ndarray:
    return np.vstack([np.asarray(A, float).T, np.asarray(B, float).reshape(np.shape(A)[0], -1).T])


def z_to_model(Z, n):
    Z = np.asarray(Z, dtype=float)
    return Z[:n].T.copy(), Z[n:].T.copy()


class Consistency(NamedTuple):
    ok: bool
    margin: float


def consistency_margin(A, B, psi: PsiForm) -> float:
    """Minimum eigenvalue of ``[I; A'; B']' Psi [I; A'; B']``."""
    Z = model_to_z(A, B)
    return float(_qset.margin(psi.a, psi.b, psi.c, Z))


def is_consistent(A, B, psi: PsiForm, tol: Optional[float] = None) -> Consistency:
    tol = psi.tol if tol is None else tol
    mg = consistency_margin(A, B, psi)
    return Consistency(mg >= -tol, mg)


def least_squares_model(D: DataSet):
    """Minimum-norm least-squares ``(A, B)`` from the data."""
    Zt = D.X_plus @ np.linalg.pinv(D.regressors)
    return Zt[:, :D.n].copy(), Zt[:, D.n:].copy()


def min_consistent_sigma(D: DataSet) -> float:
    """Smallest ``sigma`` for which ``make_sigma_phi`` gives a nonempty model set.

    With ``Phi = diag(s^2 T I, -I)`` the best model leaves the least-squares
    residual ``E``, so the set is nonempty iff ``s^2 T >= lambda_max(E E')``.
    """
    R = D.regressors
    E = D.X_plus - D.X_plus @ np.linalg.pinv(R) @ R
    return float(np.sqrt(max(max_eig(E @ E.T), 0.0) / D.T))


@dataclass(frozen=True)
class Preflight:
    """Regularity checks needed before running the S-lemma based synthesis."""

    rank: int
    full_row_rank: bool
    psi22_max_eig: float
    kernel_ok: bool
    nonempty: bool
    center_margin: float

    @property
    def ok(self) -> bool:
        return self.psi22_max_eig <= 0.0 and self.kernel_ok and self.nonempty

    def reasons(self) -> list:
        out = []
        if self.psi22_max_eig > 0.0:
            out.append(f"Psi22 is not negative semidefinite (max eigenvalue {self.psi22_max_eig:.3e})")
        if not self.kernel_ok:
            out.append("kernel condition ker Psi22 in ker Psi12 fails")
        if not self.nonempty:
            out.append(f"no model is consistent with the data (center margin {self.center_margin:.3e})")
        return out


def preflight(D: Optional[DataSet], psi: PsiForm, tol: float = 1e-8) -> Preflight:
    """Rank, sign and kernel diagnostics for ``Psi``; warns on rank-deficient data."""
    scale = 1.0 + psi.norm
    rank = np.linalg.matrix_rank(D.regressors) if D is not None else -1
    full = rank == psi.n + psi.m if D is not None else True
    if D is not None and not full:
        warnings.warn(
            f"[X_minus; U_minus_d] has rank {rank} < {psi.n + psi.m}; Psi22 is only semidefinite",
            stacklevel=2,
        )
    w, V = np.linalg.eigh(psi.c)
    top = float(w[-1]) if w.size else -np.inf
    psi22_max = top if top > tol * scale else min(top, 0.0)
    null = V[:, np.abs(w) <= tol * scale]
    kernel_ok = bool(null.shape[1] == 0 or np.linalg.norm(psi.Psi12 @ null) <= tol * scale)
    cm = float(_qset.margin(psi.a, psi.b, psi.c, psi.center()))
    return Preflight(int(rank), bool(full), psi22_max, kernel_ok, cm >= -psi.tol, cm)


def sample_consistent_models(psi: PsiForm, count: int, seed=None, boundary_fraction=0.5):
    """Models ``(A, B)`` in the consistent set.

    The first entry is the center (least-squares model for the standard noise
    bound), about ``boundary_fraction`` of the rest lie on the boundary, the
    remainder are accepted Gaussian proposals around the center.
    """
    rng = np.random.default_rng(seed)
    Zs, _ = _qset.sample(psi.a, psi.b, psi.c, count, rng, boundary_fraction, tol=psi.tol)
    return [z_to_model(Z, psi.n) for Z in Zs]


# -- JSON ----------------------------------------------------------------

def dataset_to_dict(D: DataSet) -> dict:
    out = {
        "n": D.n, "m": D.m, "T": D.T, "d": D.d, "t0": D.t0,
        "X_plus": D.X_plus.tolist(),
        "X_minus": D.X_minus.tolist(),
        "U_minus_d": D.U_minus_d.tolist(),
    }
    if D.W_minus is not None:
        out["W_minus"] = D.W_minus.tolist()
    return out


def dataset_from_dict(obj: dict) -> DataSet:
    D = DataSet(
        _row_matrix(obj["X_plus"], obj["n"], "X_plus"),
        _row_matrix(obj["X_minus"], obj["n"], "X_minus"),
        _row_matrix(obj["U_minus_d"], obj["m"], "U_minus_d"),
        obj["d"], obj.get("t0", 0),
        None if obj.get("W_minus") is None else _row_matrix(obj["W_minus"], obj["n"], "W_minus"),
    )
    if (D.n, D.m, D.T) != (obj["n"], obj["m"], obj["T"]):
        raise ValueError("declared dimensions do not match the stored matrices")
    return D


def save_dataset(path, D: DataSet):
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(D), fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> DataSet:
    with open(path) as fh:
        return dataset_from_dict(json.load(fh))
