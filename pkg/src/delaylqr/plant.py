"""Input-delay plants, augmented-state lifting, simulation and LQ cost.

The plant is ``x[t+1] = A x[t] + B u[t-d] (+ w[t])``.  Stacking the state
with the last ``d`` inputs,

    X[t] = [x[t]; u[t-d]; ...; u[t-1]],

turns it into the delay-free system ``X[t+1] = calA X[t] + calB u[t]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from ._linalg import as_matrix, psd_tol, min_eig, spectral_radius, block_diag


class UnstableClosedLoopError(ValueError):
    """Raised when the LQ cost of an unstable closed loop is requested (the cost diverges)."""


class SimulationError(RuntimeError):
    """Raised when a simulation produces non-finite values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state produced at step {step}")


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DelayPlant:
    """Linear discrete-time plant with an input delay of ``d >= 1`` steps."""

    A: np.ndarray
    B: np.ndarray
    d: int

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = as_matrix(B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"delay length d must be an integer >= 1, got {self.d}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "d", int(self.d))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def dim(self) -> int:
        """Dimension ``n + m*d`` of the augmented state."""
        return self.n + self.m * self.d


@dataclass(frozen=True)
class AugmentedModel:
    calA: np.ndarray
    calB: np.ndarray
    n: int
    m: int
    d: int

    @property
    def dim(self) -> int:
        return self.n + self.m * self.d


@dataclass(frozen=True)
class CostWeights:
    """Weights of ``sum x'Q0 x + sum_i u[t-d+i-1]' Qi u[t-d+i-1] + u' R u``.

    ``Qi`` holds the ``d`` input-history weights ``Q1..Qd`` in that order.
    """

    Q0: np.ndarray
    Qi: tuple
    R: np.ndarray

    def __post_init__(self):
        Q0 = as_matrix(self.Q0, "Q0")
        R = as_matrix(self.R, "R")
        Qi = tuple(as_matrix(q, f"Q{i + 1}") for i, q in enumerate(self.Qi))
        if not Qi:
            raise ValueError("at least one input-history weight (d >= 1) is required")
        m = R.shape[0]
        for name, M in [("Q0", Q0), ("R", R)] + [(f"Q{i + 1}", q) for i, q in enumerate(Qi)]:
            if M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square, got {M.shape}")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * (1 + np.max(np.abs(M))):
                raise ValueError(f"{name} must be symmetric")
            if min_eig(M) < -psd_tol(M):
                raise ValueError(f"{name} must be positive semidefinite")
        for i, q in enumerate(Qi):
            if q.shape[0] != m:
                raise ValueError(f"Q{i + 1} must be {m}x{m} to match R")
        object.__setattr__(self, "Q0", _frozen(Q0))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "Qi", tuple(_frozen(q) for q in Qi))

    @classmethod
    def uniform(cls, n, m, d, q0, qi, r):
        """Scalar multiples of identities: ``Q0 = q0 I_n``, ``Qi = qi I_m``, ``R = r I_m``."""
        return cls(q0 * np.eye(n), tuple(qi * np.eye(m) for _ in range(d)), r * np.eye(m))

    @property
    def d(self) -> int:
        return len(self.Qi)

    @property
    def Q(self) -> np.ndarray:
        """Block-diagonal state weight on the augmented state."""
        return block_diag(self.Q0, *self.Qi)

    def check(self, plant: DelayPlant):
        if self.Q0.shape[0] != plant.n or self.R.shape[0] != plant.m or self.d != plant.d:
            raise ValueError(
                f"weights sized for (n={self.Q0.shape[0]}, m={self.R.shape[0]}, d={self.d}) "
                f"do not match plant (n={plant.n}, m={plant.m}, d={plant.d})"
            )


def lift_augmented(plant: DelayPlant) -> AugmentedModel:
    """Augmented pair ``(calA, calB)`` of an input-delay plant."""
    n, m, d = plant.n, plant.m, plant.d
    N = n + m * d
    calA = np.zeros((N, N))
    calA[:n, :n] = plant.A
    calA[:n, n:n + m] = plant.B
    for i in range(d - 1):
        r = n + i * m
        calA[r:r + m, r + m:r + 2 * m] = np.eye(m)
    calB = np.zeros((N, m))
    calB[N - m:, :] = np.eye(m)
    return AugmentedModel(_frozen(calA), _frozen(calB), n, m, d)


def split_gain(K, n, m, d):
    """Split ``K = [K0 K1 ... Kd]`` into ``K0`` (m x n) and the list ``[K1, ..., Kd]``."""
    K = as_matrix(K, "K")
    if K.shape != (m, n + m * d):
        raise ValueError(f"gain must be {m}x{n + m * d}, got {K.shape}")
    return K[:, :n], [K[:, n + i * m:n + (i + 1) * m] for i in range(d)]


def closed_loop(model: AugmentedModel, K) -> np.ndarray:
    K = as_matrix(K, "K")
    if K.shape != (model.m, model.dim):
        raise ValueError(f"gain must be {model.m}x{model.dim}, got {K.shape}")
    return model.calA + model.calB @ K


def stack_state(x, u_hist) -> np.ndarray:
    """Augmented state from ``x`` and the past inputs ``u_hist = [u[-d], ..., u[-1]]``."""
    x = np.asarray(x, dtype=float).ravel()
    u_hist = np.asarray(u_hist, dtype=float)
    return np.concatenate([x, u_hist.ravel()])


def unstack_state(X, n, m, d):
    X = np.asarray(X, dtype=float).ravel()
    if X.size != n + m * d:
        raise ValueError(f"augmented state must have length {n + m * d}, got {X.size}")
    return X[:n].copy(), X[n:].reshape(d, m)


@dataclass(frozen=True)
class Trajectory:
    """States ``x[0..H]`` and inputs ``u[-d..H-1]`` of one run.

    ``u[k]`` holds ``u_{k-d}``, so the first ``d`` rows are the input history.
    """

    x: np.ndarray
    u: np.ndarray
    d: int
    w: Optional[np.ndarray] = field(default=None)

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    @property
    def u_hist(self) -> np.ndarray:
        return self.u[:self.d]

    def input_at(self, t):
        """``u_t`` for ``-d <= t < horizon``."""
        return self.u[t + self.d]

    def augmented(self, t) -> np.ndarray:
        return stack_state(self.x[t], self.u[t:t + self.d])


def simulate(plant: DelayPlant, x0, u_hist=None, *, inputs=None, gain=None, horizon=None,
             noise=None) -> Trajectory:
    """Simulate ``x[t+1] = A x[t] + B u[t-d] + w[t]``.

    Exactly one of ``inputs`` (open-loop sequence, shape ``(horizon, m)``) or
    ``gain`` (augmented-state feedback ``u[t] = K X[t]``) must be given.
    ``u_hist`` lists ``u[-d], ..., u[-1]`` and defaults to zeros.
    """
    n, m, d = plant.n, plant.m, plant.d
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != n:
        raise ValueError(f"x0 must have length {n}, got {x0.size}")
    u_hist = np.zeros((d, m)) if u_hist is None else np.asarray(u_hist, dtype=float).reshape(d, m)
    if (inputs is None) == (gain is None):
        raise ValueError("give exactly one of inputs= or gain=")
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float).reshape(-1, m)
        if horizon is None:
            horizon = inputs.shape[0]
        if inputs.shape[0] < horizon:
            raise ValueError(f"need {horizon} inputs, got {inputs.shape[0]}")
    else:
        gain = as_matrix(gain, "gain")
        if gain.shape != (m, plant.dim):
            raise ValueError(f"gain must be {m}x{plant.dim}, got {gain.shape}")
    if horizon is None or horizon < 1:
        raise ValueError("horizon must be >= 1")
    if noise is not None:
        noise = np.asarray(noise, dtype=float).reshape(-1, n)
        if noise.shape[0] != horizon:
            raise ValueError(f"noise must have {horizon} rows, got {noise.shape[0]}")

    x = np.zeros((horizon + 1, n))
    u = np.zeros((d + horizon, m))
    x[0] = x0
    u[:d] = u_hist
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            if gain is not None:
                u[t + d] = gain @ stack_state(x[t], u[t:t + d])
            else:
                u[t + d] = inputs[t]
            x[t + 1] = plant.A @ x[t] + plant.B @ u[t]
            if noise is not None:
                x[t + 1] += noise[t]
            if not (np.all(np.isfinite(x[t + 1])) and np.all(np.isfinite(u[t + d]))):
                raise SimulationError(t + 1)
    return Trajectory(x, u, d, None if noise is None else noise.copy())


def _check_stable(Acl):
    rho = spectral_radius(Acl)
    if not rho < 1.0:
        raise UnstableClosedLoopError(
            f"cost diverges: closed-loop spectral radius {rho:.6g} >= 1"
        )
    return rho


def cost_matrix(model: AugmentedModel, K, weights: CostWeights) -> np.ndarray:
    """``G`` with ``Acl' G Acl - G + Q + K'RK = 0``, so that ``J(X0) = X0' G X0``."""
    K = as_matrix(K, "K")
    Acl = closed_loop(model, K)
    _check_stable(Acl)
    W = weights.Q + K.T @ weights.R @ K
    G = scipy.linalg.solve_discrete_lyapunov(Acl.T, W)
    return 0.5 * (G + G.T)


def _power_sum_bound(Acl):
    """Upper bound on ``sum_j ||Acl^j||_2^2`` using a contracting power."""
    p, Ap = 1, Acl.copy()
    while np.linalg.norm(Ap, 2) >= 1.0:
        if p > 1 << 20:
            raise UnstableClosedLoopError("cost diverges: no contracting power found")
        Ap = Ap @ Ap
        p *= 2
    q = np.linalg.norm(Ap, 2)
    head, Aj = 0.0, np.eye(Acl.shape[0])
    for _ in range(p):
        head += np.linalg.norm(Aj, 2) ** 2
        Aj = Aj @ Acl
    return head / (1.0 - q * q)


def evaluate_cost(model: AugmentedModel, K, weights: CostWeights, X0, method="lyapunov",
                  rtol=1e-13, max_steps=1_000_000) -> float:
    """LQ cost ``J(X0)`` of ``u = K X`` on the augmented model.

    ``method="lyapunov"`` solves the discrete Lyapunov equation.
    ``method="truncated"`` sums stage costs until a rigorous geometric tail
    bound drops below ``rtol`` times the accumulated sum.
    """
    K = as_matrix(K, "K")
    X0 = np.asarray(X0, dtype=float).ravel()
    if X0.size != model.dim:
        raise ValueError(f"X0 must have length {model.dim}, got {X0.size}")
    if method == "lyapunov":
        G = cost_matrix(model, K, weights)
        return float(max(X0 @ G @ X0, 0.0))
    if method != "truncated":
        raise ValueError(f"unknown method {method!r}")
    Acl = closed_loop(model, K)
    _check_stable(Acl)
    W = weights.Q + K.T @ weights.R @ K
    wnorm = np.linalg.norm(W, 2)
    tail_factor = wnorm * _power_sum_bound(Acl)
    total, X = 0.0, X0.copy()
    for _ in range(max_steps):
        total += X @ W @ X
        X = Acl @ X
        tail = tail_factor * (X @ X)
        if tail <= rtol * total or tail == 0.0:
            return float(total)
    raise RuntimeError("truncated cost did not converge within max_steps")


# -- CSV trajectory files -------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_trajectory_csv(path, traj: Trajectory):
    """Write ``t,x1..xn,u`` rows; history rows (t<0) leave x blank, the last row leaves u blank."""
    n, m, d, H = traj.x.shape[1], traj.u.shape[1], traj.d, traj.horizon
    ucols = ["u"] if m == 1 else [f"u{j + 1}" for j in range(m)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ucols)
        for t in range(-d, H + 1):
            xs = [_fmt(v) for v in traj.x[t]] if t >= 0 else [""] * n
            us = [_fmt(v) for v in traj.u[t + d]] if t < H else [""] * m
            wr.writerow([t] + xs + us)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    n = sum(1 for h in header if h.startswith("x"))
    m = len(header) - 1 - n
    ts = [int(r[0]) for r in body]
    d = -min(ts) if min(ts) < 0 else 0
    H = max(ts)
    x = np.zeros((H + 1, n))
    u = np.zeros((d + H, m))
    for r, t in zip(body, ts):
        if t >= 0:
            x[t] = [float(v) for v in r[1:1 + n]]
        if t < H:
            u[t + d] = [float(v) for v in r[1 + n:]]
    return Trajectory(x, u, d)


def matrix_to_list(M) -> list:
    """Row-major nested list for JSON."""
    return np.asarray(M, dtype=float).tolist()
