"""Independent reference computations used by the tests."""

import numpy as np

from delaylqr import _sdp, lmi
from delaylqr.data import compute_psi, make_sigma_phi
from delaylqr.slemma import QmiPair, QuadraticSet
from delaylqr.synthesis import SynthesisOptions, _dd_program


def scalar_instance(rng):
    """Random scalar set ``{z : k (r^2 - (z - c)^2) >= 0}`` and scalar pair."""
    k = rng.uniform(0.2, 3.0)
    c = rng.normal(0.0, 1.0)
    r = rng.uniform(0.1, 2.0)
    qset = QuadraticSet([[k * (r * r - c * c)]], [[k * c]], [[-k]])
    pair = QmiPair(
        P_a=[[rng.uniform(0.0, 6.0)]], P_b=[[rng.normal(0.0, 1.5)]], P_c=[[rng.uniform(-0.5, 3.0)]],
        Q_a=[[rng.uniform(0.0, 2.0)]], Q_b=[[rng.normal(0.0, 1.0)]], Q_c=[[rng.normal(0.0, 1.0)]],
    )
    return qset, pair, (c - r, c + r)


def scalar_grid_margin(pair, interval, points=20001):
    """Smallest eigenvalue of the robust inequality over a dense grid of the interval."""
    z = np.linspace(interval[0], interval[1], points)
    a = pair.P_a[0, 0] - pair.Q_a[0, 0] * z * z
    b = pair.P_b[0, 0] - pair.Q_b[0, 0] * z
    c = np.full_like(z, pair.P_c[0, 0] - pair.Q_c[0, 0])
    # closed-form smallest eigenvalue of [[a, b], [b, c]]
    lam = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return float(lam.min())


def matrix_instance(rng, n=2, m=2, l=2, scale=1.0):
    """Bounded set from random data-like blocks and a pair whose ``P'`` grows with ``scale``."""
    G = rng.standard_normal((m, m))
    Nc = -(G @ G.T + 0.5 * np.eye(m))
    Z0 = rng.standard_normal((m, n))
    Nb = -Nc @ Z0
    radius = rng.uniform(0.2, 1.0)
    # form is radius^2 I - (Z - Z0)' (-Nc) (Z - Z0), centred at Z0
    Na = radius ** 2 * np.eye(n) - Z0.T @ (-Nc) @ Z0
    qset = QuadraticSet(Na, Nb, Nc)
    H = rng.standard_normal((m, m))
    Qa = 0.3 * H @ H.T
    Qb = 0.3 * rng.standard_normal((l, m))
    Qc = 0.3 * rng.standard_normal((l, l))
    Qc = 0.5 * (Qc + Qc.T)
    F = rng.standard_normal((n + l, n + l))
    P = scale * (F @ F.T / (n + l) + np.eye(n + l))
    pair = QmiPair(P[:n, :n], P[n:, :n], P[n:, n:], Qa, Qb, Qc)
    return qset, pair


def pre_schur_verdict(M, Pi, tol):
    """PSD verdict of the pre-Schur form (requires ``Pi > 0``)."""
    return bool(np.linalg.eigvalsh(Pi)[0] > 0 and np.linalg.eigvalsh(M)[0] >= -tol)


def shifted(pair, t):
    """``pair`` with ``P'`` replaced by ``P' + t I``."""
    n, l = pair.P_a.shape[0], pair.l
    return QmiPair(pair.P_a + t * np.eye(n), pair.P_b, pair.P_c + t * np.eye(l),
                   pair.Q_a, pair.Q_b, pair.Q_c)


def tight_pair(qset, pair, find, rel=1e-3):
    """Shift ``P'`` to just above the smallest shift for which ``find`` returns a certificate."""
    lo, hi = -np.abs(pair.P).max() - 10.0, 1.0
    while find(qset, shifted(pair, hi)) is None:
        hi = 2 * hi + 1.0
    while hi - lo > rel * (1.0 + abs(hi)):
        mid = 0.5 * (lo + hi)
        if find(qset, shifted(pair, mid)) is None:
            lo = mid
        else:
            hi = mid
    return shifted(pair, hi)


def solve_interior_points(D, weights, levels=((0.07, 1.0), (0.1, 2.0), (0.12, 5.0))):
    """Strictly interior points of the data-driven LMI for the benchmark dimensions."""
    out = []
    for sigma, gamma in levels:
        psi = compute_psi(D, make_sigma_phi(sigma, 2, D.T))
        prob, v = _dd_program(psi, weights, 2, 1, 4, True, gamma, 1e-6, SynthesisOptions(), center=True)
        assert _sdp.solve(prob, SynthesisOptions().solver) == "optimal"
        vals = {k: (x.value if hasattr(x, "value") else x) for k, x in v.items()}
        out.append((psi, vals, prob.value))
    return out


def schur_instances(points, weights, count, seed):
    """Push interior points across the boundary by growing eps and eps'."""
    rng = np.random.default_rng(seed)
    for k in range(count):
        psi, v, _ = points[k % len(points)]
        base = (v["P"], v["L"], float(v["alpha"]), float(v["eps"]), float(v["eps_p"]), psi, weights, 2, 1, 4)
        lam = np.linalg.eigvalsh(lmi.assemble_dd_lmi(*base))[0]
        # up to s = 0.5 the minimum eigenvalue stays positive; beyond it the verdict depends on the point
        s = rng.uniform(0.0, 3.0)
        yield base[:3] + (base[3] + 2 * s * lam, base[4] + 2 * s * lam) + base[5:]


def series_cost(Acl, Qcl, X0, rtol=1e-17, max_steps=200_000):
    """Truncated sum of ``X_k' Qcl X_k`` along ``X_{k+1} = Acl X_k``."""
    X = np.asarray(X0, dtype=float)
    scale = np.linalg.norm(Qcl, 2)
    total = 0.0
    for _ in range(max_steps):
        total += float(X @ Qcl @ X)
        # stop once the state has decayed below round-off of the running sum
        if scale * float(X @ X) <= rtol * total:
            break
        X = Acl @ X
    return total
