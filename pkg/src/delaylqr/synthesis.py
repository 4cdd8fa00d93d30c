"""Model-based and data-driven sub-optimal LQR synthesis for input-delay plants."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import cvxpy as cp
import numpy as np

from . import _sdp, lmi
from ._linalg import max_eig, min_eig, spectral_radius, symmetrize
from ._sdp import SolverOptions
from .data import (
    DataSet, NoiseModel, PsiForm, compute_psi, make_sigma_phi, min_consistent_sigma, preflight,
    sample_consistent_models, model_to_z,
)
from .plant import AugmentedModel, CostWeights, DelayPlant, cost_matrix, lift_augmented

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
SOLVER_ERROR = "solver_error"
VALIDATION_FAILED = "validation_failed"

DELTA = 1e-6


@dataclass(frozen=True)
class SynthesisOptions:
    """Knobs for the SDP solves and the post-validation.

    ``delta`` is the floor that replaces the strict inequalities
    (``P >= delta I``, ``eps, eps' >= delta``).  The LMIs are built with the state weight inflated to
    ``Q + margin I`` so that the Lyapunov inequality of the returned gain
    holds with margin ``-margin`` in ``S = P^{-1}`` coordinates rather than
    only up to solver round-off.
    """

    solver: SolverOptions = field(default_factory=SolverOptions)
    delta: Optional[float] = None
    equilibrate: bool = True
    validate_samples: int = 200
    lyapunov_tol: float = 1e-9
    margin: float = 1e-8
    lmi_tol: float = 1e-7
    seed: int = 0


@dataclass
class SynthesisResult:
    mode: str
    status: str
    solver_status: str
    K: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    alpha: Optional[float] = None
    eps: Optional[float] = None
    eps_prime: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def S(self) -> np.ndarray:
        return np.linalg.inv(self.P)

    def partition(self, n, m, d) -> lmi.PPartition:
        return lmi.PPartition(self.P, n, m, d)

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float).tolist()

        out = {
            "mode": self.mode,
            "status": self.status,
            "solver_status": self.solver_status,
            "K": arr(self.K),
            "P": arr(self.P),
            "L": arr(self.L),
            "alpha": self.alpha,
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            # wall-clock timing is left out so that saved results are reproducible
            "diagnostics": {k: v for k, v in self.diagnostics.items() if k != "solve_time"},
            "message": self.message,
        }
        if self.mode != "stabilize":
            out["gamma"] = self.gamma
        return out

    @classmethod
    def from_dict(cls, obj) -> "SynthesisResult":
        def arr(x):
            return None if x is None else np.atleast_2d(np.asarray(x, dtype=float))

        return cls(
            mode=obj["mode"], status=obj["status"], solver_status=obj.get("solver_status", ""),
            K=arr(obj.get("K")), P=arr(obj.get("P")), L=arr(obj.get("L")), gamma=obj.get("gamma"),
            alpha=obj.get("alpha"), eps=obj.get("eps"), eps_prime=obj.get("eps_prime"),
            diagnostics=obj.get("diagnostics", {}), message=obj.get("message", ""),
        )


def save_result(path, result: SynthesisResult):
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")


def load_result(path) -> SynthesisResult:
    with open(path) as fh:
        return SynthesisResult.from_dict(json.load(fh))


def _inflated(weights: CostWeights, margin: float) -> CostWeights:
    if margin <= 0:
        return weights
    Q0 = weights.Q0 + margin * np.eye(weights.Q0.shape[0])
    Qi = tuple(q + margin * np.eye(q.shape[0]) for q in weights.Qi)
    return CostWeights(Q0, Qi, weights.R)


def _rel_min_eig(M):
    M = symmetrize(np.asarray(M, dtype=float))
    return float(min_eig(M) / (1.0 + np.abs(M).max()))


# -- failure diagnosis ------------------------------------------------------

def _margin_status(prob, t, options):
    """Classify a failed solve by the optimal margin ``t`` of a bounded auxiliary program."""
    st = _sdp.solve(prob, options.solver)
    if st in _sdp.SOLVED and t.value is not None:
        return (INFEASIBLE if t.value <= 0 else SOLVER_ERROR), float(t.value)
    if st in _sdp.INFEASIBLE:
        return INFEASIBLE, None
    return SOLVER_ERROR, None


def model_stabilization_margin(model: AugmentedModel, options=None):
    """Max ``t`` with ``[[P, AP+BL], [., P]] >= t I``, ``trace P = 1``; positive iff stabilizable."""
    options = options or SynthesisOptions()
    N, m = model.dim, model.m
    P = cp.Variable((N, N), symmetric=True)
    L = cp.Variable((m, N))
    t = cp.Variable()
    M = lmi.model_stabilization_lmi(model, P, L)
    prob = cp.Problem(cp.Maximize(t), [M >> t * np.eye(2 * N), cp.trace(P) == 1, t <= 1])
    return _margin_status(prob, t, options)


def dd_stabilization_margin(psi: PsiForm, n, m, d, options=None):
    """Max ``t`` with the (equilibrated) stabilization LMI ``>= t I`` and ``trace P = 1``.

    The LMI is homogeneous in ``(P, L, alpha, eps, eps')``, so a positive
    margin means the strict conditions are feasible and the data-driven
    program is feasible for a large enough ``gamma``.
    """
    options = options or SynthesisOptions()
    N = n + m * d
    P = cp.Variable((N, N), symmetric=True)
    L = cp.Variable((m, N))
    alpha = cp.Variable(nonneg=True)
    eps = cp.Variable(nonneg=True)
    eps_p = cp.Variable(nonneg=True)
    t = cp.Variable()
    M = lmi.assemble_dd_lmi(P, L, alpha, eps, eps_p, psi, None, n, m, d, performance=False)
    T = lmi.equilibrator(psi, n, m, d, False) if options.equilibrate else np.eye(M.shape[0])
    Mt = lmi.sym(T.T @ M @ T)
    prob = cp.Problem(cp.Maximize(t), [Mt >> t * np.eye(Mt.shape[0]), cp.trace(P) == 1, t <= 1])
    return _margin_status(prob, t, options)


# -- model-based ------------------------------------------------------------

def solve_model_based(plant: DelayPlant, weights: CostWeights, gamma: Optional[float] = None,
                      options: Optional[SynthesisOptions] = None) -> SynthesisResult:
    """Sub-optimal LQR gain from a known plant; ``gamma=None`` minimizes the level."""
    options = options or SynthesisOptions()
    weights.check(plant)
    model = lift_augmented(plant)
    N, m = model.dim, model.m
    delta = options.delta if options.delta is not None else DELTA
    P = cp.Variable((N, N), symmetric=True)
    L = cp.Variable((m, N))
    g = cp.Variable() if gamma is None else float(gamma)
    first, second = lmi.assemble_model_lmis(model, _inflated(weights, options.margin), g, P, L)
    cons = [first >> delta * np.eye(first.shape[0]), second >> 0, P >> delta * np.eye(N)]
    prob = cp.Problem(cp.Minimize(g) if gamma is None else cp.Minimize(0), cons)
    t0 = time.perf_counter()
    status = _sdp.solve(prob, options.solver)
    elapsed = time.perf_counter() - t0
    mode = "model"
    if status not in _sdp.SOLVED:
        return _model_failure(model, weights, gamma, status, options, elapsed)
    Pv, Lv = _sdp.value(P), _sdp.value(L)
    gv = float(g.value) if gamma is None else float(gamma)
    res = SynthesisResult(mode, OPTIMAL, status, Lv @ np.linalg.inv(Pv), Pv, Lv, gv,
                          diagnostics={"solve_time": elapsed, "delta": delta,
                                       "iterations": prob.solver_stats.num_iters})
    return validate_model_based(res, plant, weights, options)


def _model_failure(model, weights, gamma, status, options, elapsed):
    if gamma is None:
        verdict, t = model_stabilization_margin(model, options)
    else:
        N, m = model.dim, model.m
        P = cp.Variable((N, N), symmetric=True)
        L = cp.Variable((m, N))
        t = cp.Variable()
        first, second = lmi.assemble_model_lmis(model, weights, float(gamma), P, L)
        prob = cp.Problem(cp.Maximize(t), [first >> t * np.eye(first.shape[0]),
                                           second >> t * np.eye(2 * N), t <= 1])
        verdict, t = _margin_status(prob, t, options)
    msg = ("no stabilizing gain achieves the requested level" if verdict == INFEASIBLE
           else "solver failed without an infeasibility verdict")
    return SynthesisResult("model", verdict, status, message=msg,
                           diagnostics={"solve_time": elapsed, "margin": t})


def validate_model_based(res, plant, weights, options):
    model = lift_augmented(plant)
    S = np.linalg.inv(res.P)
    Acl = model.calA + model.calB @ res.K
    rho = spectral_radius(Acl)
    lyap = float(max_eig(lmi.lyapunov_residual(Acl, S, weights.Q, res.K, weights.R)))
    diag = res.diagnostics
    diag.update({
        "p_min_eig": float(min_eig(res.P)),
        "spectral_radius": rho,
        "lyapunov_max_eig": lyap,
        "s_max_eig": float(max_eig(S)),
    })
    problems = []
    if not diag["p_min_eig"] > 0:
        problems.append("P is not positive definite")
    if not rho < 1:
        problems.append(f"closed loop not stable (spectral radius {rho:.6g})")
    elif lyap > -options.lyapunov_tol:
        problems.append(f"Lyapunov inequality margin {lyap:.3e} above -{options.lyapunov_tol:g}")
    if rho < 1:
        G = cost_matrix(model, res.K, weights)
        diag["cost_max_eig"] = float(max_eig(G))
        if diag["cost_max_eig"] > res.gamma * (1 + options.lmi_tol) + options.lmi_tol:
            problems.append("cost bound J <= gamma |X0|^2 violated")
    if problems:
        res.status = VALIDATION_FAILED
        res.message = "; ".join(problems)
    return res


# -- data-driven ---------------------------------------------------------------

def _dd_delta(psi, options):
    return options.delta if options.delta is not None else DELTA


def _dd_program(psi, design, n, m, d, performance, gamma, delta, options, center=False):
    """Data-driven SDP; ``gamma=None`` minimizes the level, ``center=True`` maximizes the LMI margin."""
    N = n + m * d
    v = {
        "P": cp.Variable((N, N), symmetric=True),
        "L": cp.Variable((m, N)),
        "alpha": cp.Variable(nonneg=True),
        "eps": cp.Variable(),
        "eps_p": cp.Variable(),
    }
    M = lmi.assemble_dd_lmi(v["P"], v["L"], v["alpha"], v["eps"], v["eps_p"], psi, design,
                            n, m, d, performance)
    T = lmi.equilibrator(psi, n, m, d, performance) if options.equilibrate else np.eye(M.shape[0])
    Mt = lmi.sym(T.T @ M @ T)
    t = cp.Variable() if center else 0.0
    cons = [Mt >> t * np.eye(Mt.shape[0]), v["eps"] >= delta, v["eps_p"] >= delta,
            v["P"] >> delta * np.eye(N)]
    objective = cp.Minimize(0)
    if performance:
        v["gamma"] = cp.Variable() if gamma is None else float(gamma)
        cons.append(lmi.performance_lmi(v["P"], v["gamma"], N) >> t * np.eye(2 * N))
        if gamma is None:
            objective = cp.Minimize(v["gamma"])
    if center:
        cons.append(t <= 1)
        objective = cp.Maximize(t)
    return cp.Problem(objective, cons), v


def _dd_result(mode, status, prob, v, diag):
    Pv, Lv = _sdp.value(v["P"]), _sdp.value(v["L"])
    g = v.get("gamma")
    return SynthesisResult(
        mode, OPTIMAL, status, Lv @ np.linalg.inv(Pv), Pv, Lv,
        None if g is None else float(g.value if isinstance(g, cp.Variable) else g),
        max(float(v["alpha"].value), 0.0), float(v["eps"].value), float(v["eps_p"].value),
        diagnostics={**diag, "iterations": prob.solver_stats.num_iters},
    )


BACKOFFS = (1e-3, 1e-2)


def _solve_dd(D: DataSet, psi: PsiForm, weights: Optional[CostWeights], gamma, mode, options):
    n, m, d = D.n, D.m, D.d
    pf = preflight(D, psi)
    base_diag = {"rank": pf.rank, "center_margin": pf.center_margin, "psi_norm": psi.norm}
    if not pf.ok:
        return SynthesisResult(mode, INFEASIBLE, "not_run", message="; ".join(pf.reasons()),
                               diagnostics={**base_diag, "failed": "preflight"})
    performance = mode != "stabilize"
    delta = _dd_delta(psi, options)
    design = None if weights is None else _inflated(weights, options.margin)
    prob, v = _dd_program(psi, design, n, m, d, performance, gamma, delta, options)
    t0 = time.perf_counter()
    status = _sdp.solve(prob, options.solver)
    base_diag.update({"solve_time": time.perf_counter() - t0, "delta": delta,
                      "equilibrated": options.equilibrate})
    if status not in _sdp.SOLVED:
        if performance and gamma is not None:
            verdict, t = _dd_fixed_gamma_margin(psi, weights, float(gamma), n, m, d, options)
        else:
            verdict, t = dd_stabilization_margin(psi, n, m, d, options)
        if verdict == SOLVER_ERROR and performance and gamma is None:
            res = _bisect_dd(psi, design, D, weights, delta, options, {**base_diag, "margin": t})
            if res is not None:
                return res
        msg = ("LMI infeasible: no gain meets the condition for every consistent model"
               if verdict == INFEASIBLE else "solver failed without an infeasibility verdict")
        return SynthesisResult(mode, verdict, status, message=msg,
                               diagnostics={**base_diag, "failed": "lmi", "margin": t})
    res = validate_data_driven(_dd_result(mode, status, prob, v, base_diag), D, psi, weights, options)
    if res.ok:
        return res
    # The optimum sits on the boundary of the feasible set, where solver
    # round-off can leave the point marginally infeasible.  Back off the
    # level slightly and re-solve for a well-centred point instead.
    first = res
    levels = [(b, None if gamma is None and not performance else
               (res.gamma * (1 + b) if gamma is None else gamma)) for b in BACKOFFS]
    for b, level in levels:
        prob, v = _dd_program(psi, design, n, m, d, performance, level, delta, options, center=True)
        st = _sdp.solve(prob, options.solver)
        if st not in _sdp.SOLVED:
            continue
        res = validate_data_driven(_dd_result(mode, st, prob, v, {**base_diag, "backoff": b}),
                                   D, psi, weights, options)
        if res.ok:
            return res
    first.message += "; re-solve with backed-off level did not pass validation"
    return first


def _bisect_dd(psi, design, D, weights, delta, options, diag, gamma_max=1e8):
    """Fallback when direct minimization fails: bisect on the level with centred fixed-level solves."""
    n, m, d = D.n, D.m, D.d

    def centred(g):
        prob, v = _dd_program(psi, design, n, m, d, True, g, delta, options, center=True)
        st = _sdp.solve(prob, options.solver)
        ok = st in _sdp.SOLVED and prob.value is not None and prob.value > 0
        return ok, st, prob, v

    hi = 1.0
    while not centred(hi)[0]:
        hi *= 10.0
        if hi > gamma_max:
            return None
    level = bisect_gamma(lambda g: centred(g)[0], 0.0, hi, rtol=1e-3)
    ok, st, prob, v = centred(level)
    res = _dd_result("dd", st, prob, v, {**diag, "method": "bisection"})
    res = validate_data_driven(res, D, psi, weights, options)
    return res if res.ok else None


def _dd_fixed_gamma_margin(psi, weights, gamma, n, m, d, options):
    N = n + m * d
    P = cp.Variable((N, N), symmetric=True)
    L = cp.Variable((m, N))
    alpha = cp.Variable(nonneg=True)
    eps = cp.Variable()
    eps_p = cp.Variable()
    t = cp.Variable()
    M = lmi.assemble_dd_lmi(P, L, alpha, eps, eps_p, psi, weights, n, m, d)
    T = lmi.equilibrator(psi, n, m, d) if options.equilibrate else np.eye(M.shape[0])
    Mt = lmi.sym(T.T @ M @ T)
    G = lmi.performance_lmi(P, gamma, N)
    prob = cp.Problem(cp.Maximize(t), [Mt >> t * np.eye(Mt.shape[0]), G >> t * np.eye(2 * N),
                                       eps >= t, eps_p >= t, t <= 1])
    return _margin_status(prob, t, options)


def robust_lyapunov_margins(K, S, psi: PsiForm, weights: Optional[CostWeights], d, count, seed,
                            models=None):
    """Max eigenvalue of the Lyapunov residual at sampled consistent models.

    Returns ``(margins, models)``; with ``weights=None`` the cost terms are
    dropped (pure stability check).
    """
    n, m = psi.n, psi.m
    if models is None:
        models = sample_consistent_models(psi, count, seed)
    Zs = np.array([model_to_z(A, B) for A, B in models])
    probe = lift_augmented(DelayPlant(models[0][0], models[0][1], d))
    Acl = lmi.closed_loops_for_models(Zs, probe.calA, probe.calB, K, n, m)
    N = probe.dim
    Q = np.zeros((N, N)) if weights is None else weights.Q
    R = np.zeros((m, m)) if weights is None else weights.R
    res = lmi.lyapunov_residual(Acl, S, Q, K, R)
    return max_eig(res), models


def validate_data_driven(res, D, psi, weights, options):
    n, m, d = D.n, D.m, D.d
    N = n + m * d
    diag = res.diagnostics
    performance = res.mode != "stabilize"
    M = lmi.assemble_dd_lmi(res.P, res.L, res.alpha, res.eps, res.eps_prime, psi, weights,
                            n, m, d, performance)
    T = lmi.equilibrator(psi, n, m, d, performance) if options.equilibrate else np.eye(M.shape[0])
    diag["lmi_min_eig_rel"] = _rel_min_eig(T.T @ M @ T)
    diag["p_min_eig"] = float(min_eig(res.P))
    problems = []
    if not diag["p_min_eig"] > 0:
        problems.append("P is not positive definite")
        res.status, res.message = VALIDATION_FAILED, "; ".join(problems)
        return res
    S = np.linalg.inv(res.P)
    diag["s_max_eig"] = float(max_eig(S))
    if diag["lmi_min_eig_rel"] < -options.lmi_tol:
        problems.append(f"main LMI minimum eigenvalue {diag['lmi_min_eig_rel']:.3e} (relative)")
    if performance:
        diag["gamma_slack"] = res.gamma - diag["s_max_eig"]
        if diag["s_max_eig"] > res.gamma + options.lmi_tol * max(1.0, res.gamma):
            problems.append("P^{-1} <= gamma I violated")
    margins, _ = robust_lyapunov_margins(res.K, S, psi, weights if performance else None, d,
                                         options.validate_samples, options.seed)
    diag["robust_lyapunov_max"] = float(np.max(margins))
    diag["robust_samples"] = int(len(margins))
    if diag["robust_lyapunov_max"] > -options.lyapunov_tol:
        problems.append(
            f"Lyapunov inequality fails on sampled consistent models "
            f"(max eigenvalue {diag['robust_lyapunov_max']:.3e})"
        )
    if problems:
        res.status = VALIDATION_FAILED
        res.message = "; ".join(problems)
    return res


def solve_data_driven(D: DataSet, Phi: NoiseModel, weights: CostWeights, gamma: Optional[float] = None,
                      options: Optional[SynthesisOptions] = None) -> SynthesisResult:
    """Robust sub-optimal LQR gain from data.

    Builds ``Psi`` from the data and noise bound, then minimizes ``gamma``
    (or checks a fixed ``gamma``) subject to the data-driven LMI and the
    performance LMI.  The returned gain is ``K = L P^{-1}``.
    """
    options = options or SynthesisOptions()
    if weights.d != D.d or weights.Q0.shape[0] != D.n or weights.R.shape[0] != D.m:
        raise ValueError("weights do not match the data dimensions")
    return _solve_dd(D, compute_psi(D, Phi), weights, gamma, "dd", options)


def solve_stabilization_only(D: DataSet, Phi: NoiseModel,
                             options: Optional[SynthesisOptions] = None) -> SynthesisResult:
    """Stabilizing gain from the leading five-block sub-LMI (no performance level)."""
    options = options or SynthesisOptions()
    return _solve_dd(D, compute_psi(D, Phi), None, None, "stabilize", options)


def bisect_gamma(feasible, lo, hi, rtol=1e-4, max_iter=100):
    """Smallest level accepted by ``feasible(gamma)`` on ``[lo, hi]`` (cross-check for direct minimization)."""
    if not feasible(hi):
        return None
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = np.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- sigma sweep ------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    sigma: float
    status: str
    gamma: Optional[float]


@dataclass
class SweepResult:
    points: list
    interval: Optional[tuple]
    monotone: bool
    inversions: list

    def feasible_points(self):
        return [p for p in self.points if p.status == OPTIMAL]


def sweep_sigma(D: DataSet, weights: CostWeights, sigmas: Sequence[float],
                options: Optional[SynthesisOptions] = None, inversion_tol: float = 1e-6,
                results: Optional[list] = None) -> SweepResult:
    """Minimize ``gamma`` for each noise level on an ascending grid.

    ``results``, when given, collects the full :class:`SynthesisResult` per
    grid point.
    """
    sigmas = [float(s) for s in sigmas]
    if any(b < a for a, b in zip(sigmas, sigmas[1:])):
        raise ValueError("sigma grid must be sorted ascending")
    options = options or SynthesisOptions()
    pts = []
    for s in sigmas:
        r = solve_data_driven(D, make_sigma_phi(s, D.n, D.T), weights, options=options)
        if results is not None:
            results.append(r)
        pts.append(SweepPoint(s, r.status, r.gamma if r.ok else None))
    feas = [p for p in pts if p.status == OPTIMAL]
    interval = (feas[0].sigma, feas[-1].sigma) if feas else None
    inversions = [
        (a.sigma, b.sigma) for a, b in zip(feas, feas[1:])
        if b.gamma < a.gamma * (1 - inversion_tol) - inversion_tol
    ]
    return SweepResult(pts, interval, not inversions, inversions)


def feasible_interval(D: DataSet, options: Optional[SynthesisOptions] = None, rtol: float = 1e-4,
                      sigma_max: float = 1e6):
    """Noise levels ``[lo, hi]`` for which the consistent set is nonempty and the program is feasible.

    ``lo`` is where the consistent set becomes nonempty; ``hi`` is located by
    bisection on the sign of the stabilization margin.  Returns ``None`` when
    no level is feasible.
    """
    options = options or SynthesisOptions()
    lo = min_consistent_sigma(D)

    def ok(s):
        psi = compute_psi(D, make_sigma_phi(s, D.n, D.T))
        verdict, t = dd_stabilization_margin(psi, D.n, D.m, D.d, options)
        return t is not None and t > 0

    start = lo if lo > 0 else 1e-6
    if not ok(start):
        return None
    a, b = start, 2 * start
    while ok(b):
        a, b = b, 2 * b
        if b > sigma_max:
            return lo, np.inf
    while b - a > rtol * b:
        mid = 0.5 * (a + b)
        if ok(mid):
            a = mid
        else:
            b = mid
    return lo, a


def interval_grid(lo, hi, count, first=0.02, last=0.998):
    """Grid inside ``[lo, hi]`` that clusters geometrically toward ``hi``."""
    frac = 1.0 - np.geomspace(1.0 - first, 1.0 - last, count)
    return list(lo + (hi - lo) * frac)
