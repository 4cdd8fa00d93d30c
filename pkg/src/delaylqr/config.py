"""Experiment configuration: one JSON document describing plant, data, noise bound and weights."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._linalg import psd_sqrt, psd_tol, min_eig
from ._sdp import SolverOptions
from .data import DataSet, NoiseModel, build_data, make_sigma_phi
from .plant import CostWeights, DelayPlant, Trajectory, simulate, stack_state


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field (dotted)."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


def _get(obj, key, path, default=...):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    if key not in obj:
        if default is ...:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return obj[key]


def _matrix(value, path, shape=None):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric matrix") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1) if shape is not None and shape[1] == 1 else M.reshape(1, -1)
    if M.ndim != 2:
        raise ConfigError(path, f"expected a 2-D array, got {M.ndim} dimensions")
    if not np.all(np.isfinite(M)):
        raise ConfigError(path, "entries must be finite")
    if shape is not None and M.shape != tuple(shape):
        raise ConfigError(path, f"expected shape {tuple(shape)}, got {M.shape}")
    return M


def _weight(value, path, size):
    """Scalars mean ``value * I``; matrices are taken as given."""
    if np.isscalar(value):
        return float(value) * np.eye(size)
    return _matrix(value, path, (size, size))


def _vector(value, path, size):
    v = np.array(value, dtype=float).ravel()
    if v.size != size:
        raise ConfigError(path, f"expected {size} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(path, "entries must be finite")
    return v


def _pos_int(value, path, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise ConfigError(path, f"expected an integer >= {minimum}")
    return int(value)


@dataclass(frozen=True)
class InputSignal:
    """Excitation ``u_t`` for ``t = -d, ..., horizon-1``.

    ``kind`` is ``sinusoid`` (``amplitude * sin(rate * t)``), ``prbs``
    (``+-amplitude`` from a seeded generator) or ``file`` (explicit values).
    """

    kind: str
    amplitude: float = 1.0
    rate: float = 1.0
    seed: Optional[int] = None
    values: Optional[np.ndarray] = None

    def sample(self, d, horizon, m) -> np.ndarray:
        t = np.arange(-d, horizon)
        if self.kind == "sinusoid":
            u = self.amplitude * np.sin(self.rate * t)
            return np.repeat(u[:, None], m, axis=1)
        if self.kind == "prbs":
            rng = np.random.default_rng(self.seed)
            return self.amplitude * (2.0 * rng.integers(0, 2, size=(t.size, m)) - 1.0)
        vals = np.asarray(self.values, dtype=float).reshape(-1, m)
        if vals.shape[0] < t.size:
            raise ConfigError("data.input.values", f"need {t.size} samples (t=-d..{horizon - 1}), got {vals.shape[0]}")
        return vals[:t.size]


def _read_values(path):
    if path.endswith(".json"):
        with open(path) as fh:
            return np.asarray(json.load(fh), dtype=float)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError:
        return np.array([[float(c) for c in r] for r in rows[1:]])


def _parse_input(obj, path, base_dir):
    kind = _get(obj, "type", path)
    if kind == "sinusoid":
        return InputSignal("sinusoid", float(_get(obj, "amplitude", path)), float(_get(obj, "rate", path)))
    if kind == "prbs":
        seed = _get(obj, "seed", path)
        return InputSignal("prbs", float(_get(obj, "amplitude", path)), seed=_pos_int(seed, f"{path}.seed", 0))
    if kind == "file":
        if "values" in obj:
            vals = np.asarray(obj["values"], dtype=float)
        else:
            fname = _get(obj, "path", path)
            full = fname if os.path.isabs(fname) else os.path.join(base_dir, fname)
            try:
                vals = _read_values(full)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"{path}.path", f"cannot read input file: {exc}") from None
        return InputSignal("file", values=vals)
    raise ConfigError(f"{path}.type", f"unknown input type {kind!r} (sinusoid, prbs, file)")


@dataclass(frozen=True)
class ExperimentConfig:
    plant: DelayPlant
    weights: CostWeights
    T: int
    t0: int
    data_x0: np.ndarray
    excitation: InputSignal
    noise_cov: np.ndarray
    seed: Optional[int]
    sigma: Optional[float] = None
    phi: Optional[tuple] = None
    x0: Optional[np.ndarray] = None
    u_hist: Optional[np.ndarray] = None
    sigmas: Optional[tuple] = None
    sweep_count: int = 20
    solver: SolverOptions = field(default_factory=SolverOptions)
    delta: Optional[float] = None

    @property
    def noisy(self) -> bool:
        return bool(np.any(self.noise_cov != 0))

    @property
    def X0(self) -> np.ndarray:
        """Augmented initial state used for simulation and cost evaluation."""
        n, m, d = self.plant.n, self.plant.m, self.plant.d
        x0 = np.zeros(n) if self.x0 is None else self.x0
        uh = np.zeros((d, m)) if self.u_hist is None else self.u_hist
        return stack_state(x0, uh)

    def noise_model(self, sigma: Optional[float] = None) -> NoiseModel:
        n, T = self.plant.n, self.T
        if sigma is not None:
            return make_sigma_phi(sigma, n, T)
        if self.phi is not None:
            return NoiseModel(*self.phi)
        if self.sigma is not None:
            return make_sigma_phi(self.sigma, n, T)
        raise ConfigError("noise_bound", "no sigma given in the config or on the command line")

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        return self if seed is None else replace(self, seed=int(seed))


def parse_config(obj: dict, base_dir: str = ".") -> ExperimentConfig:
    """Validate a config document; errors carry the dotted field path."""
    pl = _get(obj, "plant", "")
    A = _matrix(_get(pl, "A", "plant"), "plant.A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise ConfigError("plant.A", f"must be square, got {A.shape}")
    B = _matrix(_get(pl, "B", "plant"), "plant.B", None)
    if B.shape[0] != n:
        if B.shape[1] == n and B.shape[0] == 1:
            B = B.T
        else:
            raise ConfigError("plant.B", f"must have {n} rows, got {B.shape[0]}")
    m = B.shape[1]
    d = _pos_int(_get(pl, "d", "plant"), "plant.d")
    plant = DelayPlant(A, B, d)

    w = _get(obj, "weights", "")
    Q0 = _weight(_get(w, "Q0", "weights"), "weights.Q0", n)
    Qi_raw = _get(w, "Qi", "weights")
    if np.isscalar(Qi_raw):
        Qi_raw = [Qi_raw] * d
    if len(Qi_raw) != d:
        raise ConfigError("weights.Qi", f"expected {d} input-history weights, got {len(Qi_raw)}")
    Qi = [_weight(q, f"weights.Qi[{i}]", m) for i, q in enumerate(Qi_raw)]
    R = _weight(_get(w, "R", "weights"), "weights.R", m)
    for name, M in [("weights.Q0", Q0), ("weights.R", R)] + [(f"weights.Qi[{i}]", q) for i, q in enumerate(Qi)]:
        if np.max(np.abs(M - M.T)) > 1e-12 * (1 + np.max(np.abs(M))) or min_eig(M) < -psd_tol(M):
            raise ConfigError(name, "must be symmetric positive semidefinite")
    weights = CostWeights(Q0, tuple(Qi), R)

    dat = _get(obj, "data", "", {})
    T = _pos_int(_get(dat, "T", "data", 10), "data.T")
    t0 = _pos_int(_get(dat, "t0", "data", 0), "data.t0", 0)
    data_x0 = _vector(_get(dat, "x0", "data", [0.0] * n), "data.x0", n)
    inp = _parse_input(_get(dat, "input", "data", {"type": "sinusoid", "amplitude": 1.0, "rate": 1.0}),
                       "data.input", base_dir)
    cov_raw = _get(dat, "noise_cov", "data", 0.0)
    cov = _weight(cov_raw, "data.noise_cov", n)
    if np.max(np.abs(cov - cov.T)) > 0 or min_eig(cov) < -psd_tol(cov):
        raise ConfigError("data.noise_cov", "must be symmetric positive semidefinite")
    seed = _get(dat, "seed", "data", None)
    if seed is not None:
        seed = _pos_int(seed, "data.seed", 0)
    if np.any(cov != 0) and seed is None:
        raise ConfigError("data.seed", "a seed is required when noise_cov is nonzero")

    sigma, phi = None, None
    nb = _get(obj, "noise_bound", "", None)
    if nb is not None:
        if "sigma" in nb:
            sigma = float(nb["sigma"])
            if not sigma >= 0:
                raise ConfigError("noise_bound.sigma", "must be >= 0")
        elif "Phi11" in nb:
            P11 = _matrix(nb["Phi11"], "noise_bound.Phi11", (n, n))
            P22 = _matrix(_get(nb, "Phi22", "noise_bound"), "noise_bound.Phi22", (T, T))
            P12 = _matrix(nb.get("Phi12", np.zeros((n, T))), "noise_bound.Phi12", (n, T))
            try:
                NoiseModel(P11, P12, P22)
            except ValueError as exc:
                raise ConfigError("noise_bound", str(exc)) from None
            phi = (P11, P12, P22)
        else:
            raise ConfigError("noise_bound", "give either sigma or Phi11/Phi12/Phi22")

    init = _get(obj, "initial", "", {})
    x0 = _vector(init["x0"], "initial.x0", n) if "x0" in init else None
    uh = _vector(init["u_hist"], "initial.u_hist", d * m).reshape(d, m) if "u_hist" in init else None

    sw = _get(obj, "sweep", "", {})
    sigmas = None
    if "sigmas" in sw:
        sigmas = tuple(float(s) for s in sw["sigmas"])
        if not sigmas:
            raise ConfigError("sweep.sigmas", "grid must be nonempty")
        if any(b < a for a, b in zip(sigmas, sigmas[1:])) or sigmas[0] < 0:
            raise ConfigError("sweep.sigmas", "grid must be nonnegative and sorted ascending")
    count = _pos_int(sw.get("count", 20), "sweep.count", 2)

    sdp = _get(obj, "sdp", "", {})
    solver = SolverOptions(
        solver=str(sdp.get("solver", "CLARABEL")).upper(),
        tol_feas=float(sdp.get("tol_feas", 1e-8)),
        tol_gap=float(sdp.get("tol_gap", 1e-8)),
    )
    delta = _get(obj, "lmi", "", {}).get("delta")
    if delta is not None:
        delta = float(delta)
        if not delta > 0:
            raise ConfigError("lmi.delta", "must be > 0")

    return ExperimentConfig(plant, weights, T, t0, data_x0, inp, cov, seed, sigma, phi, x0, uh,
                            sigmas, count, solver, delta)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(obj, os.path.dirname(os.path.abspath(path)))


def draw_noise(cov, horizon, seed) -> np.ndarray:
    """``horizon`` samples of zero-mean Gaussian noise with covariance ``cov`` (rows are time)."""
    n = cov.shape[0]
    if not np.any(cov != 0):
        return np.zeros((horizon, n))
    rng = np.random.default_rng(seed)
    return rng.standard_normal((horizon, n)) @ psd_sqrt(cov)


def generate(cfg: ExperimentConfig) -> tuple[DataSet, Trajectory]:
    """Open-loop experiment on the config plant; returns the data window and the full run."""
    plant = cfg.plant
    horizon = cfg.t0 + cfg.T
    u = cfg.excitation.sample(plant.d, horizon, plant.m)
    w = draw_noise(cfg.noise_cov, horizon, cfg.seed)
    traj = simulate(plant, cfg.data_x0, u[:plant.d], inputs=u[plant.d:], noise=w)
    return build_data(traj, t0=cfg.t0, T=cfg.T), traj
