"""Command-line front end: generate data, synthesize gains, simulate, sweep the noise level, check data."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, generate, load_config
from .data import (
    compute_psi, is_consistent, least_squares_model, load_dataset, min_consistent_sigma, preflight,
    save_dataset,
)
from ._linalg import spectral_radius
from .plant import UnstableClosedLoopError, evaluate_cost, lift_augmented, simulate, write_trajectory_csv
from .slemma import QuadraticSet
from .synthesis import (
    INFEASIBLE, SynthesisOptions, feasible_interval, interval_grid, load_result, save_result,
    solve_data_driven, solve_model_based, solve_stabilization_only, sweep_sigma,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _options(cfg: ExperimentConfig, seed) -> SynthesisOptions:
    return SynthesisOptions(solver=cfg.solver, delta=cfg.delta, seed=0 if seed is None else seed)


def _dataset(args, cfg):
    path = args.data or os.path.join(args.out, "dataset.json")
    if os.path.exists(path):
        try:
            return load_dataset(path)
        except (KeyError, ValueError) as exc:
            raise ConfigError("--data", f"invalid dataset file {path}: {exc}") from None
    if args.data:
        raise ConfigError("--data", f"no such file: {path}")
    D, _ = generate(cfg.with_seed(args.seed))
    return D


def cmd_generate(args, cfg):
    """Simulate the open-loop experiment and write the dataset and trajectory."""
    D, traj = generate(cfg.with_seed(args.seed))
    save_dataset(os.path.join(args.out, "dataset.json"), D)
    write_trajectory_csv(os.path.join(args.out, "trajectory.csv"), traj)
    print(f"wrote dataset (n={D.n}, m={D.m}, T={D.T}, d={D.d}) to {args.out}")
    return EXIT_OK


def cmd_synthesize(args, cfg):
    """Solve for a gain (data-driven, model-based or stabilization-only)."""
    options = _options(cfg, args.seed)
    if args.mode == "model":
        res = solve_model_based(cfg.plant, cfg.weights, options=options)
    else:
        D = _dataset(args, cfg)
        Phi = cfg.noise_model(args.sigma)
        if args.mode == "stabilize":
            res = solve_stabilization_only(D, Phi, options)
        else:
            res = solve_data_driven(D, Phi, cfg.weights, options=options)
    save_result(os.path.join(args.out, "result.json"), res)
    if res.ok:
        tail = "" if res.gamma is None else f", gamma = {res.gamma:.6g}"
        print(f"{args.mode}: {res.status}{tail}")
        return EXIT_OK
    print(f"{args.mode}: {res.status}: {res.message}", file=sys.stderr)
    return EXIT_INFEASIBLE if res.status == INFEASIBLE else EXIT_NUMERIC


def cmd_simulate(args, cfg):
    """Closed-loop simulation and exact cost of a saved result."""
    path = args.result or os.path.join(args.out, "result.json")
    try:
        res = load_result(path)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError("--result", f"cannot read {path}: {exc}") from None
    if res.K is None:
        print(f"result has no gain (status {res.status})", file=sys.stderr)
        return EXIT_NUMERIC
    model = lift_augmented(cfg.plant)
    if res.K.shape != (cfg.plant.m, model.dim):
        raise ConfigError("--result", f"gain shape {res.K.shape} does not match the config plant")
    X0 = cfg.X0
    rho = spectral_radius(model.calA + model.calB @ res.K)
    summary = {"spectral_radius": rho, "X0": X0.tolist()}
    try:
        J = evaluate_cost(model, res.K, cfg.weights, X0)
    except UnstableClosedLoopError as exc:
        summary.update({"stable": False, "message": str(exc)})
        _dump(os.path.join(args.out, "summary.json"), summary)
        print(f"closed loop unstable on the config plant (spectral radius {rho:.6g})", file=sys.stderr)
        return EXIT_NUMERIC
    n, m, d = cfg.plant.n, cfg.plant.m, cfg.plant.d
    traj = simulate(cfg.plant, X0[:n], X0[n:].reshape(d, m), gain=res.K, horizon=args.horizon)
    write_trajectory_csv(os.path.join(args.out, "closed_loop.csv"), traj)
    summary.update({"stable": True, "J": J})
    if res.gamma is not None:
        bound = res.gamma * float(X0 @ X0)
        summary.update({"gamma": res.gamma, "gamma_X0_sq": bound, "bound_holds": bool(J <= bound * (1 + 1e-7) + 1e-12)})
    _dump(os.path.join(args.out, "summary.json"), summary)
    print(f"J = {J:.6g}, spectral radius = {rho:.6g}")
    if summary.get("bound_holds") is False:
        print("cost bound J <= gamma |X0|^2 violated", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args, cfg):
    """Minimize gamma over a grid of noise levels."""
    D = _dataset(args, cfg)
    options = _options(cfg, args.seed)
    computed = feasible_interval(D, options)
    if cfg.sigmas is not None:
        grid = list(cfg.sigmas)
    elif computed is not None and np.isfinite(computed[1]):
        grid = interval_grid(computed[0], computed[1], cfg.sweep_count)
    else:
        lo = min_consistent_sigma(D)
        grid = list(np.linspace(lo, 2 * lo + 1e-3, cfg.sweep_count))
    sw = sweep_sigma(D, cfg.weights, grid, options)
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sigma", "status", "gamma"])
        for p in sw.points:
            wr.writerow([repr(p.sigma), p.status, "" if p.gamma is None else repr(p.gamma)])
    report = {
        "grid_interval": None if sw.interval is None else list(sw.interval),
        "computed_interval": None if computed is None else list(computed),
        "monotone": sw.monotone,
        "inversions": [list(x) for x in sw.inversions],
        "points": len(sw.points),
        "feasible_points": len(sw.feasible_points()),
    }
    _dump(os.path.join(args.out, "interval.json"), report)
    if sw.interval is None:
        print("no feasible grid point")
    else:
        print(f"feasible on grid: [{sw.interval[0]:.6g}, {sw.interval[1]:.6g}], monotone = {sw.monotone}")
    return EXIT_OK


def cmd_check(args, cfg):
    """Consistency and S-lemma regularity checks on a dataset."""
    D = _dataset(args, cfg)
    psi = compute_psi(D, cfg.noise_model(args.sigma))
    pf = preflight(D, psi)
    report = {
        "rank": pf.rank,
        "full_row_rank": pf.full_row_rank,
        "psi22_max_eig": pf.psi22_max_eig,
        "kernel_ok": pf.kernel_ok,
        "nonempty": pf.nonempty,
        "center_margin": pf.center_margin,
        "min_consistent_sigma": min_consistent_sigma(D),
        "true_model": dict(is_consistent(cfg.plant.A, cfg.plant.B, psi)._asdict()),
        "least_squares_model": dict(is_consistent(*least_squares_model(D), psi)._asdict()),
        "ok": pf.ok,
        "reasons": pf.reasons(),
    }
    try:
        QuadraticSet.from_psi(psi)
        report["slemma_regular"] = True
    except ValueError as exc:
        report["slemma_regular"] = False
        report["reasons"].append(str(exc))
    _dump(os.path.join(args.out, "check.json"), report)
    print("ok" if pf.ok else "; ".join(report["reasons"]))
    return EXIT_OK if pf.ok and report["slemma_regular"] else EXIT_INFEASIBLE


COMMANDS = {
    "generate": cmd_generate,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="delaylqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides data.seed")
        if name in ("synthesize", "sweep", "check"):
            p.add_argument("--data", default=None, help="dataset JSON (default <out>/dataset.json)")
        if name in ("synthesize", "check"):
            p.add_argument("--sigma", type=float, default=None, help="noise level (overrides noise_bound)")
        if name == "synthesize":
            p.add_argument("--mode", choices=("dd", "model", "stabilize"), default="dd")
        if name == "simulate":
            p.add_argument("--result", default=None, help="result JSON (default <out>/result.json)")
            p.add_argument("--horizon", type=int, default=50)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        if getattr(args, "sigma", None) is not None and args.sigma < 0:
            raise ConfigError("--sigma", "must be >= 0")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
