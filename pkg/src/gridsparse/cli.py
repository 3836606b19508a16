"""Command-line front end.

Every run directory gets a ``config.json`` holding the subcommand and all
resolved flags; ``--config`` reads one back so a run can be replayed
bit-exactly. Exit codes: 0 success, 1 solver non-convergence, 2 I/O or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, studies
from .admm import AdmmConfig
from .model import PARAM_STATS, GridScenario, generate_scenario
from .mpc import MpcConfig, half_normal_weights, run_closed_loop, write_run_config

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _add_scenario(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", help="scenario JSON; otherwise one is generated from --I/--seed")
    g.add_argument("--I", type=_positive_int, default=50, help="number of households (generated)")
    g.add_argument("--seed", type=int, default=0, help="scenario seed (generated)")
    g.add_argument("--length", type=_positive_int, default=96, help="profile length (generated)")


def _add_solver(p):
    d = AdmmConfig()
    g = p.add_argument_group("solver")
    g.add_argument("--eps", type=float, default=d.eps, help="residual tolerance")
    g.add_argument("--rho0", type=float, default=d.rho0, help="initial step size")
    g.add_argument("--eta", type=float, default=d.eta, help="step size scaling factor")
    g.add_argument("--mu", type=float, default=d.mu, help="residual balance ratio")
    g.add_argument("--max-iter", type=_positive_int, default=d.max_iter)
    g.add_argument("--dual-order", choices=("paper", "standard"), default=d.dual_update_order)
    g.add_argument("--workers", type=_positive_int, default=d.workers,
                   help="threads for the local projections")


def _add_problem(p, multi=False):
    g = p.add_argument_group("problem")
    if multi:
        g.add_argument("--p", type=int, nargs="+", choices=(1, 2), default=[2, 1])
    else:
        g.add_argument("--p", type=int, choices=(1, 2), default=2, help="group norm")
        g.add_argument("--kappa", type=float, default=1e-3, help="sparsity weight")
    g.add_argument("--N", type=int, default=24, help="prediction horizon")
    g.add_argument("--weight-seed", type=int, default=1, help="seed of the household weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsparse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random scenario")
    p.add_argument("--I", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=_positive_int, default=96)
    p.add_argument("--N", type=int, default=24)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--x0", type=float, default=0.5, help="initial SoC, capped at capacity")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("open-loop", help="solve one fleet problem")
    _add_scenario(p)
    _add_problem(p)
    _add_solver(p)
    p.add_argument("--k", type=int, default=None, help="time instant (default N-1)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("closed-loop", help="run the receding-horizon loop")
    _add_scenario(p)
    _add_problem(p)
    _add_solver(p)
    p.add_argument("--steps", type=_positive_int, default=48)
    p.add_argument("--weight-refresh", type=_positive_int, default=6)
    p.add_argument("--fixed-weights", action="store_true", help="unit weights, never redrawn")
    p.add_argument("--apply-eps", type=float, default=1e-4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="fleet-size table or kappa deviation curve")
    p.add_argument("kind", choices=("size", "kappa"))
    p.add_argument("--I", type=_positive_int, nargs="+", default=[25, 50, 100])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=_positive_int, default=96)
    p.add_argument("--kappa", type=float, nargs="+", default=None,
                   help="kappa values (size: first value; kappa: the grid)")
    p.add_argument("--replications", type=_positive_int, default=20)
    _add_problem(p, multi=True)
    _add_solver(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="print tables from a run directory")
    p.add_argument("run", help="run directory")

    for name, sp in sub.choices.items():
        if name != "report":
            sp.add_argument("--config", help="replay flags from a config.json")
        sp.add_argument("-q", "--quiet", action="store_true", help="no progress on stderr")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = getattr(args, "config", None)
    if cfg:
        path = Path(cfg)
        if not path.is_file():
            parser.exit(EXIT_CONFIG, f"gridsparse: config file not found: {path}\n")
        try:
            saved = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            parser.exit(EXIT_CONFIG, f"gridsparse: {path}: invalid JSON ({err})\n")
        if saved.get("command") != args.command:
            parser.exit(EXIT_CONFIG, f"gridsparse: {path} is a {saved.get('command')!r} config\n")
        explicit = vars(parser.parse_args(argv))
        defaults = vars(_defaults(parser, args.command))
        merged = dict(saved["args"])
        # flags given on the command line override the stored ones
        for key, val in explicit.items():
            if key not in merged or val != defaults.get(key):
                merged[key] = val
        merged["config"] = None
        args = argparse.Namespace(**merged)
    return args


def _defaults(parser, command):
    req = {"gen": ["--I", "1", "--out", "."], "sweep": ["size", "--out", "."]}
    return parser.parse_args([command] + req.get(command, ["--out", "."]))


def _progress(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def _save_config(out: Path, args):
    payload = {"command": args.command, "version": __version__,
               "args": {k: v for k, v in vars(args).items() if k != "config"}}
    write_run_config(out / "config.json", payload)


def _load_scenario(args) -> GridScenario:
    if args.scenario:
        return GridScenario.load(args.scenario)
    return generate_scenario(args.I, seed=args.seed, horizon_length=args.length, N_default=args.N)


def _admm_config(args) -> AdmmConfig:
    return AdmmConfig(rho0=args.rho0, eps=args.eps, eta=args.eta, mu=args.mu,
                      max_iter=args.max_iter, dual_update_order=args.dual_order,
                      workers=args.workers)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _write_matrix(path, mat, header):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in np.atleast_2d(mat):
            wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else int(x)
                         for x in row])


def _write_rows(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_gen(args) -> int:
    if args.N < 2:
        raise ConfigError("--N must be at least 2")
    sc = generate_scenario(args.I, seed=args.seed, horizon_length=args.length, T=args.T,
                           x0=args.x0, N_default=args.N)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sc.save(out / "scenario.json", out / "profiles.csv")
    _save_config(out, args)
    print(f"{'param':<8}{'mean':>10}{'std':>10}{'target':>10}{'target std':>12}")
    for name, (mean, std) in PARAM_STATS.items():
        vals = getattr(sc, "capacity" if name == "C" else name)
        print(f"{name:<8}{vals.mean():>10.4f}{vals.std():>10.4f}{mean:>10.4f}{std:>12.4f}")
    return EXIT_OK


def cmd_open_loop(args) -> int:
    if args.N < 2:
        raise ConfigError("--N must be at least 2")
    sc = _load_scenario(args)
    sigma = half_normal_weights(np.random.default_rng(args.weight_seed), sc.I)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_config(out, args)
    ol = studies.open_loop(sc, kappa=args.kappa, sigma=sigma, p=args.p, N=args.N, k=args.k,
                           admm_config=_admm_config(args), trace=True)
    res = ol.result
    N = ol.problem.N
    header = [f"{s}{n}" for n in range(N) for s in ("u_plus_", "u_minus_")]
    _write_matrix(out / "u.csv", res.u, header)
    _write_matrix(out / "pattern.csv", ol.pattern, [f"n{n}" for n in range(N)])
    res.write_trace(out / "trace.csv")
    metrics = {
        "status": res.status, "converged": res.converged, "partial": not res.converged,
        "iterations": res.iterations, "rho_final": res.rho,
        "sparsity_percent": ol.sparsity, "objective": ol.problem.objective(res.u),
        "tracking": ol.problem.tracking(res.u),
        "active_households": int(np.count_nonzero(ol.pattern.any(axis=1))),
        "floats_up": res.ledger.floats_up, "floats_down": res.ledger.floats_down,
        "sigma": sigma.tolist(), "z_bar": ol.z_bar.tolist(),
        "zeta_bar": ol.problem.zeta_bar.tolist(),
    }
    _write_json(out / "metrics.json", metrics)
    _progress(args, f"open loop: {res.status} after {res.iterations} iterations, "
                    f"{ol.sparsity:.2f}% nonzero")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_closed_loop(args) -> int:
    sc = _load_scenario(args)
    mode = "fixed" if args.fixed_weights else "periodic_random"
    cfg = MpcConfig(N=args.N, apply_eps=args.apply_eps, weight_refresh_steps=args.weight_refresh,
                    weight_seed=args.weight_seed, weight_mode=mode, kappa=args.kappa, p=args.p,
                    sim_steps=args.steps)
    if args.steps + args.N > sc.length:
        raise ConfigError(f"scenario has {sc.length} samples, need steps + N = {args.steps + args.N}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_config(out, args)
    log = run_closed_loop(sc, cfg, _admm_config(args), progress=lambda r: _progress(
        args, f"k={r.k:3d} active={r.active:4d} iters={r.iterations:5d} {r.status}"))
    log.write(out)
    ok = all(r.status == "solved" for r in log.records)
    metrics = {
        "converged": ok, "partial": not ok,
        "sparsity_percent": log.sparsity(cfg.count_tol),
        "mean_open_loop_sparsity": float(np.mean([r.sparsity_open for r in log.records])),
        "admm_iterations": int(sum(r.iterations for r in log.records)),
        "peak_demand": float(np.max(log.z_bar)),
        "peak_uncontrolled": float(np.max([r.w_bar for r in log.records])),
        "min_soc_margin": float(np.min(log.soc)),
        "max_soc_excess": float(np.max(log.soc - sc.capacity)),
        "mpc": asdict(cfg), "admm": asdict(_admm_config(args)), "scenario_seed": sc.seed,
    }
    _write_json(out / "run.json", metrics)
    _progress(args, f"closed loop: {metrics['sparsity_percent']:.2f}% nonzero")
    return EXIT_OK if ok else EXIT_NONCONVERGED


def cmd_sweep(args) -> int:
    if args.N < 2:
        raise ConfigError("--N must be at least 2")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_config(out, args)
    acfg = _admm_config(args)
    if args.kind == "size":
        kappa = args.kappa[0] if args.kappa else 1e-3
        rows = studies.table2(tuple(args.I), tuple(args.p), kappa=kappa,
                              replications=args.replications, seed=args.seed,
                              weight_seed=args.weight_seed, N=args.N, admm_config=acfg,
                              horizon_length=args.length,
                              progress=lambda r: _progress(
                                  args, f"I={r['I']} p={r['p']} rep={r['replication']} "
                                        f"{r['sparsity']:.2f}%"))
        _write_rows(out / "replications.csv", rows)
        table = []
        for I in args.I:
            for p in args.p:
                vals = [r["sparsity"] for r in rows if r["I"] == I and r["p"] == p]
                table.append({"I": I, "p": p, "kappa": kappa, "replications": len(vals),
                              "mean": float(np.mean(vals)), "std": float(np.std(vals)),
                              "median": float(np.median(vals))})
        _write_rows(out / "table.csv", table)
        ok = all(r["status"] == "solved" for r in rows)
    else:
        kappas = args.kappa if args.kappa else studies.KAPPA_GRID.tolist()
        rows = []
        for I in args.I:
            sc = generate_scenario(I, seed=args.seed, horizon_length=args.length, N_default=args.N)
            sigma = half_normal_weights(np.random.default_rng(args.weight_seed), I)
            for p in args.p:
                for r in studies.kappa_sweep(sc, kappas, p=p, sigma=sigma, N=args.N,
                                             admm_config=acfg):
                    r["I"] = I
                    rows.append(r)
                    _progress(args, f"I={I} p={p} kappa={r['kappa']:.3g} "
                                    f"deviation={r['mean_deviation']:.4g}")
        _write_rows(out / "deviation.csv", rows)
        ok = all(r["status"] == "solved" for r in rows)
    return EXIT_OK if ok else EXIT_NONCONVERGED


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory not found: {run}")
    found = False
    if (run / "table.csv").is_file():
        found = True
        rows = _read_csv(run / "table.csv")
        sizes = sorted({int(r["I"]) for r in rows})
        print("| p | " + " | ".join(f"I={I}" for I in sizes) + " |")
        print("|---|" + "---|" * len(sizes))
        for p in sorted({int(r["p"]) for r in rows}, reverse=True):
            cells = {int(r["I"]): float(r["mean"]) for r in rows if int(r["p"]) == p}
            print(f"| {p} | " + " | ".join(f"{cells[I]:.2f}" for I in sizes) + " |")
    if (run / "deviation.csv").is_file():
        found = True
        print(f"{'I':>5}{'p':>3}{'kappa':>12}{'mean dev':>12}{'nonzero %':>11}")
        for r in _read_csv(run / "deviation.csv"):
            print(f"{r['I']:>5}{r['p']:>3}{float(r['kappa']):>12.3g}"
                  f"{float(r['mean_deviation']):>12.5f}{float(r['sparsity']):>11.2f}")
    for name in ("metrics.json", "run.json"):
        if (run / name).is_file():
            found = True
            data = json.loads((run / name).read_text())
            for key, val in data.items():
                if not isinstance(val, (list, dict)):
                    print(f"{key:<26}{val}")
    if not found:
        raise ConfigError(f"{run} holds no recognizable results")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "open-loop": cmd_open_loop, "closed-loop": cmd_closed_loop,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, ConfigError) as err:
        print(f"gridsparse: error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
