"""Command-line front end.

Commands: solve (backward solve to an artifact directory), evaluate (forward
Monte Carlo of requested strategies against an artifact), compare (combined
statistics table across artifacts on shared forward paths), stability
(macro-replication spread of the fitted control map across design sizes), and
quantizer (dump a quadrature rule to CSV).

Exit codes: 0 success, 1 validation, 2 numeric failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .artifacts import _spec_doc, load_artifact, save_artifact
from .config import ConfigError, RunConfig, build_config, load_config, with_overrides
from .dynamics import AugmentedState, Beliefs, LossFunction, ModelParams
from .evaluator import (
    adaptive_delta,
    adaptive_robust,
    constant,
    evaluate,
    merton_static,
    myopic_adaptive,
    myopic_adaptive_table,
    report_stats,
    static_robust,
    static_robust_solve,
    theta_grid_over_initial_set,
    write_histogram_csv,
    write_paths_csv,
    write_summary_json,
)
from .numerics import gaussian_rule
from .solver import SolveError, macro_replicate, solve


def _threads_override(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ROBUSTBELL_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"ROBUSTBELL_THREADS: expected an integer, got {env!r}") from None
    return None


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def cmd_solve(args) -> int:
    rc = load_config(args.config)
    rc = with_overrides(
        rc, seed=args.seed, threads=_threads_override(args), out_dir=args.out,
        diagnostics=True if args.diagnostics else None,
    )
    cfg = rc.solver
    if rc.diagnostics:
        cfg = replace(cfg, diagnostics_dir=os.path.join(rc.out_dir, "diagnostics"))
    t0 = time.perf_counter()
    bundle = solve(rc.spec, cfg)
    wall = time.perf_counter() - t0
    save_artifact(bundle, rc.sections, rc.out_dir, timings={"solve_seconds": wall})
    print(f"solved {rc.spec.kind} ({rc.mode}, seed {cfg.seed}) in {wall:.1f}s -> {rc.out_dir}")
    return 0


def _build_strategy(name: str, rc: RunConfig, bundle):
    if name == "adaptive_robust":
        b = bundle if bundle.mode == "adaptive" else solve(rc.spec, replace(rc.solver, frozen_set=False))
        return adaptive_robust(b)
    if name == "static_robust":
        b = bundle if bundle.mode == "static_robust" else static_robust_solve(rc.spec, rc.solver)
        return static_robust(b)
    if name == "myopic_adaptive":
        grid = theta_grid_over_initial_set(rc.spec, rc.x0.beliefs, rc.myopic_grid)
        return myopic_adaptive(myopic_adaptive_table(rc.spec, grid, rc.solver))
    if name == "adaptive_delta":
        return adaptive_delta(rc.spec)
    if name == "merton_static":
        return merton_static(rc.spec, ModelParams(rc.x0.beliefs.mu_bar, rc.x0.beliefs.sigma_bar))
    if name == "constant":
        return constant(rc.spec, rc.constant_u)
    raise ConfigError(f"evaluation.strategies: unknown strategy {name!r}")


def _check_spec_matches(rc: RunConfig, bundle, where: str) -> None:
    if _spec_doc(rc.spec) != _spec_doc(bundle.spec):
        raise ConfigError(f"problem section does not match the artifact at {where}")


def cmd_evaluate(args) -> int:
    bundle, manifest = load_artifact(args.artifact)
    rc = load_config(args.config) if args.config else build_config(manifest["config"])
    rc = with_overrides(rc, seed=args.seed, threads=_threads_override(args))
    _check_spec_matches(rc, bundle, args.artifact)
    out_dir = args.out or os.path.join(args.artifact, "reports")
    os.makedirs(out_dir, exist_ok=True)
    for name in rc.strategies:
        strategy = _build_strategy(name, rc, bundle)
        report = evaluate(strategy, rc.measure, rc.x0, rc.n_paths, rc.eval_seed)
        write_summary_json(report, os.path.join(out_dir, f"report_{name}.json"), config_echo=rc.sections)
        write_paths_csv(report, os.path.join(out_dir, f"paths_{name}.csv"))
        write_histogram_csv(report, os.path.join(out_dir, f"hist_{name}.csv"))
        st = report_stats(report)
        std = "n/a" if st["std"] is None else f"{st['std']:.6g}"
        print(
            f"{name}: mean={st['mean']:.6g} std={std} q95={st['q95']:.6g} "
            f"V0={st['V0']:.6g} ({rc.n_paths} paths, seed {rc.eval_seed})"
        )
    print(f"reports -> {out_dir}")
    return 0


def cmd_compare(args) -> int:
    if len(args.artifacts) < 2:
        raise ConfigError("need >= 2 artifacts")
    loaded = [load_artifact(d) for d in args.artifacts]
    docs = [_spec_doc(b.spec) for b, _ in loaded]
    for d, where in zip(docs[1:], args.artifacts[1:]):
        if d != docs[0]:
            raise ConfigError(f"artifacts have inconsistent problem specs ({args.artifacts[0]} vs {where})")
    rc = load_config(args.config) if args.config else build_config(loaded[0][1]["config"])
    rc = with_overrides(rc, seed=args.seed, threads=_threads_override(args))
    _check_spec_matches(rc, loaded[0][0], args.artifacts[0])
    if rc.spec.kind == "hedging":
        raw = args.lambdas if args.lambdas else "0,0.5,0.75"
        try:
            lambdas = [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"--lambdas: expected comma-separated numbers, got {raw!r}") from None
        if not lambdas or any(l < 0 for l in lambdas):
            raise ConfigError(f"--lambdas: need nonnegative values, got {raw!r}")
    else:
        lambdas = [None]
    methods = []
    seen = {}
    for b, _ in loaded:
        label = "adaptive_robust" if b.mode == "adaptive" else "static_robust"
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}_{seen[label]}"
        strategy = adaptive_robust(b) if b.mode == "adaptive" else static_robust(b)
        methods.append((label, strategy))
    if args.myopic:
        grid = theta_grid_over_initial_set(rc.spec, rc.x0.beliefs, rc.myopic_grid)
        methods.append(("myopic_adaptive", myopic_adaptive(myopic_adaptive_table(rc.spec, grid, rc.solver))))
    rows = []
    for label, strategy in methods:
        report = evaluate(strategy, rc.measure, rc.x0, rc.n_paths, rc.eval_seed)
        st = report_stats(report)
        for lam in lambdas:
            v0 = st["V0"] if lam is None else float(np.mean(LossFunction(lam)(report.terminal)))
            rows.append([label, lam, st["mean"], st["std"], st["q95"], v0])
    out_path = args.out or "compare.csv"
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "lambda", "mean", "std", "q95", "V0"])
        for row in rows:
            writer.writerow([row[0], "" if row[1] is None else repr(float(row[1]))] + [_fmt(v) for v in row[2:]])
    for row in rows:
        lam = "-" if row[1] is None else f"{row[1]:g}"
        std = "n/a" if row[3] is None else f"{row[3]:.6g}"
        print(f"{row[0]:<20} lambda={lam:<6} mean={row[2]:.6g} std={std} q95={row[4]:.6g} V0={row[5]:.6g}")
    print(f"table -> {out_path}")
    return 0


def cmd_stability(args) -> int:
    rc = load_config(args.config)
    rc = with_overrides(rc, seed=args.seed, threads=_threads_override(args))
    if rc.spec.kind != "portfolio":
        raise ConfigError("stability probes are defined for the portfolio problem; pass a portfolio config")
    if args.reps < 2:
        raise ConfigError(f"--reps: need at least 2, got {args.reps}")
    try:
        sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--sizes: expected comma-separated integers, got {args.sizes!r}") from None
    if not sizes or any(n < 1 for n in sizes):
        raise ConfigError(f"--sizes: need positive design sizes, got {args.sizes!r}")
    spec = rc.spec
    k = min(max(int(round(0.8 / spec.dt)), 1), spec.n_steps - 1)
    probes = [
        AugmentedState(market=(1.0,), beliefs=Beliefs(mu, 0.1, spec.n_eff_at(k)), k=k)
        for mu in (0.06, 0.08, 0.10)
    ]
    out_dir = args.out or "stability"
    os.makedirs(out_dir, exist_ok=True)
    budget = rc.solver.n_qmc + rc.solver.n_adaptive
    frac = rc.solver.n_adaptive / budget if budget > 0 else 0.0
    raw_rows = []
    summary_rows = []
    for n in sizes:
        n_adaptive = int(round(frac * n))
        cfg_n = replace(rc.solver, n_qmc=n - n_adaptive, n_adaptive=n_adaptive)
        preds = macro_replicate(spec, cfg_n, args.reps, probes)
        for j, p in enumerate(probes):
            for i in range(args.reps):
                raw_rows.append([n, i, j, p.beliefs.mu_bar, p.beliefs.sigma_bar, p.k, preds[i, j]])
            q = np.quantile(preds[:, j], [0.0, 0.25, 0.5, 0.75, 1.0])
            summary_rows.append([n, j, p.beliefs.mu_bar, p.beliefs.sigma_bar, p.k] + list(q))
            print(
                f"N={n} probe mu_bar={p.beliefs.mu_bar:g}: median={q[2]:.6g} "
                f"IQR=[{q[1]:.6g}, {q[3]:.6g}] range=[{q[0]:.6g}, {q[4]:.6g}]"
            )
    with open(os.path.join(out_dir, "stability_raw.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "rep", "probe", "mu_bar", "sigma_bar", "k", "u_hat"])
        for row in raw_rows:
            writer.writerow(row[:3] + [repr(float(row[3])), repr(float(row[4])), row[5], repr(float(row[6]))])
    with open(os.path.join(out_dir, "stability_summary.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "probe", "mu_bar", "sigma_bar", "k", "min", "q25", "median", "q75", "max"])
        for row in summary_rows:
            writer.writerow(row[:2] + [repr(float(row[2])), repr(float(row[3])), row[4]] + [repr(float(v)) for v in row[5:]])
    print(f"stability tables -> {out_dir}")
    return 0


def cmd_quantizer(args) -> int:
    rule = gaussian_rule(args.points)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        fh.write("knot,weight\n")
        for z, w in zip(rule.knots, rule.weights):
            fh.write(f"{float(z)!r},{float(w)!r}\n")
    print(f"wrote {args.points}-point rule -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustbell",
        description="Adaptive robust stochastic control: solve, evaluate, and compare policies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="backward solve from a config file into an artifact directory")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", help="artifact directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, help="worker process cap")
    p.add_argument("--diagnostics", action="store_true", help="also write per-step design CSVs")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="forward Monte Carlo of configured strategies against an artifact")
    p.add_argument("artifact", help="artifact directory written by solve")
    p.add_argument("--config", help="run configuration (defaults to the artifact manifest)")
    p.add_argument("--out", help="report directory (default: <artifact>/reports)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, help="worker process cap")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="combined statistics table across artifacts on shared forward paths")
    p.add_argument("artifacts", nargs="+", help="two or more artifact directories")
    p.add_argument("--lambdas", help="comma-separated loss weights (hedging; default 0,0.5,0.75)")
    p.add_argument("--myopic", action="store_true", help="also evaluate the myopic-adaptive baseline")
    p.add_argument("--config", help="evaluation settings (defaults to the first artifact's manifest)")
    p.add_argument("--out", help="output CSV path (default compare.csv)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, help="worker process cap")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stability", help="control-map spread across re-solved designs, per design size")
    p.add_argument("--config", required=True, help="portfolio run configuration")
    p.add_argument("--reps", type=int, default=10, help="macro-replications per size (default 10)")
    p.add_argument("--sizes", default="100,250", help="comma-separated design sizes (default 100,250)")
    p.add_argument("--out", help="output directory (default stability)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--threads", type=int, help="worker process cap")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("quantizer", help="dump a Gaussian quadrature rule to CSV")
    p.add_argument("--points", type=int, required=True, help="number of knots")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_quantizer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        return args.func(args)
    except (SolveError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
