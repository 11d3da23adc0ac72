"""Command-line interface.

Subcommands:
    simulate         emit a trajectory CSV for a config
    estimate         one run with one method, emit estimates CSV
    bench            full Monte-Carlo study (errors.csv, cost.csv, runs.json)
    check-convexity  certify a problem snapshot JSON
    kernel-bench     compare the numba and numpy kernel backends

Exit codes: 0 success, 1 usage/config error, 2 inconclusive convexity,
3 solver non-convergence in ``estimate``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import convexity
from .bench import (
    ALL_METHODS,
    ConfigError,
    RunConfig,
    bench,
    estimation_errors,
    kernel_bench,
    mhe_pipeline,
)
from .mhe import problem_from_json
from .model import load_config, trajectory_to_csv
from .solvers import ipg_solve


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for an
    # inconclusive convexity verdict
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mheipg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="config file (JSON or key=value)")
        p.add_argument("--seed", type=int, default=None, help="override the config base seed")
        p.add_argument("--out", default=None, help="output directory")

    p_sim = sub.add_parser("simulate", help="simulate one run and write trajectory.csv")
    add_common(p_sim)

    p_est = sub.add_parser("estimate", help="run one estimator over one simulated run")
    add_common(p_est)
    p_est.add_argument("--method", default="mhe-ipg", choices=ALL_METHODS)
    p_est.add_argument("--horizon", type=int, default=None, help="window length (default: first configured horizon)")
    p_est.add_argument("--trace", action="store_true", help="dump per-iteration solver trace CSV")
    p_est.add_argument("--exclude-warmup", action=argparse.BooleanOptionalAction, default=None,
                       help="report errors from t >= N only (default on)")
    p_est.add_argument("--no-wrap", action="store_true", help="do not wrap heading errors")
    p_est.add_argument("--position-only", action="store_true", help="errors on position components only")

    p_bench = sub.add_parser("bench", help="full Monte-Carlo benchmark")
    add_common(p_bench)
    p_bench.add_argument("--exclude-warmup", action=argparse.BooleanOptionalAction, default=None)
    p_bench.add_argument("--no-wrap", action="store_true")
    p_bench.add_argument("--position-only", action="store_true")

    p_cvx = sub.add_parser("check-convexity", help="certify a problem snapshot JSON")
    p_cvx.add_argument("snapshot", help="problem snapshot JSON (with evaluation point 'xi')")
    p_cvx.add_argument("--tol", type=float, default=1e-8)

    p_kb = sub.add_parser("kernel-bench", help="time numba vs numpy kernels")
    p_kb.add_argument("--horizons", default="5,10,15,20")
    p_kb.add_argument("--repeats", type=int, default=200)
    return parser


def _load_run_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = load_config(path)
    cfg = RunConfig.from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "exclude_warmup", None) is not None:
        cfg.exclude_warmup = args.exclude_warmup
    if getattr(args, "no_wrap", False):
        cfg.wrap_heading = False
    if getattr(args, "position_only", False):
        cfg.position_only = True
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    traj = cfg.simulate_run(0)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectory_to_csv(traj, out / "trajectory.csv")
    print(f"wrote {out / 'trajectory.csv'} (T={traj.T}, seed={cfg.seed})")
    return 0


def _cmd_estimate(args) -> int:
    cfg = _load_run_config(args)
    N = args.horizon if args.horizon is not None else cfg.horizons[0]
    traj = cfg.simulate_run(0)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    trace_rows = []
    nonconverged = 0
    if args.method == "observations":
        estimates = np.zeros((traj.T + 1, 3))
        estimates[:-1, :2] = traj.observations
        estimates[-1, :2] = traj.observations[-1]
    elif args.method == "ekf":
        from .baselines import run_ekf

        weights = cfg.weights()
        estimates, _ = run_ekf(traj, cfg.model(), weights.Q, weights.R,
                               np.asarray(cfg.x0), np.eye(3))
    else:
        solver = args.method.split("-", 1)[1]
        hook = None
        if args.trace and solver == "ipg":
            ipg_cfg = cfg.ipg()

            def hook(t, problem, xi0, xi_hat, report):
                # re-solve with instrumentation so the hot path stays lean
                _, _, rep = ipg_solve(problem, xi0, cfg=ipg_cfg, trace=True)
                tr = rep.trace
                for k in range(rep.iterations):
                    trace_rows.append([t, k, tr.step_norm[k], tr.grad_norm[k],
                                       tr.alpha[k], tr.rho[k]])

        estimates, stats = mhe_pipeline(
            traj, cfg.model(), N, cfg.weights(),
            Pi0=cfg.pi0_scale * np.eye(3), xhat0=np.asarray(cfg.x0),
            solver=solver, ipg_cfg=cfg.ipg(), estimate_mode=cfg.estimate_mode,
            anchor_mode=cfg.anchor_mode, warm_start_K=cfg.warm_start_K,
            window_hook=hook,
        )
        nonconverged = stats.nonconverged

    with open(out / "estimates.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x1", "x2", "x3"])
        for t in range(len(estimates)):
            writer.writerow([t, *estimates[t]])

    start = N if cfg.exclude_warmup else 0
    # raw observations carry no heading estimate, so score them on position
    position_only = cfg.position_only or args.method == "observations"
    errors = estimation_errors(estimates, traj, start, cfg.wrap_heading, position_only)
    value = float(np.mean(np.linalg.norm(np.asarray(errors), axis=1)))
    print(f"method={args.method} N={N} rmse={value:.6f} nonconverged={nonconverged}")

    if args.trace and trace_rows:
        with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "iter", "step_norm", "grad_norm", "alpha", "rho"])
            writer.writerows(trace_rows)
        print(f"wrote {out / 'trace.csv'}")
    if nonconverged:
        print(f"{nonconverged} window solves hit the iteration cap", file=sys.stderr)
        return 3
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    table = bench(cfg)
    out = Path(cfg.out_dir)
    print(f"wrote {out / 'errors.csv'}, {out / 'cost.csv'}, {out / 'runs.json'}")
    for (method, N), row in table.items():
        label = f"{method:<12} N={N if N is not None else '-':>2}"
        print(f"{label}  rmse={row['mean_rmse']:.4f} var={row['var_rmse']:.5f} "
              f"time={row['mean_time_s']:.4f}s iters={row['mean_iters']:.1f}")
    return 0


def _cmd_check_convexity(args) -> int:
    path = Path(args.snapshot)
    if not path.exists():
        raise ConfigError(f"snapshot file not found: {path}")
    problem, xi = problem_from_json(path.read_text(encoding="utf-8"))
    if xi is None:
        raise ConfigError("snapshot missing required field: xi (evaluation point)")
    report = convexity.certify(problem, xi, tol=args.tol)
    for b in report.blocks:
        dom = convexity.check_diag_dominant(b.matrix)
        print(f"block {b.index}: lambda_min={b.min_eigenvalue:.6e} diag_dominant={dom}")
    print(f"all_psd={report.all_psd} all_diag_dominant={report.all_diag_dominant} "
          f"diag_nonneg={report.diag_nonneg}")
    print(f"verdict: {report.verdict}")
    return 0 if report.verdict != convexity.VERDICT_INCONCLUSIVE else 2


def _cmd_kernel_bench(args) -> int:
    horizons = tuple(int(tok) for tok in str(args.horizons).split(","))
    rows = kernel_bench(horizons=horizons, repeats=args.repeats)
    print(f"{'backend':<8} {'N':>3} {'eval_us':>10} {'kupdate_us':>11} {'lmax_us':>10}")
    for r in rows:
        print(f"{r['backend']:<8} {r['N']:>3} {r['eval_us']:>10.2f} "
              f"{r['kupdate_us']:>11.2f} {r['lmax_us']:>10.2f}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "bench": _cmd_bench,
        "check-convexity": _cmd_check_convexity,
        "kernel-bench": _cmd_kernel_bench,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, OSError, json.JSONDecodeError) as err:
        print(f"mheipg: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
