"""Estimation pipeline, Monte-Carlo benchmark, and reporting.

``mhe_pipeline`` runs the sliding-window loop over a simulated trajectory:
build the window problem, solve it, record estimates, propagate the anchor
weight, and warm-start the next instant from the shifted solution. The
benchmark repeats that over seeded runs and methods, aggregates per-run
error values, and writes ``errors.csv``, ``cost.csv``, and ``runs.json``.

Two estimate recordings are kept per run:
    newest   - the last window state at each instant (filter-style; note the
               window holds measurements up to t-1, so this is a one-step
               prediction with respect to instant t);
    smoothed - each instant's final estimate from the last window covering
               it, i.e. the window states overwrite previous records.

The per-run error value is the mean over included instants of the error
norm, and the benchmark reports its mean and sample variance across runs.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .baselines import run_ekf
from .kernels import available_backends, get_backend
from .mhe import (
    ArrivalCost,
    MheProblem,
    Weights,
    pack,
    riccati_update,
    unpack,
    warm_start,
    window_from_trajectory,
)
from .model import NoiseSpec, SystemModel, Trajectory, ramp_inputs, simulate, unicycle_model
from .solvers import IpgConfig, gd_solve, ipg_solve, newton_solve

__all__ = [
    "RunConfig",
    "ConfigError",
    "PipelineStats",
    "mhe_pipeline",
    "estimation_errors",
    "rmse",
    "bench",
    "kernel_bench",
    "MHE_METHODS",
    "ALL_METHODS",
]

MHE_METHODS = ("mhe-ipg", "mhe-newton", "mhe-gd")
ALL_METHODS = MHE_METHODS + ("ekf", "observations")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "x0": (0.0, 0.0, 0.0),
    "forward_speed": 3.0,
    "turn_ramp": 0.005,
    "process_std": 0.1,
    "meas_std": 0.4,
    "clip": 1.5,
    "horizons": (5, 10, 15, 20),
    "methods": ("mhe-ipg", "mhe-newton", "ekf", "observations"),
    "runs": 30,
    "seed": 0,
    "workers": 1,
    "q_diag": None,
    "r_diag": None,
    "pi0_scale": 1.0,
    "beta": 0.5,
    "delta": 1.6,
    "eps": 1e-6,
    "max_iter": 5000,
    "alpha_mode": "practical",
    "mu": 1.05,
    "lipschitz_l": None,
    "alpha_safety": 0.9,
    "estimate_mode": "smoothed",
    "anchor_mode": "filtered",
    "warm_start_K": False,
    "exclude_warmup": True,
    "wrap_heading": True,
    "position_only": False,
    "timing_repeats": 1,
    "out_dir": "bench-out",
}

_REQUIRED = ("dt", "T")


@dataclass
class RunConfig:
    """Resolved benchmark configuration (see _DEFAULTS for the knobs)."""

    dt: float
    T: int
    x0: tuple
    forward_speed: float
    turn_ramp: float
    process_std: tuple
    meas_std: tuple
    clip: float
    horizons: tuple
    methods: tuple
    runs: int
    seed: int
    workers: int
    q_diag: tuple
    r_diag: tuple
    pi0_scale: float
    beta: float
    delta: float
    eps: float
    max_iter: int
    alpha_mode: str
    mu: float
    lipschitz_l: object
    alpha_safety: float
    estimate_mode: str
    anchor_mode: str
    warm_start_K: bool
    exclude_warmup: bool
    wrap_heading: bool
    position_only: bool
    timing_repeats: int
    out_dir: str

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(_REQUIRED) | set(_DEFAULTS)
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config field: {key}")
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"config missing required field: {key}")
        d = dict(_DEFAULTS)
        d.update(raw)

        def vec(value, length):
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            if arr.size == 1:
                arr = np.full(length, float(arr[0]))
            if arr.size != length:
                raise ConfigError(f"expected {length} components, got {arr.size}")
            return tuple(float(v) for v in arr)

        process_std = vec(d["process_std"], 3)
        meas_std = vec(d["meas_std"], 2)
        q_diag = vec(d["q_diag"], 3) if d["q_diag"] is not None else tuple(s * s for s in process_std)
        r_diag = vec(d["r_diag"], 2) if d["r_diag"] is not None else tuple(s * s for s in meas_std)
        if any(q <= 0 for q in q_diag) or any(r <= 0 for r in r_diag):
            raise ConfigError("q_diag and r_diag must be strictly positive "
                              "(zero-variance noise needs explicit weights)")

        horizons = tuple(int(N) for N in np.atleast_1d(d["horizons"]))
        methods = tuple(str(m) for m in np.atleast_1d(d["methods"]))
        for m in methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {ALL_METHODS}")
        if d["estimate_mode"] not in ("smoothed", "newest"):
            raise ConfigError(f"estimate_mode must be 'smoothed' or 'newest', got {d['estimate_mode']!r}")
        if d["anchor_mode"] not in ("filtered", "smoothed"):
            raise ConfigError(f"anchor_mode must be 'filtered' or 'smoothed', got {d['anchor_mode']!r}")

        cfg = cls(
            dt=float(d["dt"]),
            T=int(d["T"]),
            x0=vec(d["x0"], 3),
            forward_speed=float(d["forward_speed"]),
            turn_ramp=float(d["turn_ramp"]),
            process_std=process_std,
            meas_std=meas_std,
            clip=float(d["clip"]),
            horizons=horizons,
            methods=methods,
            runs=int(d["runs"]),
            seed=int(d["seed"]),
            workers=int(d["workers"]),
            q_diag=q_diag,
            r_diag=r_diag,
            pi0_scale=float(d["pi0_scale"]),
            beta=float(d["beta"]),
            delta=float(d["delta"]),
            eps=float(d["eps"]),
            max_iter=int(d["max_iter"]),
            alpha_mode=str(d["alpha_mode"]),
            mu=float(d["mu"]),
            lipschitz_l=d["lipschitz_l"],
            alpha_safety=float(d["alpha_safety"]),
            estimate_mode=str(d["estimate_mode"]),
            anchor_mode=str(d["anchor_mode"]),
            warm_start_K=bool(d["warm_start_K"]),
            exclude_warmup=bool(d["exclude_warmup"]),
            wrap_heading=bool(d["wrap_heading"]),
            position_only=bool(d["position_only"]),
            timing_repeats=int(d["timing_repeats"]),
            out_dir=str(d["out_dir"]),
        )
        if cfg.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {cfg.runs}")
        if cfg.T <= max(cfg.horizons):
            raise ConfigError(f"T={cfg.T} must exceed the largest horizon {max(cfg.horizons)}")
        return cfg

    def ipg(self) -> IpgConfig:
        return IpgConfig(
            beta=self.beta,
            delta=self.delta,
            eps=self.eps,
            max_iter=self.max_iter,
            alpha_mode=self.alpha_mode,
            mu=self.mu,
            lipschitz_l=self.lipschitz_l,
            alpha_safety=self.alpha_safety,
        )

    def weights(self) -> Weights:
        return Weights(q_diag=np.asarray(self.q_diag), r_diag=np.asarray(self.r_diag))

    def model(self) -> SystemModel:
        return unicycle_model(self.dt)

    def simulate_run(self, run_index: int) -> Trajectory:
        noise = NoiseSpec(
            process_std=np.asarray(self.process_std),
            meas_std=np.asarray(self.meas_std),
            clip=self.clip,
            seed=self.seed + run_index,
        )
        inputs = ramp_inputs(self.T, self.forward_speed, self.turn_ramp)
        return simulate(self.model(), np.asarray(self.x0), inputs, noise, dt=self.dt)


# ---------------------------------------------------------------------------
# Sliding-window pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineStats:
    iterations_total: int
    solver_time_s: float
    nonconverged: int
    pi_min_eig: float
    newest: np.ndarray
    smoothed: np.ndarray


def mhe_pipeline(
    traj: Trajectory,
    model: SystemModel,
    N: int,
    weights: Weights,
    Pi0=None,
    xhat0=None,
    solver: str = "ipg",
    ipg_cfg: IpgConfig = IpgConfig(),
    estimate_mode: str = "smoothed",
    anchor_mode: str = "filtered",
    warm_start_K: bool = False,
    window_hook=None,
    backend=None,
    timing_repeats: int = 1,
):
    """Run the horizon estimator over a whole trajectory.

    Returns (estimates, stats): estimates[t] per the requested recording
    mode; stats carries both recordings plus iteration/time accounting.
    Instants before the first window hold guesses propagated from ``xhat0``
    through the known inputs. Solver failures to converge are counted and
    the last iterate is used. Raises if the anchor weight ever loses
    positive definiteness.

    ``anchor_mode`` selects how the arrival-cost anchor advances:
        filtered - a parallel measurement-update/predict recursion that
                   conditions only on data outside the next window, keeping
                   the anchor consistent with its propagated weight
                   (default; on linear problems the window solve then
                   matches the exact smoother);
        smoothed - reuse the window's own second state, which re-enters
                   data the next window also sees and measurably degrades
                   accuracy on the benchmark.
    """
    T = traj.T
    n = model.n
    if T < N:
        raise ValueError(f"trajectory has T={T} steps, needs at least N={N}")
    if xhat0 is None:
        raise ValueError("xhat0 (initial state estimate) is required")
    if anchor_mode not in ("filtered", "smoothed"):
        raise ValueError(f"unknown anchor_mode {anchor_mode!r}")
    if estimate_mode not in ("smoothed", "newest"):
        raise ValueError(f"unknown estimate_mode {estimate_mode!r}")
    xhat0 = np.asarray(xhat0, dtype=float)
    Pi = np.eye(n) if Pi0 is None else np.asarray(Pi0, dtype=float)
    if solver not in ("ipg", "newton", "gd"):
        raise ValueError(f"unknown solver {solver!r}")

    guesses = np.zeros((N + 1, n))
    guesses[0] = xhat0
    for i in range(N):
        guesses[i + 1] = model.f(guesses[i], traj.inputs[i])

    newest = np.zeros((T + 1, n))
    smoothed = np.zeros((T + 1, n))
    newest[:N] = guesses[:N]
    smoothed[:N] = guesses[:N]

    xi0 = pack(guesses)
    anchor = xhat0
    phi_star = 0.0
    K = None
    iters = 0
    solver_time = 0.0
    nonconv = 0
    pi_min = float(np.linalg.eigvalsh(Pi)[0])
    if pi_min <= 0:
        raise RuntimeError("initial anchor weight Pi0 is not positive definite")

    for t in range(N, T + 1):
        window = window_from_trajectory(traj, t, N)
        problem = MheProblem(
            model=model,
            window=window,
            arrival=ArrivalCost(x_hat=anchor, Pi=Pi, phi_star=phi_star),
            weights=weights,
        )
        times = []
        for rep in range(max(1, timing_repeats)):
            t0 = time.perf_counter()
            if solver == "ipg":
                K0 = K if warm_start_K else None
                xi_hat, K_out, report = ipg_solve(problem, xi0, K0=K0, cfg=ipg_cfg, backend=backend)
            elif solver == "newton":
                xi_hat, report = newton_solve(
                    problem, xi0, eps=ipg_cfg.eps, max_iter=ipg_cfg.max_iter, beta=ipg_cfg.beta
                )
            else:
                xi_hat, report = gd_solve(
                    problem, xi0, eps=ipg_cfg.eps, max_iter=ipg_cfg.max_iter,
                    beta=ipg_cfg.beta, backend=backend,
                )
            times.append(time.perf_counter() - t0)
        solver_time += float(np.median(times))
        if solver == "ipg" and warm_start_K:
            K = K_out

        states = unpack(xi_hat, n, N)
        newest[t] = states[-1]
        smoothed[t - N:t + 1] = states
        iters += report.iterations
        if not report.converged:
            nonconv += 1
        if window_hook is not None:
            window_hook(t=t, problem=problem, xi0=xi0, xi_hat=xi_hat, report=report)

        if t < T:
            if anchor_mode == "smoothed":
                next_anchor = states[1]
            else:
                # measurement update at t-N against the anchor itself, then
                # one prediction step: the result conditions only on data
                # the next window does not contain
                J_h_a = np.asarray(model.J_h(anchor), dtype=float)
                S1 = J_h_a @ Pi @ J_h_a.T + weights.R
                gain = np.linalg.solve(S1, J_h_a @ Pi).T
                innov = window.Y[0] - np.asarray(model.h(anchor), dtype=float)
                posterior = anchor + gain @ innov
                next_anchor = np.asarray(model.f(posterior, window.U[0]), dtype=float)
            J_f = np.asarray(model.J_f(states[0], window.U[0]), dtype=float)
            J_h = np.asarray(model.J_h(states[0]), dtype=float)
            Pi = riccati_update(Pi, J_f, J_h, weights.Q, weights.R)
            lam = float(np.linalg.eigvalsh(Pi)[0])
            pi_min = min(pi_min, lam)
            if lam <= 0:
                raise RuntimeError(f"anchor weight lost positive definiteness at t={t + 1}")
            anchor = next_anchor
            phi_star = report.objective_value
            xi0 = warm_start(xi_hat, model, traj.inputs[t])

    stats = PipelineStats(
        iterations_total=iters,
        solver_time_s=solver_time,
        nonconverged=nonconv,
        pi_min_eig=pi_min,
        newest=newest,
        smoothed=smoothed,
    )
    estimates = smoothed if estimate_mode == "smoothed" else newest
    return estimates, stats


# ---------------------------------------------------------------------------
# Errors and RMSE
# ---------------------------------------------------------------------------

def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def estimation_errors(estimates, traj: Trajectory, start: int,
                      wrap_heading=True, position_only=False, heading_index=2):
    """Per-instant error vectors estimates[t] - states[t] for t >= start."""
    e = np.asarray(estimates, dtype=float)[start:] - traj.states[start:]
    if position_only:
        return e[:, :2]
    if wrap_heading and e.shape[1] > heading_index:
        e[:, heading_index] = _wrap_angle(e[:, heading_index])
    return e


def _per_run_value(errors) -> float:
    arr = np.asarray(errors, dtype=float)
    if arr.size == 0:
        raise ValueError("empty error sequence")
    return float(np.mean(np.linalg.norm(arr, axis=1)))


def rmse(errors, M=None):
    """Aggregate per-run error sequences into (mean, sample variance).

    ``errors`` holds one sequence of per-instant error vectors per run; each
    run contributes the mean norm of its errors, and the returned pair is
    the mean and sample variance of those per-run values.
    """
    vals = [_per_run_value(run) for run in errors]
    if M is not None and len(vals) != M:
        raise ValueError(f"expected {M} runs, got {len(vals)}")
    if not vals:
        raise ValueError("no runs given")
    mean = float(np.mean(vals))
    var = float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0
    return mean, var


# ---------------------------------------------------------------------------
# Monte-Carlo benchmark
# ---------------------------------------------------------------------------

def _bench_single_run(args):
    cfg, run = args
    traj = cfg.simulate_run(run)
    weights = cfg.weights()
    model = cfg.model()
    records = []
    for method in cfg.methods:
        if method == "observations":
            errors = traj.observations - traj.states[:-1, :2]
            records.append({
                "seed": cfg.seed + run,
                "method": method,
                "N": None,
                "rmse": _per_run_value(errors),
                "time_s": 0.0,
                "iters": 0,
                "converged": True,
            })
        elif method == "ekf":
            t0 = time.perf_counter()
            estimates, _ = run_ekf(
                traj, model, Q=weights.Q, R=weights.R,
                x0_hat=np.asarray(cfg.x0), P0=np.eye(3),
            )
            elapsed = time.perf_counter() - t0
            start = 1 if cfg.exclude_warmup else 0
            errors = estimation_errors(
                estimates, traj, start, cfg.wrap_heading, cfg.position_only
            )
            records.append({
                "seed": cfg.seed + run,
                "method": method,
                "N": 1,
                "rmse": _per_run_value(errors),
                "time_s": elapsed,
                "iters": 0,
                "converged": True,
            })
        else:
            solver = method.split("-", 1)[1]
            for N in cfg.horizons:
                estimates, stats = mhe_pipeline(
                    traj, model, N, weights,
                    Pi0=cfg.pi0_scale * np.eye(3),
                    xhat0=np.asarray(cfg.x0),
                    solver=solver,
                    ipg_cfg=cfg.ipg(),
                    estimate_mode=cfg.estimate_mode,
                    anchor_mode=cfg.anchor_mode,
                    warm_start_K=cfg.warm_start_K,
                    timing_repeats=cfg.timing_repeats,
                )
                start = N if cfg.exclude_warmup else 0
                errors = estimation_errors(
                    estimates, traj, start, cfg.wrap_heading, cfg.position_only
                )
                records.append({
                    "seed": cfg.seed + run,
                    "method": method,
                    "N": N,
                    "rmse": _per_run_value(errors),
                    "time_s": stats.solver_time_s,
                    "iters": stats.iterations_total,
                    "converged": stats.nonconverged == 0,
                })
    return records


def bench(cfg: RunConfig, out_dir=None) -> dict:
    """Run the Monte-Carlo study and write errors.csv, cost.csv, runs.json.

    Runs are independent and seeded as base_seed + run_index; the same
    trajectory is shared by every method within a run. Returns the
    aggregated table as {(method, N): {"mean_rmse", "var_rmse",
    "mean_time_s", "mean_iters"}} keyed in output order.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs = [(cfg, run) for run in range(cfg.runs)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_run = list(pool.map(_bench_single_run, jobs))
    else:
        per_run = [_bench_single_run(job) for job in jobs]
    records = [rec for run_records in per_run for rec in run_records]

    method_order = {m: i for i, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (method_order[r["method"]], r["N"] or 0, r["seed"]))

    groups: dict = {}
    for rec in records:
        groups.setdefault((rec["method"], rec["N"]), []).append(rec)

    table = {}
    for key, recs in groups.items():
        vals = [r["rmse"] for r in recs]
        mean = float(np.mean(vals))
        var = float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0
        table[key] = {
            "mean_rmse": mean,
            "var_rmse": var,
            "mean_time_s": float(np.mean([r["time_s"] for r in recs])),
            "mean_iters": float(np.mean([r["iters"] for r in recs])),
        }

    with open(out / "errors.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "N", "mean_rmse", "var_rmse"])
        for (method, N), row in table.items():
            writer.writerow([method, "" if N is None else N, row["mean_rmse"], row["var_rmse"]])

    with open(out / "cost.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "N", "mean_time_s", "mean_iters"])
        for (method, N), row in table.items():
            writer.writerow([method, "" if N is None else N, row["mean_time_s"], row["mean_iters"]])

    with open(out / "runs.json", "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2)

    # echo the resolved configuration (records the warm-start and recording
    # choices alongside the results)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=2)

    return table


# ---------------------------------------------------------------------------
# Kernel backend benchmark
# ---------------------------------------------------------------------------

def kernel_bench(horizons=(5, 10, 15, 20), repeats=200, seed=0):
    """Time the hot kernels on each available backend.

    Returns rows {backend, N, eval_us, kupdate_us, lmax_us}. The first call
    per backend is excluded from timing (JIT warm-up).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name in available_backends():
        k = get_backend(name)
        for N in horizons:
            x = np.ascontiguousarray(rng.standard_normal((N + 1, 3)))
            u = np.ascontiguousarray(rng.standard_normal((N, 2)))
            y = np.ascontiguousarray(rng.standard_normal((N, 2)))
            xhat = np.ascontiguousarray(rng.standard_normal(3))
            pi_inv = np.eye(3)
            q_inv = np.full(3, 100.0)
            r_inv = np.full(2, 6.25)
            dim = (N + 1) * 3
            K = np.ascontiguousarray(rng.standard_normal((dim, dim)))
            v0 = np.full(dim, 1.0 / np.sqrt(dim))

            _, _, diag, off = k.window_eval(x, u, y, xhat, pi_inv, q_inv, r_inv, 0.2)
            k.bt_matmat_beta(diag, off, 0.5, K)
            k.bt_power_lmax(diag, off, v0, 1e-6, 200)

            t0 = time.perf_counter()
            for _ in range(repeats):
                k.window_eval(x, u, y, xhat, pi_inv, q_inv, r_inv, 0.2)
            t_eval = (time.perf_counter() - t0) / repeats
            t0 = time.perf_counter()
            for _ in range(repeats):
                k.bt_matmat_beta(diag, off, 0.5, K)
            t_kup = (time.perf_counter() - t0) / repeats
            t0 = time.perf_counter()
            for _ in range(repeats):
                k.bt_power_lmax(diag, off, v0, 1e-6, 200)
            t_lmax = (time.perf_counter() - t0) / repeats
            rows.append({
                "backend": name,
                "N": N,
                "eval_us": 1e6 * t_eval,
                "kupdate_us": 1e6 * t_kup,
                "lmax_us": 1e6 * t_lmax,
            })
    return rows
