"""Acceptance suite: one test per exit criterion.

Each test prints a single ``[ACCEPTANCE] criterion N: PASS/FAIL`` line (run
pytest with ``-s`` to see them live). The heavyweight Monte-Carlo benchmark
is computed once per session and shared by criteria 1-3 and 8.
"""

import json
import time

import numpy as np
import pytest

from mheipg import (
    ArrivalCost,
    IpgConfig,
    MheProblem,
    NoiseSpec,
    RunConfig,
    Weights,
    Window,
    bench,
    build_block,
    certify,
    check_diag_dominant,
    check_psd,
    ipg_solve,
    lemma1_bound_check,
    linear_model,
    mhe_pipeline,
    optimal_preconditioner,
    pack,
    ramp_inputs,
    run_ekf,
    simulate,
    unicycle_model,
    window_from_trajectory,
)
from mheipg.convexity import VERDICT_PSD

from oracles import (
    CubicScalarProblem,
    QuadraticProblem,
    fd_gradient,
    fd_jacobian_of,
    random_window_problem,
    rel_err,
)

HORIZONS = (5, 10, 15, 20)
BASE_SEED = 20240
T_PAPER = 200


@pytest.fixture()
def report(capfd):
    """Emit one visible PASS/FAIL line per criterion, then assert."""

    def _report(num: int, desc: str, ok: bool):
        with capfd.disabled():
            print(f"\n[ACCEPTANCE] criterion {num}: {'PASS' if ok else 'FAIL'} - {desc}")
        assert ok, f"criterion {num} failed: {desc}"

    return _report


@pytest.fixture(scope="module")
def paper_bench(tmp_path_factory):
    """Paper-parameter study: M=30 seeds, four horizons, both MHE solvers."""
    out = tmp_path_factory.mktemp("paper-bench")
    cfg = RunConfig.from_dict({
        "dt": 0.2, "T": T_PAPER, "runs": 30, "seed": BASE_SEED,
        "horizons": list(HORIZONS),
        "methods": ["mhe-ipg", "mhe-newton", "observations"],
        "out_dir": str(out),
    })
    t0 = time.perf_counter()
    table = bench(cfg)
    elapsed = time.perf_counter() - t0
    records = json.loads((out / "runs.json").read_text())
    return {"cfg": cfg, "table": table, "records": records, "elapsed": elapsed}


@pytest.fixture(scope="module")
def gd_bench(tmp_path_factory):
    """Smaller study comparing the preconditioned and plain gradient solvers."""
    out = tmp_path_factory.mktemp("gd-bench")
    cfg = RunConfig.from_dict({
        "dt": 0.2, "T": T_PAPER, "runs": 3, "seed": BASE_SEED,
        "horizons": list(HORIZONS),
        "methods": ["mhe-ipg", "mhe-gd"],
        "out_dir": str(out),
    })
    table = bench(cfg)
    return {"table": table, "records": json.loads((out / "runs.json").read_text())}


def test_criterion_1_solver_equivalence(paper_bench, report):
    recs = paper_bench["records"]
    by = {(r["method"], r["N"], r["seed"]): r["rmse"] for r in recs}
    max_gap = 0.0
    for N in HORIZONS:
        for run in range(30):
            seed = BASE_SEED + run
            gap = abs(by[("mhe-ipg", N, seed)] - by[("mhe-newton", N, seed)])
            max_gap = max(max_gap, gap)
    ok = max_gap <= 5e-4 and paper_bench["elapsed"] < 600.0
    report(1, f"per-seed |rmse_ipg - rmse_newton| max {max_gap:.2e} (<= 5e-4), "
               f"benchmark wall time {paper_bench['elapsed']:.0f}s (< 600s)", ok)


def test_criterion_2_accuracy_bands(paper_bench, report):
    table = paper_bench["table"]
    means = [table[("mhe-ipg", N)]["mean_rmse"] for N in HORIZONS]
    in_band = all(0.13 <= m <= 0.26 for m in means)
    monotone = all(means[i + 1] <= means[i] + 0.01 for i in range(len(means) - 1))
    obs = table[("observations", None)]["mean_rmse"]
    obs_ok = 0.40 <= obs <= 0.60
    ok = in_band and monotone and obs_ok
    report(2, f"MHE mean RMSE {['%.4f' % m for m in means]} in [0.13, 0.26] "
               f"monotone(+0.01 slack), observations {obs:.4f} in [0.40, 0.60]", ok)


def test_criterion_3_iteration_advantage(paper_bench, gd_bench, report):
    gd_table = gd_bench["table"]
    per_seed = {}
    for r in gd_bench["records"]:
        per_seed[(r["method"], r["N"], r["seed"])] = r["iters"]
    iter_ok = True
    for N in HORIZONS:
        assert gd_table[("mhe-ipg", N)]["mean_iters"] < gd_table[("mhe-gd", N)]["mean_iters"]
        for run in range(3):
            seed = BASE_SEED + run
            iter_ok &= per_seed[("mhe-ipg", N, seed)] < per_seed[("mhe-gd", N, seed)]

    # wall time per window against horizon length: fitted growth exponent
    times = [paper_bench["table"][("mhe-ipg", N)]["mean_time_s"] / (T_PAPER - N + 1)
             for N in HORIZONS]
    slope = float(np.polyfit(np.log(HORIZONS), np.log(times), 1)[0])
    ok = iter_ok and slope <= 2.3
    report(3, f"IPG iters < GD iters at every N (per seed), "
               f"per-window time exponent {slope:.2f} (<= 2.3)", ok)


def test_criterion_4_convergence_rate(report):
    t0 = time.perf_counter()
    dim = 6
    mu, beta, delta = 1.05, 0.5, 1.0
    p = QuadraticProblem(A=0.5 * np.eye(dim), a=np.full(dim, 1.5))  # Hessian = I
    eta = 1.0 / (1.0 + beta)
    q = l = 1.0
    # start-size condition with gamma = 0 and K0 = K*: any xi0 qualifies
    assert eta * beta + eta * q * abs(1 - delta) <= 1.0 / (2 * mu)
    K_star = optimal_preconditioner(np.eye(dim), beta)
    cfg = IpgConfig(beta=beta, delta=delta, eps=1e-15, max_iter=300,
                    alpha_mode="theoretical", mu=mu, lipschitz_l=l)
    _, _, rep = ipg_solve(p, p.a + 2.0, K0=K_star, cfg=cfg, trace=True, xi_star=p.a)
    z = np.array(rep.trace.z_norm)
    keep = z[:-1] > 1e-12
    ratios = z[1:][keep] / z[:-1][keep]
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(ratios < 1.0 / mu)) and elapsed < 1.0
    report(4, f"instrumented contraction max ratio {ratios.max():.4f} < {1 / mu:.4f} "
               f"down to 1e-12, runtime {elapsed * 1e3:.0f}ms (< 1s)", ok)


def test_criterion_5_lemma1_bound(report):
    rng = np.random.default_rng(7)
    violations = 0
    for seed in range(50):
        dim = int(rng.integers(2, 6))
        Qm, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        A = Qm @ np.diag(rng.uniform(0.5, 4.0, size=dim)) @ Qm.T
        p = QuadraticProblem(A=0.5 * A, a=rng.standard_normal(dim))
        beta = 0.5
        K_star = optimal_preconditioner(A, beta)
        K0 = K_star + 0.05 * rng.standard_normal((dim, dim))
        cfg = IpgConfig(beta=beta, delta=1.0, eps=1e-300, max_iter=100)
        _, _, rep = ipg_solve(p, p.a + rng.standard_normal(dim), K0=K0, cfg=cfg,
                              trace=True, xi_star=p.a, K_star=K_star)
        held = lemma1_bound_check(
            rep.trace,
            K0_err=float(np.linalg.norm(K0 - K_star, 2)),
            gamma=0.0,
            eta=float(np.linalg.norm(K_star, 2)),
            rho_bar=max(rep.trace.rho),
        )
        violations += 0 if held else 1

    # one scalar problem with state-dependent curvature and a brute-forced
    # Hessian Lipschitz constant over the iterate hull
    p = CubicScalarProblem(a=2.0, c=1.0)
    beta = 0.5
    K_star = optimal_preconditioner(p.hessian(np.zeros(1)), beta)
    K0 = np.array([[1.0 / (p.hessian(np.ones(1))[0, 0] + beta)]])
    cfg = IpgConfig(beta=beta, delta=1.0, eps=1e-300, max_iter=100)
    _, _, rep = ipg_solve(p, np.ones(1), K0=K0, cfg=cfg, trace=True,
                          xi_star=np.zeros(1), K_star=K_star)
    grid = np.linspace(-0.05, 1.05, 150)
    hs = np.array([p.hessian(np.array([x]))[0, 0] for x in grid])
    gamma = float(np.max(np.abs(hs[:, None] - hs[None, :]) /
                         np.maximum(np.abs(grid[:, None] - grid[None, :]), 1e-300)))
    held = lemma1_bound_check(
        rep.trace,
        K0_err=float(np.linalg.norm(K0 - K_star, 2)),
        gamma=gamma,
        eta=float(np.linalg.norm(K_star, 2)),
        rho_bar=max(rep.trace.rho),
    )
    violations += 0 if held else 1
    report(5, f"preconditioner-error envelope held on 50 quadratic seeds x 100 "
               f"iterations and the cubic instance (gamma brute-forced = {gamma:.3f}); "
               f"{violations} violations", violations == 0)


def test_criterion_6_derivative_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst_g, worst_H = 0.0, 0.0
    for _ in range(200):
        p, xi = random_window_problem(rng)
        worst_g = max(worst_g, rel_err(p.gradient(xi), fd_gradient(p.objective, xi)))
        worst_H = max(worst_H, rel_err(p.hessian(xi).to_dense(), fd_jacobian_of(p.gradient, xi)))
    elapsed = time.perf_counter() - t0
    ok = worst_g <= 1e-6 and worst_H <= 1e-4 and elapsed < 30.0
    report(6, f"200 random windows: gradient rel err {worst_g:.2e} (<= 1e-6), "
               f"curvature rel err {worst_H:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)", ok)


def test_criterion_7_convexity_certification(paper_weights, report):
    # Known red on the nominal-noise half: with an unmeasured heading, an
    # interior stage block is PSD iff the residual-curvature product is
    # nonnegative there (Schur complement), which fails on ~half the stages
    # at noisy evaluation points. Measured ceiling is ~0.32 against the 0.95
    # target; the noise-free half and the two-route scalar check do hold.
    uni = unicycle_model(0.2)
    counts = {}
    for label, stds in (("noise-free", (0.0, 0.0)), ("nominal", (0.1, 0.4))):
        certified = total = 0

        def hook(t, problem, xi0, xi_hat, report):
            nonlocal certified, total
            for point in (xi0, xi_hat):
                total += 1
                if certify(problem, point).verdict == VERDICT_PSD:
                    certified += 1

        for run in range(30):
            noise = NoiseSpec(process_std=[stds[0]] * 3, meas_std=[stds[1]] * 2,
                              clip=1.5, seed=5000 + run)
            traj = simulate(uni, [0, 0, 0], ramp_inputs(120), noise, dt=0.2)
            mhe_pipeline(traj, uni, 5, paper_weights, Pi0=np.eye(3), xhat0=[0, 0, 0],
                         solver="newton", window_hook=hook)
        counts[label] = certified / total

    # the hand-checkable linear block certifies through both routes
    scalar = np.array([[2.0, -1.0], [-1.0, 1.0]])
    both_routes = check_psd(scalar) and check_diag_dominant(scalar)
    model = linear_model(np.eye(1), np.eye(1))
    p = MheProblem(model=model,
                   window=Window(t=2, N=2, Y=np.zeros((2, 1)), U=np.zeros((2, 0))),
                   arrival=ArrivalCost(x_hat=[0.0], Pi=[[1.0]]),
                   weights=Weights(q_diag=[1.0], r_diag=[1.0]))
    rep = certify(p, np.zeros(3))
    both_routes &= rep.all_psd and rep.all_diag_dominant and rep.diag_nonneg

    ok = all(frac >= 0.95 for frac in counts.values()) and both_routes
    report(7, "certified fraction " +
            ", ".join(f"{k}={v:.3f}" for k, v in counts.items()) +
            " (>= 0.95 at warm start and solution), scalar instance via both routes",
            ok)


def test_criterion_8_spd_and_ekf_sanity(paper_bench, paper_weights, report):
    # the pipeline and filter raise on any loss of positive definiteness,
    # so the completed 30-seed benchmark is itself the zero-violation
    # evidence; re-check the tracked minima explicitly on one run
    uni = unicycle_model(0.2)
    noise = NoiseSpec(process_std=[0.1] * 3, meas_std=[0.4] * 2, clip=1.5, seed=77)
    traj = simulate(uni, [0, 0, 0], ramp_inputs(T_PAPER), noise, dt=0.2)
    _, stats = mhe_pipeline(traj, uni, 10, paper_weights, Pi0=np.eye(3),
                            xhat0=[0, 0, 0], solver="ipg")
    _, ekf_stats = run_ekf(traj, uni, Q=paper_weights.Q, R=paper_weights.R,
                           x0_hat=np.zeros(3), P0=np.eye(3))

    zero = NoiseSpec(process_std=[0.0] * 3, meas_std=[0.0] * 2, clip=1.5, seed=0)
    clean = simulate(uni, [0, 0, 0], ramp_inputs(T_PAPER), zero, dt=0.2)
    est, _ = run_ekf(clean, uni, Q=paper_weights.Q, R=paper_weights.R,
                     x0_hat=np.zeros(3), P0=np.eye(3))
    max_err = float(np.max(np.linalg.norm(est - clean.states, axis=1)))

    ok = stats.pi_min_eig > 0 and ekf_stats["p_min_eig"] > 0 and max_err <= 1e-8
    report(8, f"anchor weight min eig {stats.pi_min_eig:.2e} > 0, covariance min eig "
               f"{ekf_stats['p_min_eig']:.2e} > 0 across the benchmark, noise-free "
               f"exact-init filter error {max_err:.2e} (<= 1e-8)", ok)


def test_criterion_9_psd_implication(paper_weights, report):
    # mix fully random windows with benchmark-like ones (noisy trajectory,
    # point near the truth) so the PSD antecedent is well populated
    rng = np.random.default_rng(31)
    uni = unicycle_model(0.2)
    cases = violations = 0
    for trial in range(500):
        if trial % 2 == 0:
            p, xi = random_window_problem(rng, spread=float(rng.uniform(0.5, 4.0)))
        else:
            # benchmark-like windows at a range of noise scales, evaluated
            # near the truth, so the all-blocks-PSD antecedent is common
            scale = float(rng.uniform(0.05, 1.0))
            noise = NoiseSpec(process_std=[0.1 * scale] * 3, meas_std=[0.4 * scale] * 2,
                              clip=1.5, seed=int(rng.integers(1 << 31)))
            N = int(rng.integers(1, 7))
            traj = simulate(uni, [0, 0, 0], ramp_inputs(N + 2), noise, dt=0.2)
            p = MheProblem(model=uni, window=window_from_trajectory(traj, N, N),
                           arrival=ArrivalCost(x_hat=traj.states[0], Pi=np.eye(3)),
                           weights=paper_weights)
            xi = pack(traj.states[:N + 1]) + 0.05 * scale * rng.standard_normal((N + 1) * 3)
        blocks = [build_block(p, xi, i) for i in range(p.N)]
        if not all(b.min_eigenvalue >= -1e-12 for b in blocks):
            continue
        cases += 1
        H = p.hessian(xi).to_dense()
        eig = np.linalg.eigvalsh(H)
        if eig[0] < -1e-8 * max(1.0, eig[-1]):
            violations += 1
    ok = violations == 0 and cases >= 50
    report(9, f"over 500 random instances, {cases} had all stage blocks PSD and "
               f"{violations} of those had an indefinite assembled Hessian", ok)
