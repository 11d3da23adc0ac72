"""Solvers for the horizon objective.

``ipg_solve`` is the workhorse: plain gradient steps premultiplied by a
preconditioner matrix K that is itself driven toward (H + beta I)^{-1} by a
Richardson-style iteration, so no linear system is ever solved against the
Hessian. ``newton_solve`` (damped, with Armijo backtracking) and
``gd_solve`` (unpreconditioned) share the same step-norm stopping rule and
serve as the reference and the lower-bound comparator.

All solvers accept any problem object exposing ``objective(xi)``,
``gradient(xi)``, ``hessian(xi)`` (dense array or BlockTridiagonal), and
optionally ``value_grad_hess(xi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blocktri import BlockTridiagonal, apply_plus_beta, lambda_max

__all__ = [
    "IpgConfig",
    "SolveTrace",
    "SolveReport",
    "SolverDivergedError",
    "LineSearchError",
    "ipg_solve",
    "step_alpha",
    "rho_k",
    "optimal_preconditioner",
    "newton_solve",
    "gd_solve",
    "lemma1_bound_check",
]


class SolverDivergedError(RuntimeError):
    """Objective or gradient became non-finite; step parameters are bad."""


class LineSearchError(RuntimeError):
    """Backtracking failed to find a decrease (non-descent direction)."""


@dataclass(frozen=True)
class IpgConfig:
    """Parameters of the preconditioned iteration.

    alpha_mode "practical" uses alpha_k = alpha_safety / (lmax(H_k) + beta),
    which always satisfies the contraction bound; "theoretical" additionally
    enforces the rate-certifying bound built from mu, the gradient Lipschitz
    estimate ``lipschitz_l``, and the running supremum of measured rho_k.
    """

    beta: float = 0.5
    delta: float = 1.6
    eps: float = 1e-6
    max_iter: int = 5000
    alpha_mode: str = "practical"
    mu: float = 1.05
    lipschitz_l: Optional[float] = None
    alpha_safety: float = 0.9

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not self.mu > 1:
            raise ValueError(f"mu must be > 1, got {self.mu}")
        if not 0 < self.alpha_safety < 1:
            raise ValueError(f"alpha_safety must be in (0, 1), got {self.alpha_safety}")
        if self.alpha_mode not in ("practical", "theoretical"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.alpha_mode == "theoretical" and self.lipschitz_l is None:
            raise ValueError("theoretical alpha_mode requires lipschitz_l")


@dataclass
class SolveTrace:
    """Per-iteration instrumentation (lists grow by one per iteration).

    ``z_norm`` and ``ktilde_norm`` cover iterates 0..K (one more entry than
    iterations) and are populated only when the solver is given the optimum
    ``xi_star`` / ``K_star`` to measure against.
    """

    step_norm: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    lmax: list = field(default_factory=list)
    z_norm: list = field(default_factory=list)
    ktilde_norm: list = field(default_factory=list)


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    final_step_norm: float
    final_grad_norm: float
    objective_value: float
    lmax_final: float = 0.0
    delta_halved: bool = False
    trace: Optional[SolveTrace] = None


def _value_grad_hess(problem, xi):
    if hasattr(problem, "value_grad_hess"):
        return problem.value_grad_hess(xi)
    return problem.objective(xi), problem.gradient(xi), problem.hessian(xi)


def _dense(H):
    return H.to_dense() if isinstance(H, BlockTridiagonal) else np.asarray(H, dtype=float)


def _alpha_from_lmax(lmax, k, cfg: IpgConfig, rho_bar):
    """Step size for the K-iteration, from the current lmax estimate."""
    first = 1.0 / (lmax + cfg.beta)
    if cfg.alpha_mode == "practical":
        return cfg.alpha_safety * first
    mu, l = cfg.mu, cfg.lipschitz_l
    if k == 0 or rho_bar is None or rho_bar == 0.0:
        # the geometric factor telescopes to 1/(2l) at k=0
        second = 1.0 / (2.0 * l)
    else:
        mr = mu * rho_bar
        if mr >= 1.0:
            raise ValueError(
                f"mu * rho = {mr:.6f} >= 1: the theoretical step-size bound is empty; "
                "lower mu or improve conditioning"
            )
        second = mu**k * (1.0 - mr) / (2.0 * l * (1.0 - mr ** (k + 1)))
    return 0.99 * min(first, second)


def step_alpha(H_k, k: int, cfg: IpgConfig, rho_bar: float = 0.0) -> float:
    """Step size alpha_k given the current Hessian (public, eigensolver based)."""
    lmax = float(np.linalg.eigvalsh(_dense(H_k))[-1])
    return _alpha_from_lmax(lmax, k, cfg, rho_bar)


def rho_k(H_k, alpha: float, beta: float) -> float:
    """Contraction factor ||I - alpha (H + beta I)|| of the K-iteration."""
    eig = np.linalg.eigvalsh(_dense(H_k))
    return float(np.max(np.abs(1.0 - alpha * (eig + beta))))


def optimal_preconditioner(H_star, beta: float) -> np.ndarray:
    """Fixed point (H* + beta I)^{-1} of the preconditioner iteration."""
    Hd = _dense(H_star)
    return np.linalg.inv(Hd + beta * np.eye(Hd.shape[0]))


def ipg_solve(
    problem,
    xi0,
    K0=None,
    cfg: IpgConfig = IpgConfig(),
    trace: bool = False,
    xi_star=None,
    K_star=None,
    backend=None,
):
    """Minimize the problem objective by iteratively preconditioned descent.

        xi_{k+1} = xi_k - delta K_k g(xi_k)
        K_{k+1}  = K_k - alpha_k [(H(xi_k) + beta I) K_k - I]

    stopping when the step norm drops below cfg.eps. Returns
    ``(xi_hat, K_final, report)``; pass ``K_final`` back in as ``K0`` at the
    next time instant to warm-start the preconditioner.

    ``trace=True`` records per-iteration diagnostics (this densifies the
    Hessian each iteration to measure rho_k, so keep it off in benchmarks).
    ``xi_star``/``K_star`` additionally record distances to the optimum.

    Raises SolverDivergedError when the objective or gradient goes
    non-finite. If the objective rises for 20 consecutive iterations, delta
    is halved once and the run continues (reported via ``delta_halved``).
    """
    xi = np.asarray(xi0, dtype=float).copy()
    delta = cfg.delta
    tr = SolveTrace() if trace else None

    F, g, H = _value_grad_hess(problem, xi)
    lmax, pvec = lambda_max(H, backend=backend)
    if K0 is None:
        K = np.eye(xi.size) / (lmax + cfg.beta)
    else:
        K = np.asarray(K0, dtype=float).copy()
        if K.shape != (xi.size, xi.size):
            raise ValueError(f"K0 has shape {K.shape}, expected {(xi.size, xi.size)}")
        if not np.all(np.isfinite(K)):
            raise ValueError("K0 has non-finite entries")

    if tr is not None:
        if xi_star is not None:
            tr.z_norm.append(float(np.linalg.norm(xi - xi_star)))
        if K_star is not None:
            tr.ktilde_norm.append(float(np.linalg.norm(K - K_star, 2)))

    rho_bar = None
    prev_F = F
    rising = 0
    halved = False
    iterations = 0
    converged = False
    step = math.inf
    I_d = np.eye(xi.size)

    for k in range(cfg.max_iter):
        if not (np.isfinite(F) and np.all(np.isfinite(g))):
            raise SolverDivergedError(
                f"non-finite objective/gradient at iteration {k}; "
                f"reduce delta (currently {delta}) or check the problem scaling"
            )
        alpha = _alpha_from_lmax(lmax, k, cfg, rho_bar)

        if tr is not None or cfg.alpha_mode == "theoretical":
            eig = np.linalg.eigvalsh(_dense(H))
            rho = float(np.max(np.abs(1.0 - alpha * (eig + cfg.beta))))
            rho_bar = rho if rho_bar is None else max(rho_bar, rho)
            # with H + beta I positive definite and alpha under the exact
            # first bound, the contraction factor must sit in [0, 1)
            if eig[0] + cfg.beta > 0 and alpha < 1.0 / (eig[-1] + cfg.beta):
                assert rho < 1.0, f"rho_k = {rho} outside [0, 1)"
            if tr is not None:
                tr.rho.append(rho)

        d = K @ g
        step_vec = delta * d
        step = float(np.linalg.norm(step_vec))
        K = K - alpha * (apply_plus_beta(H, K, cfg.beta, backend=backend) - I_d)
        xi = xi - step_vec
        iterations = k + 1

        if tr is not None:
            tr.step_norm.append(step)
            tr.grad_norm.append(float(np.linalg.norm(g)))
            tr.alpha.append(alpha)
            tr.lmax.append(lmax)
            if xi_star is not None:
                tr.z_norm.append(float(np.linalg.norm(xi - xi_star)))
            if K_star is not None:
                tr.ktilde_norm.append(float(np.linalg.norm(K - K_star, 2)))

        if step < cfg.eps:
            converged = True
            break

        F, g, H = _value_grad_hess(problem, xi)
        lmax, pvec = lambda_max(H, v0=pvec, backend=backend)
        if F > prev_F:
            rising += 1
            if rising >= 20 and not halved:
                delta *= 0.5
                halved = True
                rising = 0
        else:
            rising = 0
        prev_F = F

    g_final = problem.gradient(xi)
    report = SolveReport(
        iterations=iterations,
        converged=converged,
        final_step_norm=step,
        final_grad_norm=float(np.linalg.norm(g_final)),
        objective_value=float(problem.objective(xi)),
        lmax_final=float(lmax),
        delta_halved=halved,
        trace=tr,
    )
    return xi, K, report


def newton_solve(problem, xi0, eps: float = 1e-6, max_iter: int = 200, beta: float = 0.5):
    """Damped Newton reference solver with Armijo backtracking.

    Shares the step-norm stopping rule with ipg_solve so iteration counts
    are comparable. Falls back to the beta-regularized system when the
    Hessian fails its Cholesky factorization or yields a non-descent
    direction. Raises LineSearchError after 50 halvings.
    """
    xi = np.asarray(xi0, dtype=float).copy()
    F, g, H = _value_grad_hess(problem, xi)
    iterations = 0
    converged = False
    step = math.inf
    for k in range(max_iter):
        if not (np.isfinite(F) and np.all(np.isfinite(g))):
            raise SolverDivergedError(f"non-finite objective/gradient at iteration {k}")
        Hd = _dense(H)
        d = None
        try:
            np.linalg.cholesky(Hd)
            d = np.linalg.solve(Hd, g)
        except np.linalg.LinAlgError:
            pass
        if d is None or g @ d <= 0:
            d = np.linalg.solve(Hd + beta * np.eye(Hd.shape[0]), g)
        full_step = float(np.linalg.norm(d))
        if full_step < eps:
            # already at the optimum up to the stopping tolerance; apply the
            # sub-eps step but do not count a confirmation-only iteration
            xi = xi - d
            step = full_step
            converged = True
            break
        slope = float(g @ d)  # directional decrease of F along -d
        t = 1.0
        for _ in range(50):
            if problem.objective(xi - t * d) <= F - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise LineSearchError("no Armijo decrease after 50 halvings")
        step = float(t * full_step)
        xi = xi - t * d
        iterations = k + 1
        if step < eps:
            converged = True
            break
        F, g, H = _value_grad_hess(problem, xi)
    g_final = problem.gradient(xi)
    report = SolveReport(
        iterations=iterations,
        converged=converged,
        final_step_norm=step,
        final_grad_norm=float(np.linalg.norm(g_final)),
        objective_value=float(problem.objective(xi)),
    )
    return xi, report


def gd_solve(problem, xi0, eps: float = 1e-6, max_iter: int = 5000, beta: float = 0.5,
             safety: float = 0.9, backend=None):
    """Plain gradient descent with step safety/(lmax(H_k) + beta).

    The unpreconditioned comparator: same stopping rule as ipg_solve, no
    preconditioner, so its iteration count shows what the K-iteration buys.
    """
    xi = np.asarray(xi0, dtype=float).copy()
    F, g, H = _value_grad_hess(problem, xi)
    lmax, pvec = lambda_max(H, backend=backend)
    iterations = 0
    converged = False
    step = math.inf
    for k in range(max_iter):
        if not (np.isfinite(F) and np.all(np.isfinite(g))):
            raise SolverDivergedError(f"non-finite objective/gradient at iteration {k}")
        alpha = safety / (lmax + beta)
        step_vec = alpha * g
        step = float(np.linalg.norm(step_vec))
        xi = xi - step_vec
        iterations = k + 1
        if step < eps:
            converged = True
            break
        F, g, H = _value_grad_hess(problem, xi)
        lmax, pvec = lambda_max(H, v0=pvec, backend=backend)
    g_final = problem.gradient(xi)
    report = SolveReport(
        iterations=iterations,
        converged=converged,
        final_step_norm=step,
        final_grad_norm=float(np.linalg.norm(g_final)),
        objective_value=float(problem.objective(xi)),
        lmax_final=float(lmax),
    )
    return xi, report


def lemma1_bound_check(trace: SolveTrace, K0_err: float, gamma: float, eta: float,
                       rho_bar: float, rtol: float = 1e-9, atol: float = 1e-13) -> bool:
    """Check the preconditioner-error envelope along an instrumented run.

    For every iteration k the measured ||K_{k+1} - K*|| must satisfy

        ||Ktilde_{k+1}|| <= rho^{k+1} ||Ktilde_0||
                            + gamma * eta * sum_j rho^{k-j} alpha_j ||z_j||

    ``trace`` must carry ktilde_norm (iterates 0..K), z_norm, and alpha;
    gamma is the Hessian Lipschitz constant (0 for quadratics). The bound
    holds on reals and scalar instances achieve it with equality, so the
    check allows a small relative slack plus an absolute floor of a few
    ulps for iterates that have shrunk to float resolution.
    """
    if not trace.ktilde_norm or not trace.alpha:
        raise ValueError("trace lacks instrumentation (run with K_star and xi_star)")
    if len(trace.ktilde_norm) != len(trace.alpha) + 1:
        raise ValueError("ktilde_norm must cover iterates 0..K")
    if gamma != 0.0 and len(trace.z_norm) != len(trace.alpha) + 1:
        raise ValueError("z_norm must cover iterates 0..K when gamma > 0")

    for k in range(len(trace.alpha)):
        bound = rho_bar ** (k + 1) * K0_err
        if gamma != 0.0:
            bound += gamma * eta * sum(
                rho_bar ** (k - j) * trace.alpha[j] * trace.z_norm[j] for j in range(k + 1)
            )
        if trace.ktilde_norm[k + 1] > bound * (1.0 + rtol) + atol:
            return False
    return True
