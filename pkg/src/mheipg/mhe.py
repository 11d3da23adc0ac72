"""Horizon estimation problems: objective, derivatives, and weight updates.

One problem instance freezes everything a solver needs for a single time
instant: the stacked window data (inputs ``U`` and measurements ``Y``), the
anchor penalty on the oldest state, and the diagonal residual weights. The
decision variable is the packed vector of N+1 window states.

The objective is

    F(xi) = sum_i (x_{i+1} - f(x_i, u_i))' Qinv (x_{i+1} - f(x_i, u_i))
          + sum_i (y_i - h(x_i))' Rinv (y_i - h(x_i))
          + (x_0 - x_hat)' Pi_inv (x_0 - x_hat)

with analytic gradient and a symmetric block-tridiagonal Hessian whose
diagonal blocks pick up curvature terms from the model's second-derivative
tensors. Packed states and preconditioners are plain float64 ndarrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blocktri import BlockTridiagonal
from .kernels import get_backend
from .model import SystemModel, Trajectory, linear_model, unicycle_model

__all__ = [
    "Window",
    "ArrivalCost",
    "Weights",
    "MheProblem",
    "pack",
    "unpack",
    "spd_inverse",
    "riccati_update",
    "warm_start",
    "window_from_trajectory",
    "make_evaluator",
    "GenericEvaluator",
    "UnicycleKernelEvaluator",
    "stage_terms",
    "problem_to_json",
    "problem_from_json",
]


def pack(states) -> np.ndarray:
    """Concatenate N+1 state vectors into one flat optimization variable."""
    return np.asarray(states, dtype=float).reshape(-1).copy()


def unpack(xi, n: int, N: int) -> np.ndarray:
    """Split a packed variable back into its (N+1, n) window states."""
    xi = np.asarray(xi, dtype=float)
    if xi.size != (N + 1) * n:
        raise ValueError(f"packed state has length {xi.size}, expected {(N + 1) * n}")
    return xi.reshape(N + 1, n).copy()


def spd_inverse(M) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via its Cholesky factor."""
    M = np.asarray(M, dtype=float)
    L = np.linalg.cholesky(M)
    Linv = np.linalg.solve(L, np.eye(M.shape[0]))
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Window:
    """Stacked data for the instant ``t``: the N inputs and measurements
    taken at instants t-N .. t-1."""

    t: int
    N: int
    Y: np.ndarray  # (N, p)
    U: np.ndarray  # (N, m)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"horizon N must be >= 1, got {self.N}")
        if self.t < self.N:
            raise ValueError(f"window needs t >= N, got t={self.t}, N={self.N}")
        Y = np.asarray(self.Y, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if Y.ndim == 1:
            if Y.size % self.N:
                raise ValueError(f"stacked Y length {Y.size} not divisible by N={self.N}")
            Y = Y.reshape(self.N, -1)
        if U.ndim == 1:
            if U.size % self.N:
                raise ValueError(f"stacked U length {U.size} not divisible by N={self.N}")
            U = U.reshape(self.N, -1)
        if len(Y) != self.N or len(U) != self.N:
            raise ValueError("Y and U must each stack exactly N vectors")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "U", U)


@dataclass(frozen=True)
class ArrivalCost:
    """Quadratic anchor on the oldest window state.

    ``phi_star`` is the previous instant's optimal objective value; it is
    carried for reporting only and never added to the objective (a constant
    cannot move the minimizer).
    """

    x_hat: np.ndarray
    Pi: np.ndarray
    phi_star: float = 0.0

    def __post_init__(self):
        x_hat = np.asarray(self.x_hat, dtype=float)
        Pi = np.asarray(self.Pi, dtype=float)
        if Pi.shape != (x_hat.size, x_hat.size):
            raise ValueError(f"Pi shape {Pi.shape} does not match state dim {x_hat.size}")
        if np.max(np.abs(Pi - Pi.T)) > 1e-10 * max(1.0, np.max(np.abs(Pi))):
            raise ValueError("Pi must be symmetric")
        object.__setattr__(self, "x_hat", x_hat)
        object.__setattr__(self, "Pi", 0.5 * (Pi + Pi.T))
        # SPD check and inverse in one shot; cholesky raises if not SPD
        object.__setattr__(self, "_pi_inv", spd_inverse(self.Pi))

    @property
    def pi_inv(self) -> np.ndarray:
        return self._pi_inv


@dataclass(frozen=True)
class Weights:
    """Diagonal positive-definite residual weights (stored as diagonals)."""

    q_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q_diag, dtype=float))
        r = np.atleast_1d(np.asarray(self.r_diag, dtype=float))
        if q.ndim == 2:
            q = np.diag(q)
        if r.ndim == 2:
            r = np.diag(r)
        if np.any(q <= 0) or np.any(r <= 0):
            raise ValueError("weight diagonals must be strictly positive")
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "r_diag", r)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @property
    def q_inv(self) -> np.ndarray:
        return 1.0 / self.q_diag

    @property
    def r_inv(self) -> np.ndarray:
        return 1.0 / self.r_diag


@dataclass(frozen=True)
class MheProblem:
    """Immutable snapshot of one horizon optimization problem."""

    model: SystemModel
    window: Window
    arrival: ArrivalCost
    weights: Weights

    def __post_init__(self):
        m = self.model
        w = self.window
        if w.Y.shape[1] != m.p:
            raise ValueError(f"window Y has {w.Y.shape[1]} columns, model p={m.p}")
        if w.U.shape[1] != m.m:
            raise ValueError(f"window U has {w.U.shape[1]} columns, model m={m.m}")
        if self.arrival.x_hat.size != m.n:
            raise ValueError("arrival anchor dimension does not match the model")
        if self.weights.q_diag.size != m.n or self.weights.r_diag.size != m.p:
            raise ValueError("weight dimensions do not match the model")
        object.__setattr__(self, "_evaluators", {})

    @property
    def N(self) -> int:
        return self.window.N

    @property
    def dim(self) -> int:
        return (self.N + 1) * self.model.n

    def evaluator(self, backend=None):
        key = backend if backend is not None else "__default__"
        ev = self._evaluators.get(key)
        if ev is None:
            ev = make_evaluator(self, backend)
            self._evaluators[key] = ev
        return ev

    def objective(self, xi) -> float:
        return self.evaluator().objective(xi)

    def gradient(self, xi) -> np.ndarray:
        return self.evaluator().gradient(xi)

    def hessian(self, xi) -> BlockTridiagonal:
        return self.evaluator().hessian(xi)

    def value_grad_hess(self, xi):
        return self.evaluator().value_grad_hess(xi)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

def stage_terms(problem: MheProblem, states: np.ndarray, i: int) -> dict:
    """Per-stage quantities entering gradient/Hessian/convexity blocks.

    ``res_f = f(x_i, u_i) - x_{i+1}`` and ``res_h = h(x_i) - y_i`` are the
    signed residuals that multiply the curvature tensors; ``S_f``/``S_h``
    are those weighted tensor contractions and ``Jt_f``/``Jt_h`` the
    Gauss-Newton terms.
    """
    m = problem.model
    u_i = problem.window.U[i]
    y_i = problem.window.Y[i]
    x_i = states[i]
    q_inv = problem.weights.q_inv
    r_inv = problem.weights.r_inv

    J_f = np.asarray(m.J_f(x_i, u_i), dtype=float)
    J_h = np.asarray(m.J_h(x_i), dtype=float)
    res_f = np.asarray(m.f(x_i, u_i), dtype=float) - states[i + 1]
    res_h = np.asarray(m.h(x_i), dtype=float) - y_i
    S_f = np.einsum("k,kab->ab", q_inv * res_f, np.asarray(m.H_f(x_i, u_i), dtype=float))
    S_h = np.einsum("k,kab->ab", r_inv * res_h, np.asarray(m.H_h(x_i), dtype=float))
    Jt_f = (J_f.T * q_inv) @ J_f
    Jt_h = (J_h.T * r_inv) @ J_h
    return {
        "J_f": J_f,
        "J_h": J_h,
        "res_f": res_f,
        "res_h": res_h,
        "S_f": 0.5 * (S_f + S_f.T),
        "S_h": 0.5 * (S_h + S_h.T),
        "Jt_f": 0.5 * (Jt_f + Jt_f.T),
        "Jt_h": 0.5 * (Jt_h + Jt_h.T),
    }


class GenericEvaluator:
    """Model-agnostic evaluation through the model callables.

    Works for any ``SystemModel``; the specialized kernel evaluators exist
    because this path pays Python-level overhead per stage.
    """

    def __init__(self, problem: MheProblem):
        self.problem = problem

    def _states(self, xi):
        p = self.problem
        return unpack(xi, p.model.n, p.N)

    def objective(self, xi) -> float:
        p = self.problem
        s = self._states(xi)
        q_inv, r_inv = p.weights.q_inv, p.weights.r_inv
        d0 = s[0] - p.arrival.x_hat
        F = float(d0 @ (p.arrival.pi_inv @ d0))
        for i in range(p.N):
            w = s[i + 1] - np.asarray(p.model.f(s[i], p.window.U[i]), dtype=float)
            v = p.window.Y[i] - np.asarray(p.model.h(s[i]), dtype=float)
            F += float(w @ (q_inv * w) + v @ (r_inv * v))
        return F

    def gradient(self, xi) -> np.ndarray:
        p = self.problem
        s = self._states(xi)
        q_inv, r_inv = p.weights.q_inv, p.weights.r_inv
        g = np.zeros_like(s)
        d0 = s[0] - p.arrival.x_hat
        g[0] += 2.0 * (p.arrival.pi_inv @ d0)
        for i in range(p.N):
            w = s[i + 1] - np.asarray(p.model.f(s[i], p.window.U[i]), dtype=float)
            v = p.window.Y[i] - np.asarray(p.model.h(s[i]), dtype=float)
            J_f = np.asarray(p.model.J_f(s[i], p.window.U[i]), dtype=float)
            J_h = np.asarray(p.model.J_h(s[i]), dtype=float)
            qw = q_inv * w
            g[i + 1] += 2.0 * qw
            g[i] -= 2.0 * (J_f.T @ qw)
            g[i] -= 2.0 * (J_h.T @ (r_inv * v))
        return g.reshape(-1)

    def hessian(self, xi) -> BlockTridiagonal:
        p = self.problem
        n = p.model.n
        s = self._states(xi)
        q_inv = p.weights.q_inv
        diag = np.zeros((p.N + 1, n, n))
        off = np.zeros((p.N, n, n))
        diag[0] += 2.0 * p.arrival.pi_inv
        for i in range(p.N):
            st = stage_terms(p, s, i)
            diag[i] += 2.0 * (st["Jt_f"] + st["S_f"] + st["Jt_h"] + st["S_h"])
            diag[i + 1] += 2.0 * np.diag(q_inv)
            off[i] = -2.0 * (st["J_f"].T * q_inv)
        return BlockTridiagonal(diag=diag, off=off)

    def value_grad_hess(self, xi):
        return self.objective(xi), self.gradient(xi), self.hessian(xi)


class UnicycleKernelEvaluator:
    """Unicycle-specialized evaluation through a kernel backend."""

    def __init__(self, problem: MheProblem, kernel_module):
        if problem.model.kernel_tag != "unicycle":
            raise ValueError("kernel evaluator requires the unicycle model")
        self.problem = problem
        self.k = kernel_module
        self._U = np.ascontiguousarray(problem.window.U, dtype=np.float64)
        self._Y = np.ascontiguousarray(problem.window.Y, dtype=np.float64)
        self._xhat = np.ascontiguousarray(problem.arrival.x_hat, dtype=np.float64)
        self._pi_inv = np.ascontiguousarray(problem.arrival.pi_inv, dtype=np.float64)
        self._q_inv = np.ascontiguousarray(problem.weights.q_inv, dtype=np.float64)
        self._r_inv = np.ascontiguousarray(problem.weights.r_inv, dtype=np.float64)
        self._dt = float(problem.model.dt)

    def _x(self, xi):
        xi = np.ascontiguousarray(xi, dtype=np.float64)
        return xi.reshape(self.problem.N + 1, 3)

    def objective(self, xi) -> float:
        return float(
            self.k.window_objective(
                self._x(xi), self._U, self._Y, self._xhat,
                self._pi_inv, self._q_inv, self._r_inv, self._dt,
            )
        )

    def value_grad_hess(self, xi):
        F, g, diag, off = self.k.window_eval(
            self._x(xi), self._U, self._Y, self._xhat,
            self._pi_inv, self._q_inv, self._r_inv, self._dt,
        )
        return float(F), g.reshape(-1), BlockTridiagonal(diag=diag, off=off)

    def gradient(self, xi) -> np.ndarray:
        return self.value_grad_hess(xi)[1]

    def hessian(self, xi) -> BlockTridiagonal:
        return self.value_grad_hess(xi)[2]


def make_evaluator(problem: MheProblem, backend=None):
    """Pick the fastest evaluator for the problem's model.

    ``backend`` may be "numba", "numpy", "auto", "generic", or None (defer
    to the MHEIPG_BACKEND environment variable). Models without a kernel
    tag always use the generic path.
    """
    if backend == "generic" or problem.model.kernel_tag != "unicycle":
        return GenericEvaluator(problem)
    return UnicycleKernelEvaluator(problem, get_backend(backend))


# ---------------------------------------------------------------------------
# Cross-instant updates
# ---------------------------------------------------------------------------

def riccati_update(Pi, J_f, J_h, Q, R) -> np.ndarray:
    """Propagate the anchor weight through linearized dynamics/measurement.

    S1 = J_h Pi J_h' + R
    S2 = J_f Pi J_h' S1^{-1} J_h Pi J_f'
    Pi' = J_f Pi J_f' - S2 + Q

    Raises numpy.linalg.LinAlgError when S1 is numerically singular, which
    signals an ill-conditioned R or Pi.
    """
    Pi = np.asarray(Pi, dtype=float)
    J_f = np.asarray(J_f, dtype=float)
    J_h = np.asarray(J_h, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    S1 = J_h @ Pi @ J_h.T + R
    cross = J_f @ Pi @ J_h.T  # (n, p)
    try:
        X = np.linalg.solve(S1, cross.T)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            f"S1 is singular in the weight update (ill-conditioned R or Pi): {err}"
        ) from err
    S2 = cross @ X
    out = J_f @ Pi @ J_f.T - S2 + Q
    return 0.5 * (out + out.T)


def warm_start(xi_hat, model: SystemModel, u_t) -> np.ndarray:
    """Shift the solved window by one instant and append a one-step prediction."""
    states = unpack(xi_hat, model.n, xi_hat.size // model.n - 1)
    u_t = np.asarray(u_t, dtype=float)
    nxt = np.asarray(model.f(states[-1], u_t), dtype=float)
    return pack(np.vstack([states[1:], nxt[None, :]]))


def window_from_trajectory(traj: Trajectory, t: int, N: int) -> Window:
    """Window at instant t: inputs/measurements from instants t-N .. t-1."""
    if t > traj.T:
        raise ValueError(f"t={t} exceeds trajectory length T={traj.T}")
    return Window(t=t, N=N, Y=traj.observations[t - N:t], U=traj.inputs[t - N:t])


# ---------------------------------------------------------------------------
# JSON snapshots (debugging / the check-convexity CLI)
# ---------------------------------------------------------------------------

def _model_to_dict(model: SystemModel) -> dict:
    if model.kernel_tag == "unicycle":
        return {"type": "unicycle", "dt": model.dt}
    raise ValueError(
        "only unicycle and linear models are JSON-serializable; "
        "got an unregistered model"
    )


def problem_to_json(problem: MheProblem, xi=None, model_dict=None) -> str:
    """Serialize a problem snapshot (and optional evaluation point)."""
    d = {
        "model": model_dict if model_dict is not None else _model_to_dict(problem.model),
        "window": {
            "t": problem.window.t,
            "N": problem.window.N,
            "Y": problem.window.Y.tolist(),
            "U": problem.window.U.tolist(),
        },
        "arrival": {
            "x_hat": problem.arrival.x_hat.tolist(),
            "Pi": problem.arrival.Pi.tolist(),
            "phi_star": problem.arrival.phi_star,
        },
        "weights": {
            "q_diag": problem.weights.q_diag.tolist(),
            "r_diag": problem.weights.r_diag.tolist(),
        },
    }
    if xi is not None:
        d["xi"] = np.asarray(xi, dtype=float).tolist()
    return json.dumps(d, indent=2)


def _model_from_dict(d: dict) -> SystemModel:
    kind = d.get("type")
    if kind == "unicycle":
        return unicycle_model(float(d["dt"]))
    if kind == "linear":
        return linear_model(d["A"], d["C"], d.get("B"))
    raise ValueError(f"unknown model type {kind!r} in problem snapshot")


def problem_from_json(text: str):
    """Rebuild (problem, xi_or_None) from a snapshot produced by problem_to_json."""
    d = json.loads(text)
    for key in ("model", "window", "arrival", "weights"):
        if key not in d:
            raise ValueError(f"problem snapshot missing required field: {key}")
    model = _model_from_dict(d["model"])
    window = Window(
        t=int(d["window"]["t"]),
        N=int(d["window"]["N"]),
        Y=np.asarray(d["window"]["Y"], dtype=float),
        U=np.asarray(d["window"]["U"], dtype=float),
    )
    arrival = ArrivalCost(
        x_hat=np.asarray(d["arrival"]["x_hat"], dtype=float),
        Pi=np.asarray(d["arrival"]["Pi"], dtype=float),
        phi_star=float(d["arrival"].get("phi_star", 0.0)),
    )
    weights = Weights(
        q_diag=np.asarray(d["weights"]["q_diag"], dtype=float),
        r_diag=np.asarray(d["weights"]["r_diag"], dtype=float),
    )
    problem = MheProblem(model=model, window=window, arrival=arrival, weights=weights)
    xi = np.asarray(d["xi"], dtype=float) if "xi" in d else None
    return problem, xi
