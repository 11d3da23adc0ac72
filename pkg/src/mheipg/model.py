"""Discrete-time system models, bounded-noise generation, and simulation.

The estimation stack needs a small model surface: a drift map ``f(x, u)``, an
observation map ``h(x)``, their Jacobians with respect to the state, and the
second-derivative tensors used by curvature-aware routines (Hessian assembly
and convexity certification). Models are plain containers of callables so
that test systems (scalar, linear) and the unicycle share one interface.

Conventions:
    - States, inputs, and observations are 1-D float64 arrays of length
      ``n``, ``m``, ``p``.
    - ``H_f(x, u)`` has shape ``(n, n, n)`` with ``H_f[k, a, b]`` the second
      derivative of output ``k`` with respect to state components ``a, b``;
      ``H_h(x)`` is ``(p, n, n)``.
    - Process noise is added after the drift map, measurement noise after the
      observation map. Both are clipped (saturated) Gaussians, which keeps
      the disturbance sets compact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "SystemModel",
    "NoiseSpec",
    "Trajectory",
    "unicycle_step",
    "unicycle_observe",
    "unicycle_derivatives",
    "unicycle_model",
    "linear_model",
    "numeric_model",
    "fd_jacobian",
    "fd_hessian_tensor",
    "ramp_inputs",
    "simulate",
    "trajectory_to_csv",
    "load_config",
]


@dataclass(frozen=True)
class SystemModel:
    """Container for a discrete-time system x' = f(x, u), y = h(x).

    Attributes:
        n, m, p: state, input, and observation dimensions.
        f, h: drift and observation maps.
        J_f, J_h: Jacobians of f and h with respect to the state.
        H_f, H_h: second-derivative tensors, shapes (n, n, n) and (p, n, n).
        dt: sampling interval baked into f, if any (None for maps that do
            not depend on a sampling time).
        kernel_tag: identifier for models with specialized fast kernels.
        fd_derivatives: True when J/H come from finite differences rather
            than analytic forms (lower accuracy, see ``numeric_model``).
    """

    n: int
    m: int
    p: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    J_f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    J_h: Callable[[np.ndarray], np.ndarray]
    H_f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    H_h: Callable[[np.ndarray], np.ndarray]
    dt: float | None = None
    kernel_tag: str | None = None
    fd_derivatives: bool = False


@dataclass(frozen=True)
class NoiseSpec:
    """Clipped-Gaussian noise configuration for one simulation.

    ``process_std`` and ``meas_std`` are per-component standard deviations;
    samples are drawn N(0, std^2) and saturated at +/- clip. The same seed
    always reproduces the same sample stream.
    """

    process_std: np.ndarray
    meas_std: np.ndarray
    clip: float = 1.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "process_std", np.asarray(self.process_std, dtype=float))
        object.__setattr__(self, "meas_std", np.asarray(self.meas_std, dtype=float))
        if not self.clip > 0:
            raise ValueError(f"clip must be positive, got {self.clip}")
        if np.any(self.process_std < 0) or np.any(self.meas_std < 0):
            raise ValueError("noise standard deviations must be nonnegative")


@dataclass(frozen=True)
class Trajectory:
    """Simulated run: T+1 states, T inputs, T observations (y_i at x_i)."""

    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    observations: np.ndarray  # (T, p)
    dt: float

    def __post_init__(self):
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError("states must have exactly one more entry than inputs")
        if len(self.observations) != len(self.inputs):
            raise ValueError("observations and inputs must have equal length")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def T(self) -> int:
        return len(self.inputs)


# ---------------------------------------------------------------------------
# Unicycle kinematics
# ---------------------------------------------------------------------------

def unicycle_step(x, u, dt):
    """One Euler step of the planar unicycle.

    x = [px, py, heading], u = [forward speed, turn rate].
    """
    px, py, th = x
    return np.array([
        px + dt * u[0] * np.cos(th),
        py + dt * u[0] * np.sin(th),
        th + dt * u[1],
    ])


def unicycle_observe(x):
    """Position measurement: the first two state components."""
    return np.array([x[0], x[1]])


def unicycle_derivatives(x, u, dt):
    """Analytic Jacobians and curvature tensors of the unicycle maps.

    Returns (J_f, J_h, H_f, H_h). Only the heading column of J_f and the
    (heading, heading) entries of H_f are state dependent.
    """
    th = x[2]
    s, c = np.sin(th), np.cos(th)
    J_f = np.array([
        [1.0, 0.0, -dt * u[0] * s],
        [0.0, 1.0, dt * u[0] * c],
        [0.0, 0.0, 1.0],
    ])
    J_h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    H_f = np.zeros((3, 3, 3))
    H_f[0, 2, 2] = -dt * u[0] * c
    H_f[1, 2, 2] = -dt * u[0] * s
    H_h = np.zeros((2, 3, 3))
    return J_f, J_h, H_f, H_h


def unicycle_model(dt: float) -> SystemModel:
    """Unicycle with position observations, solvable by the fast kernels."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return SystemModel(
        n=3,
        m=2,
        p=2,
        f=lambda x, u: unicycle_step(x, u, dt),
        h=unicycle_observe,
        J_f=lambda x, u: unicycle_derivatives(x, u, dt)[0],
        J_h=lambda x: unicycle_derivatives(x, np.zeros(2), dt)[1],
        H_f=lambda x, u: unicycle_derivatives(x, u, dt)[2],
        H_h=lambda x: unicycle_derivatives(x, np.zeros(2), dt)[3],
        dt=dt,
        kernel_tag="unicycle",
    )


# ---------------------------------------------------------------------------
# Other model constructors
# ---------------------------------------------------------------------------

def linear_model(A, C, B=None) -> SystemModel:
    """Linear system x' = A x (+ B u), y = C x. Curvature tensors are zero."""
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    p = C.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ValueError("A must be square and C must have matching columns")
    if B is None:
        m = 0
        f = lambda x, u: A @ x
    else:
        B = np.asarray(B, dtype=float)
        m = B.shape[1]
        f = lambda x, u: A @ x + B @ u
    return SystemModel(
        n=n,
        m=m,
        p=p,
        f=f,
        h=lambda x: C @ x,
        J_f=lambda x, u: A,
        J_h=lambda x: C,
        H_f=lambda x, u: np.zeros((n, n, n)),
        H_h=lambda x: np.zeros((p, n, n)),
    )


def fd_jacobian(fun, x, step=1e-5):
    """Central-difference Jacobian of ``fun`` at ``x``.

    The step is scaled per component by max(1, |x_j|).
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h)
    return J


def fd_hessian_tensor(fun, x, step=1e-4):
    """Second-derivative tensor of a vector map by central differences.

    Returns shape (len(fun(x)), len(x), len(x)). Accuracy is O(step^2) and
    noticeably worse than analytic tensors; intended for models without
    closed-form curvature.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    d = x.size
    H = np.zeros((f0.size, d, d))
    steps = step * np.maximum(1.0, np.abs(x))
    for a in range(d):
        ha = steps[a]
        ea = np.zeros(d)
        ea[a] = ha
        H[:, a, a] = (np.atleast_1d(fun(x + ea)) - 2 * f0 + np.atleast_1d(fun(x - ea))) / ha**2
        for b in range(a + 1, d):
            hb = steps[b]
            eb = np.zeros(d)
            eb[b] = hb
            mixed = (
                np.atleast_1d(fun(x + ea + eb))
                - np.atleast_1d(fun(x + ea - eb))
                - np.atleast_1d(fun(x - ea + eb))
                + np.atleast_1d(fun(x - ea - eb))
            ) / (4 * ha * hb)
            H[:, a, b] = mixed
            H[:, b, a] = mixed
    return H


def numeric_model(f, h, n, m, p, dt=None, jac_step=1e-5, hess_step=1e-4) -> SystemModel:
    """Wrap user maps lacking analytic derivatives with finite differences.

    Jacobians are accurate to roughly ``jac_step**2`` relative error and the
    curvature tensors to roughly ``hess_step**2``; prefer analytic forms
    where available.
    """
    return SystemModel(
        n=n,
        m=m,
        p=p,
        f=f,
        h=h,
        J_f=lambda x, u: fd_jacobian(lambda z: f(z, u), x, jac_step),
        J_h=lambda x: fd_jacobian(h, x, jac_step),
        H_f=lambda x, u: fd_hessian_tensor(lambda z: f(z, u), x, hess_step),
        H_h=lambda x: fd_hessian_tensor(h, x, hess_step),
        dt=dt,
        fd_derivatives=True,
    )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def ramp_inputs(T, forward_speed=3.0, turn_ramp=0.005):
    """Constant speed with linearly ramping turn rate: u_i = [v, i * slope]."""
    u = np.zeros((T, 2))
    u[:, 0] = forward_speed
    u[:, 1] = turn_ramp * np.arange(T)
    return u


def _clipped_normal(rng, std, clip, size):
    return np.clip(rng.standard_normal(size) * std, -clip, clip)


def simulate(model: SystemModel, x0, inputs, noise: NoiseSpec, dt=None) -> Trajectory:
    """Roll the model forward under clipped-Gaussian process/measurement noise.

    ``y_i`` is taken at ``x_i`` before stepping, so a run of T inputs yields
    T observations and T+1 states. Deterministic for a fixed noise seed.
    """
    x0 = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float).reshape(len(inputs), model.m)
    if len(inputs) == 0:
        raise ValueError("inputs must be non-empty")
    if x0.shape != (model.n,):
        raise ValueError(f"x0 has shape {x0.shape}, model expects ({model.n},)")
    if noise.process_std.shape != (model.n,) or noise.meas_std.shape != (model.p,):
        raise ValueError("noise std dimensions do not match the model")
    if dt is None:
        dt = model.dt if model.dt is not None else 1.0

    T = len(inputs)
    rng = np.random.default_rng(noise.seed)
    w = _clipped_normal(rng, noise.process_std, noise.clip, (T, model.n))
    v = _clipped_normal(rng, noise.meas_std, noise.clip, (T, model.p))

    states = np.zeros((T + 1, model.n))
    observations = np.zeros((T, model.p))
    states[0] = x0
    for i in range(T):
        observations[i] = model.h(states[i]) + v[i]
        states[i + 1] = model.f(states[i], inputs[i]) + w[i]
    return Trajectory(states=states, inputs=inputs, observations=observations, dt=dt)


def trajectory_to_csv(traj: Trajectory, path):
    """Write a trajectory as CSV with header t,x1..xn,u1..um,y1..yp.

    The final row carries only the terminal state (no input or observation
    is taken there).
    """
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    p = traj.observations.shape[1]
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + [f"y{i + 1}" for i in range(p)]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.T):
            row = [t, *traj.states[t], *traj.inputs[t], *traj.observations[t]]
            writer.writerow(row)
        writer.writerow([traj.T, *traj.states[traj.T]] + [""] * (m + p))


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """Load a config file, either JSON or simple ``key = value`` lines.

    key=value files support scalars, comma-separated numeric lists, and
    leave unknown tokens as strings. JSON parse failures surface the line
    and column from the decoder.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = _coerce(value.strip())
    return cfg


def _coerce(token: str):
    if "," in token:
        return [_coerce(part.strip()) for part in token.split(",")]
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            pass
    lowered = token.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    return token
