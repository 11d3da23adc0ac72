"""Extended Kalman filter baseline sharing the system-model interface."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SystemModel, Trajectory

__all__ = ["EkfState", "ekf_step", "run_ekf"]


@dataclass(frozen=True)
class EkfState:
    """Filter state: estimate and symmetric positive-definite covariance."""

    x_hat: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_hat, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if P.shape != (x.size, x.size):
            raise ValueError(f"P shape {P.shape} does not match state dim {x.size}")
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "P", 0.5 * (P + P.T))


def ekf_step(s: EkfState, u, y, model: SystemModel, Q, R, joseph: bool = False) -> EkfState:
    """One predict/update cycle of the extended Kalman filter.

    Predict with the drift Jacobian, update with the measurement taken at
    the predicted instant. ``joseph=True`` switches to the Joseph-form
    covariance update for extra numerical robustness.
    """
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)

    J_f = np.asarray(model.J_f(s.x_hat, u), dtype=float)
    x_pred = np.asarray(model.f(s.x_hat, u), dtype=float)
    P_pred = J_f @ s.P @ J_f.T + Q

    J_h = np.asarray(model.J_h(x_pred), dtype=float)
    S = J_h @ P_pred @ J_h.T + R
    try:
        K = np.linalg.solve(S, J_h @ P_pred).T
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"innovation covariance is singular: {err}") from err
    x_new = x_pred + K @ (y - np.asarray(model.h(x_pred), dtype=float))
    I = np.eye(s.x_hat.size)
    if joseph:
        A = I - K @ J_h
        P_new = A @ P_pred @ A.T + K @ R @ K.T
    else:
        P_new = (I - K @ J_h) @ P_pred
    P_new = 0.5 * (P_new + P_new.T)
    return EkfState(x_hat=x_new, P=P_new)


def run_ekf(traj: Trajectory, model: SystemModel, Q, R, x0_hat, P0, joseph: bool = False):
    """Filter a whole trajectory.

    Returns (estimates, stats) where estimates[t] is the posterior at
    instant t (the final instant, which has no measurement, is a pure
    prediction) and stats records the minimum covariance eigenvalue seen.
    Raises if the covariance ever loses positive definiteness.
    """
    T = traj.T
    s = EkfState(x_hat=np.asarray(x0_hat, dtype=float), P=np.asarray(P0, dtype=float))
    estimates = np.zeros((T + 1, model.n))
    estimates[0] = s.x_hat
    p_min_eig = float(np.linalg.eigvalsh(s.P)[0])
    for t in range(T - 1):
        s = ekf_step(s, traj.inputs[t], traj.observations[t + 1], model, Q, R, joseph)
        estimates[t + 1] = s.x_hat
        lam = float(np.linalg.eigvalsh(s.P)[0])
        p_min_eig = min(p_min_eig, lam)
        if lam <= 0:
            raise RuntimeError(f"covariance lost positive definiteness at t={t + 1}")
    # no measurement exists at the final state: predict only
    estimates[T] = np.asarray(model.f(s.x_hat, traj.inputs[T - 1]), dtype=float)
    stats = {"p_min_eig": p_min_eig}
    return estimates, stats
