"""Exact likelihood for linear-Gaussian models via the prediction error
decomposition; serves as the exactness oracle for the sampling estimators."""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

LOG_2PI = math.log(2.0 * math.pi)


def kalman_loglik(model, theta, y: np.ndarray) -> float:
    """Exact log likelihood of ``y`` under a linear-Gaussian state space model.

    The model must expose ``lgss_matrices(theta) -> (phi, q_diag, Z, R)``
    describing x_t = diag(phi) x_{t-1} + eta, eta ~ N(0, diag(q_diag)) and
    y_t = Z x_t + e, e ~ N(0, R), with a stationary initial state.
    """
    if not hasattr(model, "lgss_matrices"):
        raise ContractError(f"{model.model_id} is not linear-Gaussian")
    model.validate_params(theta)
    phi, q_diag, Z, R = model.lgss_matrices(theta)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != Z.shape[0]:
        y = y.reshape(-1, Z.shape[0])
    m = Z.shape[1]
    T = np.diag(phi)
    Q = np.diag(q_diag)

    a = np.zeros(m)
    P = np.diag(q_diag / (1.0 - np.asarray(phi) ** 2))
    loglik = 0.0
    for t in range(y.shape[0]):
        v = y[t] - Z @ a
        F = Z @ P @ Z.T + R
        F_chol = np.linalg.cholesky(F)
        sol = np.linalg.solve(F_chol, v)
        loglik += -0.5 * (
            len(v) * LOG_2PI + 2.0 * np.log(np.diag(F_chol)).sum() + sol @ sol
        )
        K = P @ Z.T @ np.linalg.inv(F)
        a = a + K @ v
        P = P - K @ Z @ P
        # predict
        a = T @ a
        P = T @ P @ T.T + Q
    return float(loglik)
