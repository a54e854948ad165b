import math

import numpy as np
import pytest

from peis.errors import ContractError
from peis.kalman import kalman_loglik
from peis.models import (
    LinGaussParams,
    MvLinearGaussian,
    MvLinGaussParams,
    get_model,
    linear_gaussian,
    simulate_dgp,
)


def test_single_observation_marginal():
    # phi = 0, var_eta = 1 gives x1 ~ N(0, 1); y = x + e with var_eps = 1
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.0, var_eta=1.0, var_eps=1.0)
    y = np.array([[0.7]])
    expected = -0.5 * math.log(2.0 * math.pi * 2.0) - 0.5 * 0.7**2 / 2.0
    assert kalman_loglik(model, theta, y) == pytest.approx(expected, abs=1e-12)


def test_phi_zero_factorizes():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.0, var_eta=0.7, var_eps=0.3)
    y = np.array([[0.2], [-0.5], [1.1]])
    var = 1.0
    expected = sum(
        -0.5 * math.log(2.0 * math.pi * var) - 0.5 * v**2 / var for v in y[:, 0]
    )
    assert kalman_loglik(model, theta, y) == pytest.approx(expected, abs=1e-10)


def test_against_joint_gaussian_n3():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.6, var_eta=0.8, var_eps=0.4)
    y = np.array([[0.3], [-0.2], [0.9]])
    # brute force: y is jointly Gaussian with covariance from the state ACF
    p = 0.8 / (1.0 - 0.36)
    cov_x = p * np.array([[1, 0.6, 0.36], [0.6, 1, 0.6], [0.36, 0.6, 1]])
    cov_y = cov_x + 0.4 * np.eye(3)
    sign, logdet = np.linalg.slogdet(cov_y)
    expected = -0.5 * (3 * math.log(2 * math.pi) + logdet + y[:, 0] @ np.linalg.solve(cov_y, y[:, 0]))
    assert kalman_loglik(model, theta, y) == pytest.approx(float(expected), abs=1e-10)


def test_multivariate_against_joint_gaussian():
    Z = np.array([[1.0, 0.5], [0.0, 1.0]])
    R = np.array([[0.3, 0.1], [0.1, 0.5]])
    model = MvLinearGaussian(Z, R)
    theta = MvLinGaussParams(phi=(0.7, 0.4), var_eta=(0.6, 1.1))
    traj = simulate_dgp(model, theta, 3, seed=0)
    y = traj.y
    # direct 6-D Gaussian
    phi = np.diag([0.7, 0.4])
    q = np.diag([0.6, 1.1])
    p0 = np.diag([0.6 / (1 - 0.49), 1.1 / (1 - 0.16)])
    covs = {}
    covs[(0, 0)] = p0
    covs[(1, 1)] = phi @ p0 @ phi.T + q
    covs[(2, 2)] = phi @ covs[(1, 1)] @ phi.T + q
    covs[(0, 1)] = p0 @ phi.T
    covs[(0, 2)] = p0 @ (phi @ phi).T
    covs[(1, 2)] = covs[(1, 1)] @ phi.T
    big = np.zeros((6, 6))
    for i in range(3):
        for j in range(3):
            if i <= j:
                c = covs[(i, j)] if i != j else covs[(i, i)]
            else:
                c = covs[(j, i)].T
            big[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = Z @ c @ Z.T
            if i == j:
                big[2 * i : 2 * i + 2, 2 * j : 2 * j + 2] += R
    flat = y.reshape(-1)
    sign, logdet = np.linalg.slogdet(big)
    expected = -0.5 * (6 * math.log(2 * math.pi) + logdet + flat @ np.linalg.solve(big, flat))
    assert kalman_loglik(model, theta, y) == pytest.approx(float(expected), abs=1e-9)


def test_rejects_nonlinear_model():
    model, theta = get_model("bivariate-sv")
    with pytest.raises(ContractError):
        kalman_loglik(model, theta, np.zeros((4, 2)))
