import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaln

from peis.errors import ContractError, NumericError, ParameterError
from peis.models import (
    BivSvParams,
    LinGaussParams,
    UnivSvParams,
    get_model,
    linear_gaussian,
    log_meas,
    log_transition,
    simulate_dgp,
    transition_moments,
    univariate_sv,
    univariate_sv_t,
)


def test_dgp_shapes_and_determinism():
    model, theta = get_model("univariate-sv")
    traj = simulate_dgp(model, theta, 2500, seed=7)
    assert traj.x.shape == (2500, 2)
    assert traj.y.shape == (2500, 1)
    again = simulate_dgp(model, theta, 2500, seed=7)
    assert np.array_equal(traj.x, again.x)
    assert np.array_equal(traj.y, again.y)


def test_dgp_stationary_variance_linear_gaussian():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.9, var_eta=1.0, var_eps=1.0)
    traj = simulate_dgp(model, theta, 100_000, seed=1)
    target = 1.0 / (1.0 - 0.81)
    assert abs(traj.x.var() / target - 1.0) < 0.05


@pytest.mark.parametrize("model_id,tol", [("univariate-sv", 0.05), ("univariate-sv-t", 0.10)])
def test_dgp_stationary_variance_sv(model_id, tol):
    model, theta = get_model(model_id)
    traj = simulate_dgp(model, theta, 100_000, seed=3)
    sig2 = np.array([theta.var_eta1, theta.var_eta2])
    phis = np.array([theta.phi1, theta.phi2])
    target = sig2 / (1.0 - phis**2)
    rel = np.abs(traj.x.var(axis=0) / target - 1.0)
    assert np.all(rel < tol), rel


def test_dgp_rejects_bad_params():
    model, theta = get_model("univariate-sv")
    from dataclasses import replace

    with pytest.raises(ParameterError):
        simulate_dgp(model, replace(theta, phi1=0.5, phi2=0.9), 10, seed=0)
    with pytest.raises(ParameterError):
        simulate_dgp(model, replace(theta, var_eta1=-1.0), 10, seed=0)
    with pytest.raises(ParameterError):
        simulate_dgp(model, replace(theta, nu=1.5), 10, seed=0)


def test_bivariate_log_meas_origin():
    model = get_model("bivariate-sv")[0]
    theta = BivSvParams(0.0, 0.0, 0.0, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1)
    # c3 = 0, x3 = 0 gives rho = 0 and unit variances
    val = log_meas(model, theta, np.zeros(2), np.zeros(3))
    assert abs(val - (-math.log(2.0 * math.pi))) < 1e-12


def test_univariate_log_meas_standardized_t():
    model, theta = get_model("univariate-sv")
    val = log_meas(model, theta, np.array([0.0]), np.array([0.0]))
    # standardized-t density at zero: Gamma(5.5) / (sqrt(8 pi) Gamma(5))
    expected = gammaln(5.5) - gammaln(5.0) - 0.5 * math.log(8.0 * math.pi)
    assert abs(val - expected) < 1e-12


def test_bivariate_correlation_monotone_and_bounded():
    model, theta = get_model("bivariate-sv")
    # |x3| <= 25 keeps tanh away from its float64 saturation point
    x3 = np.linspace(-25, 25, 401)
    rho = model.correlation(theta, x3)
    assert np.all(np.diff(rho) > 0)
    assert np.all(np.abs(rho) < 1.0)


def test_log_meas_rejects_non_finite():
    model, theta = get_model("univariate-sv")
    with pytest.raises(NumericError):
        log_meas(model, theta, np.array([0.0]), np.array([np.nan]))


def test_transition_moments_no_leverage():
    model, theta = get_model("univariate-sv")
    from dataclasses import replace

    th0 = replace(theta, rho1=0.0, rho2=0.0)
    mom = transition_moments(model, th0, 3, np.array([1.0, 1.0]), y_prev=np.array([2.0]))
    assert np.allclose(mom.mean, [th0.phi1, th0.phi2])
    assert np.allclose(mom.var_diag, [th0.var_eta1, th0.var_eta2])
    # leverage invariance: independent of y_prev when rho = 0
    mom2 = transition_moments(model, th0, 3, np.array([1.0, 1.0]), y_prev=np.array([-5.0]))
    assert np.allclose(mom.mean, mom2.mean)


def test_transition_moments_leverage_value():
    model, theta = get_model("univariate-sv")
    # c = 0, x_prev = 0, y_prev = 2: eps = 2, F1 = rho1 sigma1 eps
    mom = transition_moments(model, theta, 2, np.zeros(2), y_prev=np.array([2.0]))
    assert abs(mom.mean[0] - (-0.2 * math.sqrt(0.005) * 2.0)) < 1e-12
    assert abs(mom.mean[1] - (-0.5 * math.sqrt(0.03) * 2.0)) < 1e-12


def test_transition_moments_lambda_identity():
    model, theta = get_model("univariate-sv")
    base = transition_moments(model, theta, 2, np.zeros(2), y_prev=np.array([0.5]))
    lam1 = transition_moments(
        model, theta, 2, np.zeros(2), y_prev=np.array([0.5]), lam_t=np.ones(2)
    )
    assert np.allclose(base.var_diag, lam1.var_diag)
    assert np.allclose(base.mean, lam1.mean)


def test_transition_moments_contract_errors():
    model, theta = get_model("univariate-sv-t")
    with pytest.raises(ContractError):
        transition_moments(model, theta, 2, np.zeros(2), y_prev=np.array([1.0]))  # no lam
    with pytest.raises(ContractError):
        transition_moments(
            model, theta, 2, np.zeros(2), y_prev=np.array([1.0]), lam_t=np.array([1.0, -1.0])
        )
    model2, theta2 = get_model("univariate-sv")
    with pytest.raises(ContractError):
        model2.transition_mean_var(theta2, 2, np.zeros((1, 2)), y_prev=None)


def test_log_transition_density_at_mean():
    model, theta = get_model("bivariate-sv")
    mom = transition_moments(model, theta, 2, np.array([0.3, -0.1, 0.2]))
    val = log_transition(model, theta, 2, mom.mean, np.array([0.3, -0.1, 0.2]))
    expected = -0.5 * np.log(2.0 * math.pi * mom.var_diag).sum()
    assert abs(val - expected) < 1e-12


def test_log_transition_scalar_unit_variance():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.0, var_eta=1.0, var_eps=1.0)
    val = log_transition(model, theta, 2, np.array([1.0]), np.array([0.0]))
    assert abs(val - (-0.5 * math.log(2.0 * math.pi) - 0.5)) < 1e-12


def test_log_transition_integrates_to_one():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.7, var_eta=0.6, var_eps=1.0)
    total, _ = quad(
        lambda x: math.exp(log_transition(model, theta, 2, np.array([x]), np.array([0.5]))),
        -10, 10,
    )
    assert abs(total - 1.0) < 1e-6


def test_initial_moments_are_stationary():
    model, theta = get_model("bivariate-sv")
    mom = transition_moments(model, theta, 1, None)
    expected = np.array([theta.var_eta1, theta.var_eta2, theta.var_eta3]) / (
        1.0 - np.array([theta.phi1, theta.phi2, theta.phi3]) ** 2
    )
    assert np.allclose(mom.var_diag, expected)
    assert np.allclose(mom.mean, 0.0)


def test_t_state_model_needs_nu_eta():
    model = univariate_sv_t()
    theta = UnivSvParams(0.995, 0.9, 0.005, 0.03, -0.2, -0.5, 10.0)
    with pytest.raises(ParameterError):
        model.validate_params(theta)
    model2 = univariate_sv()
    from dataclasses import replace

    with pytest.raises(ParameterError):
        model2.validate_params(replace(theta, nu_eta=10.0))


def test_meas_grad_hess_finite_difference():
    model, theta = get_model("univariate-sv")
    s = np.array([[0.3], [-0.8], [1.2]])
    y = np.array([0.7])
    g, h = model.meas_grad_hess(theta, y, s)
    eps = 1e-6
    for i, si in enumerate(s[:, 0]):
        up = model.log_meas(theta, y, np.array([[si + eps]]))[0]
        dn = model.log_meas(theta, y, np.array([[si - eps]]))[0]
        mid = model.log_meas(theta, y, np.array([[si]]))[0]
        assert abs((up - dn) / (2 * eps) - g[i, 0]) < 1e-6
        assert abs((up - 2 * mid + dn) / eps**2 - h[i, 0, 0]) < 1e-3


def test_bivariate_dgp_moments():
    model, theta = get_model("bivariate-sv")
    traj = simulate_dgp(model, theta, 60_000, seed=9)
    target = np.array([theta.var_eta1, theta.var_eta2, theta.var_eta3]) / (
        1.0 - np.array([theta.phi1, theta.phi2, theta.phi3]) ** 2
    )
    assert np.all(np.abs(traj.x.var(axis=0) / target - 1.0) < 0.25)
