import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gammaln

from peis.eis import (
    CrnStore,
    EisConfig,
    EisParams,
    draw_crn,
    draw_mixing,
    draw_state,
    fit_eis,
    ig_logpdf,
    kernel_moments,
    log_phi,
    natural_params,
)
from peis.errors import ContractError, KernelDegeneracyError, SingularDesignError
from peis.kalman import kalman_loglik
from peis.models import (
    LinGaussParams,
    MvLinearGaussian,
    MvLinGaussParams,
    get_model,
    linear_gaussian,
    simulate_dgp,
)
from peis.particle import eis_loglik


def _lg(phi=0.9, var_eta=1.0, var_eps=0.5):
    return linear_gaussian(), LinGaussParams(phi=phi, var_eta=var_eta, var_eps=var_eps)


# ---------------------------------------------------------------------------
# kernel moments


def test_kernel_moments_natural_sampler():
    model, theta = _lg()
    params = natural_params(4, model)
    km = kernel_moments(model, theta, 2, params, x_prev=[0.7])
    assert km.mu == pytest.approx(0.9 * 0.7)
    assert km.V[0, 0] == pytest.approx(1.0)
    assert km.log_delta == pytest.approx(0.0)


def test_kernel_moments_scalar_example():
    # m = p = 1, Q = 1, F = 0, b = 1, C = 1 -> V = 0.5, mu = 0.5,
    # log delta = log(2)/2 - 1/4  (matches int e^{x - x^2/2} N(x; 0, 1) dx)
    model, theta = _lg(phi=0.5, var_eta=1.0)
    params = natural_params(3, model)
    params.b[1, 0] = 1.0
    params.C[1, 0, 0] = 1.0
    km = kernel_moments(model, theta, 2, params, x_prev=[0.0])
    assert km.V[0, 0] == pytest.approx(0.5)
    assert km.mu[0] == pytest.approx(0.5)
    assert km.log_delta == pytest.approx(0.5 * math.log(2.0) - 0.25, abs=1e-12)


def test_chi_delta_duality_by_quadrature():
    model, theta = _lg(phi=0.7, var_eta=0.8)
    params = natural_params(3, model)
    params.b[1, 0] = -0.4
    params.C[1, 0, 0] = 0.9
    x_prev = 0.6
    km = kernel_moments(model, theta, 2, params, x_prev=[x_prev])
    F = 0.7 * x_prev

    def integrand(x):
        tilt = math.exp(-0.4 * x - 0.45 * x * x)
        trans = math.exp(-0.5 * (x - F) ** 2 / 0.8) / math.sqrt(2 * math.pi * 0.8)
        return tilt * trans

    chi, _ = quad(integrand, -12, 12)
    assert abs(math.exp(-km.log_delta) - chi) < 1e-6


def test_kernel_degeneracy_error_carries_period():
    model, theta = _lg(var_eta=1.0)
    params = natural_params(3, model)
    params.C[1, 0, 0] = -2.0  # precision 1 + C q = -1 < 0
    with pytest.raises(KernelDegeneracyError) as err:
        kernel_moments(model, theta, 2, params, x_prev=[0.0])
    assert err.value.t == 2


# ---------------------------------------------------------------------------
# mixing normalizer


def test_log_phi_untilted_is_zero():
    assert log_phi(0.0, 0.0, 10.0) == pytest.approx(0.0, abs=1e-14)


def test_log_phi_closed_form():
    # alpha = 1, beta = 0, nu = 10: Gamma(5)/5^5 * 5^4/Gamma(4) = 4/5
    assert log_phi(1.0, 0.0, 10.0) == pytest.approx(math.log(0.8), abs=1e-12)


def test_log_phi_quadrature_identity():
    alpha, beta, nu = 0.8, -0.5, 9.0

    def integrand(lam):
        return lam**alpha * math.exp(beta / lam) * math.exp(ig_logpdf(lam, nu / 2, nu / 2))

    val, _ = quad(integrand, 0, 300, limit=300)
    assert abs(val - math.exp(-log_phi(alpha, beta, nu))) < 1e-6


def test_log_phi_domain_error():
    with pytest.raises(ContractError):
        log_phi(6.0, 0.0, 10.0)


def test_draw_mixing_matches_tilted_inverse_gamma():
    rng = np.random.default_rng(0)
    lam = draw_mixing(rng, 10.0, 1.0, -2.0, (200_000,))
    # IG(4, 7): mean 7/3, variance 49/(9*2)
    assert lam.mean() == pytest.approx(7.0 / 3.0, rel=0.01)
    assert lam.var() == pytest.approx(49.0 / 18.0, rel=0.05)


# ---------------------------------------------------------------------------
# draw_state


def test_draw_state_zero_innovation_returns_mean():
    model, theta = _lg()
    params = natural_params(3, model)
    params.b[1, 0] = 0.3
    params.C[1, 0, 0] = 0.5
    km = kernel_moments(model, theta, 2, params, x_prev=[0.4])
    x = draw_state(model, theta, 2, params, [0.4], None, np.zeros(1))
    assert x[0] == pytest.approx(km.mu[0], abs=1e-14)


def test_draw_state_antithetic_midpoint():
    model, theta = get_model("bivariate-sv")
    params = natural_params(3, model)
    params.b[1] = [0.2, -0.1, 0.05]
    params.C[1] = np.diag([0.5, 0.25, 0.75])
    xi = np.array([0.7, -1.2, 0.4])
    x_prev = np.array([0.1, 0.2, -0.3])
    a = draw_state(model, theta, 2, params, x_prev, None, xi)
    b = draw_state(model, theta, 2, params, x_prev, None, -xi)
    km = kernel_moments(model, theta, 2, params, x_prev=x_prev)
    assert np.allclose((a + b) / 2.0, km.mu, atol=1e-14)


def test_draw_state_sample_covariance():
    model, theta = get_model("bivariate-sv")
    params = natural_params(2, model)
    params.b[1] = [0.1, 0.0, -0.2]
    params.C[1] = np.array([[0.8, 0.2, 0.0], [0.2, 0.6, 0.1], [0.0, 0.1, 0.9]])
    x_prev = np.array([0.3, -0.2, 0.1])
    km = kernel_moments(model, theta, 2, params, x_prev=x_prev)
    rng = np.random.default_rng(3)
    draws = np.array(
        [draw_state(model, theta, 2, params, x_prev, None, rng.standard_normal(3))
         for _ in range(100_000)]
    )
    cov = np.cov(draws.T)
    assert np.all(np.abs(cov - km.V) < 0.03 * np.outer(np.sqrt(np.diag(km.V)), np.sqrt(np.diag(km.V))))


# ---------------------------------------------------------------------------
# fitting


def test_fit_zero_iterations_is_natural_sampler():
    model, theta = _lg()
    traj = simulate_dgp(model, theta, 10, seed=0)
    params = fit_eis(model, theta, traj.y, EisConfig(s=20, max_iter=0), seed=1)
    assert np.all(params.b == 0.0)
    assert np.all(params.C == 0.0)


def test_fit_deterministic_in_seed():
    model, theta = get_model("bivariate-sv")
    traj = simulate_dgp(model, theta, 40, seed=5)
    a = fit_eis(model, theta, traj.y, EisConfig(s=32, max_iter=4), seed=9)
    b = fit_eis(model, theta, traj.y, EisConfig(s=32, max_iter=4), seed=9)
    assert np.array_equal(a.b, b.b)
    assert np.array_equal(a.C, b.C)


def test_fit_requires_identifiable_regression():
    model, theta = get_model("bivariate-sv")
    traj = simulate_dgp(model, theta, 10, seed=0)
    with pytest.raises(ContractError):
        fit_eis(model, theta, traj.y, EisConfig(s=10), seed=1)


def test_fit_singular_design_error():
    # a degenerate state makes every trajectory identical: collinear design
    model, theta = _lg(var_eta=1e-300)
    traj = simulate_dgp(model, theta, 5, seed=2)
    with pytest.raises(SingularDesignError) as err:
        fit_eis(model, theta, traj.y, EisConfig(s=20), seed=1)
    assert err.value.t >= 1
    assert err.value.iteration == 1


def test_fit_exact_on_linear_gaussian_weight_variance():
    model, theta = _lg()
    traj = simulate_dgp(model, theta, 80, seed=3)
    params = fit_eis(model, theta, traj.y, EisConfig(s=20), seed=4)
    est = eis_loglik(model, theta, traj.y, params, N=1000, antithetic=False, seed=5)
    # for small weight variance, Var(log w) ~ N / ESS - 1
    log_w_var = 1000.0 / est.ess_path[-1] - 1.0
    assert log_w_var < 1e-8


def test_fit_exact_on_multivariate_signal_with_cross_terms():
    # correlated measurement noise exercises the off-diagonal quadratic
    # regressors; exactness pins their convention
    Z = np.array([[1.0, 0.4], [0.2, 1.0]])
    R = np.array([[0.6, 0.3], [0.3, 0.5]])
    model = MvLinearGaussian(Z, R)
    theta = MvLinGaussParams(phi=(0.85, 0.6), var_eta=(0.9, 0.7))
    traj = simulate_dgp(model, theta, 60, seed=6)
    ref = kalman_loglik(model, theta, traj.y)
    params = fit_eis(model, theta, traj.y, EisConfig(s=30), seed=7)
    est = eis_loglik(model, theta, traj.y, params, N=16, seed=8)
    assert abs(est.loglik - ref) < 1e-7


def test_crn_store_shapes():
    model, theta = get_model("univariate-sv-t")
    rng = np.random.default_rng(0)
    crn = draw_crn(model, theta, 12, 8, rng)
    assert crn.xi.shape == (8, 12, 2)
    assert crn.lam.shape == (8, 12, 2)
    assert np.all(crn.lam[:, 0, :] == 1.0)  # period-1 slot unused
    assert np.all(crn.lam[:, 1:, :] > 0.0)


def test_full_mode_requires_t_state():
    model, theta = _lg()
    traj = simulate_dgp(model, theta, 10, seed=0)
    with pytest.raises(ContractError):
        fit_eis(model, theta, traj.y, EisConfig(s=20, mode="full"), seed=1)


def test_full_mode_tilts_respect_margins():
    model, theta = get_model("univariate-sv-t")
    traj = simulate_dgp(model, theta, 60, seed=1)
    params = fit_eis(model, theta, traj.y, EisConfig(mode="full", max_iter=6), seed=2)
    assert params.alpha is not None and params.beta is not None
    assert np.all(theta.nu_eta / 2.0 - params.alpha > 0.0)
    assert np.all(theta.nu_eta / 2.0 - params.beta > 0.0)
    assert np.all(params.alpha[0] == 0.0)


def test_full_mode_beats_partial_on_matched_seeds():
    model, theta = get_model("univariate-sv-t")
    traj = simulate_dgp(model, theta, 400, seed=31)
    partial = fit_eis(model, theta, traj.y, EisConfig(mode="partial"), seed=2)
    full = fit_eis(model, theta, traj.y, EisConfig(mode="full"), seed=2)
    vp = np.var([eis_loglik(model, theta, traj.y, partial, 50, seed=s).loglik for s in range(16)], ddof=1)
    vf = np.var([eis_loglik(model, theta, traj.y, full, 50, seed=s).loglik for s in range(16)], ddof=1)
    assert vf < vp


# ---------------------------------------------------------------------------
# the plain EIS estimator


def test_eis_loglik_matches_kalman():
    model, theta = _lg()
    traj = simulate_dgp(model, theta, 200, seed=9)
    ref = kalman_loglik(model, theta, traj.y)
    params = fit_eis(model, theta, traj.y, EisConfig(s=20), seed=10)
    est = eis_loglik(model, theta, traj.y, params, N=8, seed=11)
    assert abs(est.loglik - ref) < 1e-6


def test_eis_single_period_is_log_mean_exp():
    # with natural-sampler params and n = 1 the estimate is the log of the
    # average measurement likelihood over prior draws
    model, theta = _lg()
    y = np.array([[0.4]])
    params = natural_params(1, model)
    est = eis_loglik(model, theta, y, params, N=64, antithetic=False, seed=12)
    # replicate draws: engine uses substream(seed, "peis") and draws (N, m)
    from peis._rng import substream

    rng = substream(12, "peis")
    xi = rng.standard_normal((64, 1))
    p1 = theta.var_eta / (1.0 - theta.phi**2)
    x = np.sqrt(p1) * xi
    logmeas = model.log_meas(theta, y[0], x)
    expected = np.log(np.mean(np.exp(logmeas)))
    assert est.loglik == pytest.approx(float(expected), abs=1e-10)


def test_eis_unbiased_against_kalman():
    model, theta = _lg(phi=0.8, var_eta=0.6, var_eps=1.0)
    traj = simulate_dgp(model, theta, 50, seed=13)
    ref = kalman_loglik(model, theta, traj.y)
    params = fit_eis(model, theta, traj.y, EisConfig(s=20, max_iter=2), seed=14)
    reps = 4000
    ratios = np.empty(reps)
    for r in range(reps):
        ratios[r] = math.exp(
            eis_loglik(model, theta, traj.y, params, N=4, seed=2000 + r).loglik - ref
        )
    z = (ratios.mean() - 1.0) / (ratios.std(ddof=1) / math.sqrt(reps))
    assert abs(z) < 3.0, z


def test_antithetic_reduces_variance_and_preserves_mean():
    model, theta = _lg(phi=0.8, var_eta=0.6, var_eps=1.0)
    traj = simulate_dgp(model, theta, 50, seed=15)
    ref = kalman_loglik(model, theta, traj.y)
    # a deliberately imperfect sampler so weights vary
    params = fit_eis(model, theta, traj.y, EisConfig(s=20, max_iter=1), seed=16)
    reps = 3000
    plain = np.empty(reps)
    anti = np.empty(reps)
    for r in range(reps):
        plain[r] = math.exp(
            eis_loglik(model, theta, traj.y, params, N=8, antithetic=False, seed=r).loglik - ref
        )
        anti[r] = math.exp(
            eis_loglik(model, theta, traj.y, params, N=8, antithetic=True, seed=r).loglik - ref
        )
    z = (anti.mean() - plain.mean()) / math.sqrt(
        anti.var(ddof=1) / reps + plain.var(ddof=1) / reps
    )
    assert abs(z) < 3.0
    assert anti.var(ddof=1) <= plain.var(ddof=1)


def test_kernel_scale_invariance():
    model, theta = get_model("univariate-sv")
    traj = simulate_dgp(model, theta, 60, seed=17)
    params = fit_eis(model, theta, traj.y, EisConfig(), seed=18)
    base = eis_loglik(model, theta, traj.y, params, N=16, seed=19).loglik
    scaled = EisParams(
        b=params.b, C=params.C, log_scale=np.full(params.n, 2.5)
    )
    val = eis_loglik(model, theta, traj.y, scaled, N=16, seed=19).loglik
    assert abs(val - base) < 1e-12


def test_eis_requires_even_particles_for_antithetics():
    model, theta = _lg()
    traj = simulate_dgp(model, theta, 5, seed=0)
    params = natural_params(5, model)
    with pytest.raises(ContractError):
        eis_loglik(model, theta, traj.y, params, N=7, antithetic=True, seed=0)
