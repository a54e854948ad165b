import math

import numpy as np
import pytest

from peis.errors import ContractError
from peis.kalman import kalman_loglik
from peis.models import LinGaussParams, get_model, linear_gaussian, simulate_dgp
from peis.smc import (
    ResamplePolicy,
    apf0_loglik,
    bootstrap_loglik,
    ess,
    sisr2_loglik,
    systematic_resample,
)


def test_ess_values():
    assert ess(np.full(8, 0.125)) == pytest.approx(8.0)
    w = np.zeros(5)
    w[1] = 1.0
    assert ess(w) == pytest.approx(1.0)
    assert ess(np.array([0.5, 0.5, 0.0, 0.0])) == pytest.approx(2.0)


def test_ess_rejects_unnormalized():
    with pytest.raises(ContractError):
        ess(np.array([0.5, 0.2]))


def test_systematic_identity_grid():
    assert list(systematic_resample(np.full(4, 0.25), 4, 0.0)) == [0, 1, 2, 3]


def test_systematic_degenerate():
    for u in (0.0, 0.3, 0.99):
        assert list(systematic_resample(np.array([1.0, 0.0, 0.0]), 3, u)) == [0, 0, 0]


def test_systematic_grid_walk():
    # grid {0.125, 0.625} against cumulative (0.5, 1.0)
    assert list(systematic_resample(np.array([0.5, 0.5]), 2, 0.25)) == [0, 1]


def test_systematic_output_sorted_and_sized():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.dirichlet(np.ones(7))
        idx = systematic_resample(w, 12, float(rng.random()))
        assert len(idx) == 12
        assert np.all(np.diff(idx) >= 0)


def test_systematic_unbiased_offspring_counts():
    w = np.array([0.55, 0.03, 0.22, 0.20])
    n = len(w)
    counts = np.zeros(n)
    rng = np.random.default_rng(42)
    reps = 100_000
    us = rng.random(reps)
    for u in us:
        counts += np.bincount(systematic_resample(w, n, float(u)), minlength=n)
    assert np.allclose(counts / reps, n * w, rtol=0.01)


def test_policy_validation():
    with pytest.raises(ContractError):
        ResamplePolicy(threshold=0.0)
    with pytest.raises(ContractError):
        ResamplePolicy(scheme="residual")


def _lg_setup(n=50, seed=0):
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.8, var_eta=0.5, var_eps=1.0)
    traj = simulate_dgp(model, theta, n, seed=seed)
    return model, theta, traj.y, kalman_loglik(model, theta, traj.y)


def test_bootstrap_increments_and_positivity():
    model, theta, y, _ = _lg_setup()
    est = bootstrap_loglik(model, theta, y, 64, seed=1)
    assert abs(est.loglik - est.increments.sum()) < 1e-12
    assert np.all(np.isfinite(est.increments))
    assert est.ess_path.min() >= 1.0


def test_bootstrap_deterministic_given_seed():
    model, theta, y, _ = _lg_setup()
    a = bootstrap_loglik(model, theta, y, 64, seed=5)
    b = bootstrap_loglik(model, theta, y, 64, seed=5)
    assert a.loglik == b.loglik


@pytest.mark.parametrize("filter_fn", [bootstrap_loglik, apf0_loglik, sisr2_loglik])
def test_filters_near_kalman(filter_fn):
    model, theta, y, ref = _lg_setup(n=60, seed=2)
    est = filter_fn(model, theta, y, 3000, seed=3)
    assert abs(est.loglik - ref) < 0.5


@pytest.mark.parametrize("filter_fn", [bootstrap_loglik, apf0_loglik, sisr2_loglik])
def test_filters_unbiased_ratio(filter_fn):
    # mean(L_hat / L_kalman) within 3 MC standard errors of 1
    model, theta, y, ref = _lg_setup(n=30, seed=4)
    reps = 3000
    ratios = np.empty(reps)
    for r in range(reps):
        ratios[r] = math.exp(filter_fn(model, theta, y, 24, seed=1000 + r).loglik - ref)
    z = (ratios.mean() - 1.0) / (ratios.std(ddof=1) / math.sqrt(reps))
    assert abs(z) < 3.0, z


def test_apf_reduces_to_bootstrap_for_flat_lookahead():
    # with var_eps huge the lookahead p(y | mean) is nearly flat; exact
    # equality needs an exactly constant measurement, so compare against a
    # model whose measurement ignores the state via a huge noise variance
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.5, var_eta=1e-12, var_eps=1.0)
    # with var_eta ~ 0 all particles coincide: lookahead constant across them
    traj = simulate_dgp(model, theta, 40, seed=6)
    a = bootstrap_loglik(model, theta, traj.y, 32, seed=9)
    b = apf0_loglik(model, theta, traj.y, 32, seed=9)
    assert a.loglik == pytest.approx(b.loglik, abs=1e-9)


def test_deterministic_state_model_zero_variance():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.5, var_eta=1e-300, var_eps=1.0)
    traj = simulate_dgp(model, theta, 20, seed=8)
    vals = [bootstrap_loglik(model, theta, traj.y, 16, seed=s).loglik for s in range(5)]
    assert np.ptp(vals) < 1e-6


def test_sisr2_rejects_t_state_noise():
    model, theta = get_model("univariate-sv-t")
    with pytest.raises(ContractError):
        sisr2_loglik(model, theta, np.zeros((5, 1)), 8, seed=0)


def test_sisr2_newton_one_step_on_linear_gaussian():
    # quadratic log-target: proposal equals the exact conditional, so the
    # per-particle weight is p(y_t | x_{t-1}), constant across draws of x_t
    model, theta, y, ref = _lg_setup(n=40, seed=10)
    est = sisr2_loglik(model, theta, y, 512, seed=11)
    assert est.diagnostics["newton_fallbacks"] == 0
    # conditionally optimal proposal: weights depend only on ancestors, so
    # the estimate is close to the Kalman value even with few particles
    assert abs(est.loglik - ref) < 0.2


def test_sisr2_on_univariate_sv_runs():
    model, theta = get_model("univariate-sv")
    traj = simulate_dgp(model, theta, 100, seed=12)
    est = sisr2_loglik(model, theta, traj.y, 64, seed=13)
    assert np.isfinite(est.loglik)


def test_resample_reset_weights_inside_filter():
    model, theta, y, _ = _lg_setup(n=80, seed=14)
    est = bootstrap_loglik(model, theta, y, 32, ResamplePolicy(threshold=1.0), seed=15)
    # threshold 1.0 forces resampling whenever weights are not exactly uniform
    assert est.resample_count >= 78
