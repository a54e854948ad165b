"""Built-in headless property suite behind ``peis selftest``.

Each check prints one pass/fail line; the runner returns a nonzero exit
code if any check fails. The checks mirror the core invariants: exactness
on the linear-Gaussian oracle, the chi-delta duality, resampling
unbiasedness, estimator determinism, transform consistency, and the
closed-form diagnostics.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

from .bayes import (
    bivariate_sv_param_space,
    log_jacobian,
    optimal_particles,
    transform,
    transform_inverse,
)
from .eis import EisConfig, fit_eis, kernel_moments, log_phi, natural_params
from .kalman import kalman_loglik
from .models import LinGaussParams, get_model, linear_gaussian, simulate_dgp
from .particle import PeisConfig, eis_loglik, forward_weights, peis_loglik
from .smc import ess, systematic_resample


def _check_determinism():
    model, theta = get_model("bivariate-sv")
    a = simulate_dgp(model, theta, 50, seed=7)
    b = simulate_dgp(model, theta, 50, seed=7)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def _check_lg_exactness():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.9, var_eta=1.0, var_eps=0.5)
    traj = simulate_dgp(model, theta, 100, seed=3)
    ref = kalman_loglik(model, theta, traj.y)
    params = fit_eis(model, theta, traj.y, EisConfig(s=20), seed=1)
    est = eis_loglik(model, theta, traj.y, params, N=8, seed=5)
    assert abs(est.loglik - ref) < 1e-6, f"|delta| = {abs(est.loglik - ref)}"


def _check_peis_reduces_to_eis():
    model, theta = get_model("univariate-sv")
    traj = simulate_dgp(model, theta, 60, seed=9)
    params = fit_eis(model, theta, traj.y, EisConfig(), seed=2)
    a = eis_loglik(model, theta, traj.y, params, N=16, seed=11)
    b = peis_loglik(model, theta, traj.y, params, PeisConfig(16, threshold=1e-12), seed=11)
    assert a.loglik == b.loglik and b.resample_count == 0


def _check_resampling():
    assert list(systematic_resample(np.full(4, 0.25), 4, 0.0)) == [0, 1, 2, 3]
    assert list(systematic_resample(np.array([1.0, 0.0, 0.0]), 3, 0.7)) == [0, 0, 0]
    W = np.array([0.62, 0.05, 0.23, 0.10])
    counts = np.zeros(4)
    rng = np.random.default_rng(0)
    reps = 20000
    for _ in range(reps):
        idx = systematic_resample(W, 4, float(rng.random()))
        counts += np.bincount(idx, minlength=4)
    assert np.allclose(counts / reps, 4 * W, rtol=0.01)


def _check_ess():
    assert ess(np.full(8, 0.125)) == 8.0
    one_hot = np.zeros(4)
    one_hot[2] = 1.0
    assert ess(one_hot) == 1.0
    fs = forward_weights(np.array([0.5, 0.5]), np.log(np.array([3.0, 1.0])))
    assert np.allclose(fs.W_plus, [0.75, 0.25]) and abs(fs.ess_plus - 1.6) < 1e-12


def _check_chi_delta_duality():
    model = linear_gaussian()
    theta = LinGaussParams(phi=0.6, var_eta=0.8, var_eps=1.0)
    params = natural_params(3, model)
    params.b[1] = 0.7
    params.C[1, 0, 0] = 1.3
    km = kernel_moments(model, theta, 2, params, x_prev=[0.4])
    val, _ = quad(
        lambda x: math.exp(0.7 * x - 0.65 * x * x)
        * math.exp(-0.5 * (x - 0.6 * 0.4) ** 2 / 0.8)
        / math.sqrt(2 * math.pi * 0.8),
        -12, 12,
    )
    assert abs(math.exp(-km.log_delta) - val) < 1e-6


def _check_log_phi():
    assert abs(log_phi(0.0, 0.0, 10.0)) < 1e-12
    assert abs(log_phi(1.0, 0.0, 10.0) - math.log(0.8)) < 1e-12
    a, b, nu = 0.6, -0.4, 8.0
    dens = lambda lam: (nu / 2) ** (nu / 2) / math.gamma(nu / 2) * lam ** (-nu / 2 - 1) * math.exp(-nu / (2 * lam))
    val, _ = quad(lambda lam: lam**a * math.exp(b / lam) * dens(lam), 0, 400, limit=200)
    assert abs(val - math.exp(-log_phi(a, b, nu))) < 1e-6


def _check_transforms():
    space = bivariate_sv_param_space()
    vec = np.array([0.1, -0.2, 1.0, 0.98, 0.9, 0.95, 0.02, 0.05, 0.002])
    v = transform(space, vec)
    back = transform_inverse(space, v)
    assert np.allclose(back, vec, atol=1e-12)
    # uniform(0,1) prior pushed through the logit transform integrates to 1
    val, _ = quad(lambda u: math.exp(-np.logaddexp(0, -u) - np.logaddexp(0, u)), -40, 40)
    assert abs(val - 1.0) < 1e-6


def _check_optimal_n():
    assert abs(optimal_particles(158.2, 0.567, 0.00188) - 310) < 2
    assert abs(optimal_particles(5.5, 0.567, 0.00205) - 42) < 2
    assert optimal_particles(7.5, 0.0, 1.0) == 7.5


def _check_increment_decomposition():
    model, theta = get_model("bivariate-sv")
    traj = simulate_dgp(model, theta, 80, seed=21)
    params = fit_eis(model, theta, traj.y, EisConfig(s=32, max_iter=5), seed=4)
    est = peis_loglik(model, theta, traj.y, params, PeisConfig(32, threshold=0.95), seed=3)
    assert abs(est.loglik - est.increments.sum()) < 1e-12


CHECKS = [
    ("determinism", _check_determinism),
    ("linear-gaussian exactness", _check_lg_exactness),
    ("particle-eis reduces to plain is", _check_peis_reduces_to_eis),
    ("systematic resampling", _check_resampling),
    ("ess and forward weights", _check_ess),
    ("chi-delta duality", _check_chi_delta_duality),
    ("mixing normalizer", _check_log_phi),
    ("parameter transforms", _check_transforms),
    ("optimal particle count", _check_optimal_n),
    ("increment decomposition", _check_increment_decomposition),
]


def run_selftest(verbose: bool = True) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
            line = f"PASS  {name}"
        except Exception as exc:  # noqa: BLE001 - report any failure
            line = f"FAIL  {name}: {exc}"
            failures += 1
        if verbose:
            print(line)
    if verbose:
        print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 1 if failures else 0
