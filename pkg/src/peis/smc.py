"""Baseline particle filters: bootstrap, zero-order auxiliary, and a
second-order Taylor (Laplace) proposal filter, all with systematic
resampling triggered by the effective sample size.

The three filters share one auxiliary-particle-filter skeleton. At the start
of each period the resampling weights are W * lookahead; when their effective
sample size falls strictly below ``threshold * N`` the particles are
resampled systematically and the likelihood increment switches to the
two-factor form (sum of stored lookahead weights) * (sum of new weights),
which keeps the estimator unbiased for any positive lookahead. The bootstrap
filter is the special case lookahead = 1.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .errors import ContractError, DegeneracyError
from .models import LOG_2PI, StateSpaceModel


@dataclass(frozen=True)
class ResamplePolicy:
    scheme: str = "systematic"
    threshold: float = 0.5

    def __post_init__(self):
        if self.scheme != "systematic":
            raise ContractError(f"unsupported resampling scheme {self.scheme!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ContractError("threshold must lie in (0, 1]")


@dataclass
class ParticleSystem:
    """One period's particles, weights, and degeneracy bookkeeping."""

    particles: np.ndarray  # (N, m)
    log_w: np.ndarray  # raw log weights (N,)
    W: np.ndarray  # normalized weights (N,)
    ess: float
    lam: np.ndarray | None = None  # (N, m) Student's-t mixing slots


@dataclass
class LikEstimate:
    """Per-period increments, their total, and run diagnostics."""

    increments: np.ndarray  # (n,) log p̂(y_t | y_{1:t-1})
    loglik: float
    resample_count: int
    seconds: float
    ess_path: np.ndarray  # per-period (forward) ESS used for the trigger
    diagnostics: dict = field(default_factory=dict)


def _logsumexp(a: np.ndarray) -> float:
    mx = np.max(a)
    if not np.isfinite(mx):
        return float(mx)
    return float(mx + math.log(np.exp(a - mx).sum()))


def ess(W: np.ndarray) -> float:
    """Effective sample size 1 / sum(W_i^2) of normalized weights."""
    W = np.asarray(W, dtype=float)
    if abs(W.sum() - 1.0) > 1e-8 or np.any(W < 0):
        raise ContractError("weights must be normalized and non-negative")
    return float(1.0 / np.sum(W * W))


def systematic_resample(W: np.ndarray, n_out: int, u: float) -> np.ndarray:
    """Systematic resampling: indices hit by the grid (u + i)/n_out, sorted."""
    W = np.asarray(W, dtype=float)
    if abs(W.sum() - 1.0) > 1e-8 or np.any(W < 0):
        raise ContractError("weights must be normalized and non-negative")
    if n_out < 1:
        raise ContractError("n_out must be >= 1")
    if not 0.0 <= u < 1.0:
        raise ContractError("u must lie in [0, 1)")
    grid = (u + np.arange(n_out)) / n_out
    cdf = np.cumsum(W)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, grid, side="right").astype(np.intp)


def _normalize_log(log_w: np.ndarray, t: int):
    mx = np.max(log_w)
    if not np.isfinite(mx):
        raise DegeneracyError(t, f"all particle weights degenerate at t={t}")
    shifted = np.exp(log_w - mx)
    total = shifted.sum()
    logsum = mx + math.log(total)
    return log_w - logsum, shifted / total, logsum


def _ess_of(W: np.ndarray) -> float:
    return float(1.0 / np.sum(W * W))


def _draw_lambda_prior(rng, nu_eta: float, size) -> np.ndarray:
    a = nu_eta / 2.0
    return a / rng.gamma(a, size=size)


def _filter_loglik(model, theta, y, N, policy, seed, proposal: str) -> LikEstimate:
    """Shared APF skeleton; ``proposal`` in {"transition", "laplace"} with the
    zero-order lookahead enabled for ``proposal == "transition+apf"``."""
    t_start = time.perf_counter()
    model.validate_params(theta)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != model.obs_dim:
        y = y.reshape(-1, model.obs_dim)
    n = y.shape[0]
    if N < 2:
        raise ContractError("N must be >= 2")
    use_lookahead = proposal == "transition+apf"
    laplace = proposal == "laplace"
    nu_eta = model.state_noise_dof(theta)
    rng = substream(seed, "pf")
    m = model.m

    increments = np.empty(n)
    ess_path = np.empty(n)
    resample_count = 0
    fallbacks = 0

    # t = 1: propagate from the stationary initial distribution
    a1, p1 = model.initial_mean_var(theta)
    if laplace:
        x, log_q, nf = _laplace_propose(
            model, theta, y[0], np.broadcast_to(a1, (N, m)),
            np.broadcast_to(p1, (N, m)), rng,
        )
        fallbacks += nf
        log_p = _diag_norm_logpdf(x, a1, p1)
        log_w = model.log_meas(theta, y[0], model.signal(x)) + log_p - log_q - math.log(N)
    else:
        x = a1 + rng.standard_normal((N, m)) * np.sqrt(p1)
        log_w = model.log_meas(theta, y[0], model.signal(x)) - math.log(N)
    log_W, W, logsum = _normalize_log(log_w, 1)
    increments[0] = logsum
    ess_path[0] = _ess_of(W)

    for j in range(1, n):
        t = j + 1
        y_prev = y[j - 1]
        # resampling weights: W * lookahead
        if use_lookahead:
            mean_prev = model.transition_mean_var(
                theta, t, x, y_prev=y_prev,
                lam=np.ones((N, m)) if nu_eta is not None else None,
            )[0]
            log_la = model.log_meas(theta, y[j], model.signal(mean_prev))
        else:
            log_la = np.zeros(N)
        log_wplus = log_W + log_la
        logsum_plus = _logsumexp(log_wplus)
        W_plus = np.exp(log_wplus - logsum_plus)
        ess_path[j] = _ess_of(W_plus)

        resampled = ess_path[j] / N < policy.threshold
        if resampled:
            resample_count += 1
            idx = systematic_resample(W_plus, N, float(rng.random()))
            x = x[idx]
            log_la = log_la[idx]
            log_W = np.full(N, -math.log(N))

        # propagate
        if nu_eta is not None:
            lam = _draw_lambda_prior(rng, nu_eta, (N, m))
        else:
            lam = None
        F, var = model.transition_mean_var(theta, t, x, y_prev=y_prev, lam=lam)
        if laplace:
            x, log_q, nf = _laplace_propose(model, theta, y[j], F, var, rng)
            fallbacks += nf
            log_p = _diag_norm_logpdf(x, F, var)
            log_ratio = model.log_meas(theta, y[j], model.signal(x)) + log_p - log_q
        else:
            x = F + rng.standard_normal((N, m)) * np.sqrt(var)
            log_ratio = model.log_meas(theta, y[j], model.signal(x))

        log_w = log_W + log_ratio
        if resampled:
            log_w = log_w - log_la
            # two-factor increment: (sum of stored w+) * (sum of new w)
            increments[j] = logsum_plus + _logsumexp(log_w)
        else:
            increments[j] = _logsumexp(log_w)
        if not np.isfinite(increments[j]):
            raise DegeneracyError(t)
        log_W, W, _ = _normalize_log(log_w, t)

    total = float(increments.sum())
    diag = {"newton_fallbacks": fallbacks} if laplace else {}
    return LikEstimate(
        increments=increments,
        loglik=total,
        resample_count=resample_count,
        seconds=time.perf_counter() - t_start,
        ess_path=ess_path,
        diagnostics=diag,
    )


def _diag_norm_logpdf(x, mean, var):
    r = x - mean
    return -0.5 * np.sum(LOG_2PI + np.log(var) + r * r / var, axis=-1)


def _laplace_propose(model, theta, y_t, F, var, rng, max_steps=20, tol=1e-8):
    """Newton mode-and-curvature Gaussian proposal for p(y|x) p(x|x_prev).

    Starts at the transition mean; particles whose negative Hessian is not
    positive definite fall back to the transition proposal. Returns draws and
    their proposal log density.
    """
    N, m = F.shape
    Z = model.Z
    x = F.copy()
    obj = None
    for _ in range(max_steps):
        g_s, h_s = model.meas_grad_hess(theta, y_t, x @ Z.T)
        grad = g_s @ Z - (x - F) / var
        if np.max(np.abs(grad)) < tol:
            break
        hess = np.einsum("ji,bjk,kl->bil", Z, h_s, Z)
        hess[:, np.arange(m), np.arange(m)] -= 1.0 / var
        try:
            step = np.linalg.solve(-hess, grad[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        new_x = x + step
        new_obj = model.log_meas(theta, y_t, new_x @ Z.T) + _diag_norm_logpdf(new_x, F, var)
        if obj is None:
            obj = model.log_meas(theta, y_t, x @ Z.T) + _diag_norm_logpdf(x, F, var)
        # backtrack particles whose objective did not improve
        for _ in range(10):
            bad = new_obj < obj - 1e-12
            if not np.any(bad):
                break
            step[bad] *= 0.5
            new_x = x + step
            new_obj = model.log_meas(theta, y_t, new_x @ Z.T) + _diag_norm_logpdf(new_x, F, var)
        x, obj = new_x, new_obj

    g_s, h_s = model.meas_grad_hess(theta, y_t, x @ Z.T)
    prec = -np.einsum("ji,bjk,kl->bil", Z, h_s, Z)
    prec[:, np.arange(m), np.arange(m)] += 1.0 / var

    # per-particle concavity check via fallbacks to the transition proposal
    try:
        chol = np.linalg.cholesky(prec)
        ok = np.ones(N, dtype=bool)
    except np.linalg.LinAlgError:
        ok = np.array([_is_spd(prec[i]) for i in range(N)])
        chol = np.empty_like(prec)
        chol[ok] = np.linalg.cholesky(prec[ok])

    z = rng.standard_normal((N, m))
    draws = np.empty((N, m))
    log_q = np.empty(N)
    if np.any(ok):
        # x = mode + chol(prec)^{-T} z has covariance prec^{-1}
        sol = np.linalg.solve(np.swapaxes(chol[ok], 1, 2), z[ok][..., None])[..., 0]
        draws[ok] = x[ok] + sol
        logdet = 2.0 * np.log(np.diagonal(chol[ok], axis1=1, axis2=2)).sum(axis=1)
        log_q[ok] = -0.5 * (m * LOG_2PI - logdet) - 0.5 * (z[ok] ** 2).sum(axis=1)
    if np.any(~ok):
        draws[~ok] = F[~ok] + z[~ok] * np.sqrt(var[~ok])
        log_q[~ok] = _diag_norm_logpdf(draws[~ok], F[~ok], var[~ok])
    return draws, log_q, int(np.sum(~ok))


def _is_spd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


def bootstrap_loglik(
    model: StateSpaceModel, theta, y, N: int,
    policy: ResamplePolicy | None = None, seed: int = 0,
) -> LikEstimate:
    """Bootstrap filter: transition proposal, ESS-triggered systematic resampling."""
    return _filter_loglik(model, theta, y, N, policy or ResamplePolicy(), seed, "transition")


def apf0_loglik(
    model: StateSpaceModel, theta, y, N: int,
    policy: ResamplePolicy | None = None, seed: int = 0,
) -> LikEstimate:
    """Zero-order auxiliary particle filter: resampling weights
    W * p(y_t | mean of x_t given x_{t-1}), transition proposal."""
    return _filter_loglik(model, theta, y, N, policy or ResamplePolicy(), seed, "transition+apf")


def sisr2_loglik(
    model: StateSpaceModel, theta, y, N: int,
    policy: ResamplePolicy | None = None, seed: int = 0,
) -> LikEstimate:
    """SISR with a Gaussian proposal from a second-order expansion of
    p(y_t|x_t) p(x_t|x_{t-1}) around its mode (Gaussian state noise only)."""
    if model.state_noise != "gaussian":
        raise ContractError("sisr2 requires Gaussian state noise")
    return _filter_loglik(model, theta, y, N, policy or ResamplePolicy(), seed, "laplace")
