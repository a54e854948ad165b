"""Particle EIS: the fitted sequential importance density run inside an
auxiliary particle filter with forward resampling weights.

The forward weight of particle i after period t is
w+_i = W_i * chi(x_t^i; a_{t+1}), where chi is the integration constant of
the next period's kernel; resampling triggers on the forward effective
sample size and the likelihood increment then takes the two-factor form
(sum w+_{t-1}) (sum w_t). With the resampling threshold disabled the engine
reduces exactly to plain importance sampling, which is how the EIS
log-likelihood estimator is computed; both estimators therefore share every
code path and random draw.

For Student's-t state noise the mixing variables of period t+1 are pre-drawn
at the end of period t and carried as part of the particle, so the look-ahead
constant conditions on the realized pair (x_t, lambda_{t+1}) and the filter
remains a standard auxiliary particle filter on the augmented chain.

Per period, randomness is consumed in a fixed order: the resampling uniform
(only on resampling events), the propagation normals, then the mixing
pre-draws. Antithetic mode draws N/2 normals and mirrors them; resampling
then selects N/2 ancestors and duplicates each.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .eis import EisParams, draw_mixing, kernel_tilt, mixing_logratio, period_kernel
from .errors import ContractError, DegeneracyError
from .models import StateSpaceModel
from .smc import LikEstimate, _logsumexp, systematic_resample


@dataclass(frozen=True)
class PeisConfig:
    n_particles: int
    threshold: float = 0.9
    antithetic: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ContractError("threshold must lie in (0, 1]")
        if self.antithetic and self.n_particles % 2:
            raise ContractError("antithetic mode needs an even particle count")
        if self.n_particles < 2:
            raise ContractError("need at least two particles")


@dataclass
class ForwardState:
    """Forward (look-ahead) weights of one period."""

    log_wplus: np.ndarray  # raw, (N,)
    W_plus: np.ndarray  # normalized, (N,)
    ess_plus: float


def forward_weights(W: np.ndarray, log_chi: np.ndarray) -> ForwardState:
    """Combine normalized weights with per-particle log chi values."""
    W = np.asarray(W, dtype=float)
    log_chi = np.asarray(log_chi, dtype=float)
    if abs(W.sum() - 1.0) > 1e-8 or np.any(W < 0):
        raise ContractError("weights must be normalized and non-negative")
    if not np.all(np.isfinite(log_chi)):
        raise ContractError("log_chi must be finite")
    with np.errstate(divide="ignore"):
        log_wplus = np.log(W) + log_chi
    norm = _logsumexp(log_wplus)
    if not np.isfinite(norm):
        raise DegeneracyError(-1, "all forward weights vanished")
    W_plus = np.exp(log_wplus - norm)
    return ForwardState(log_wplus=log_wplus, W_plus=W_plus, ess_plus=float(1.0 / (W_plus**2).sum()))


def _check_params(model, params: EisParams, n: int):
    if params.n != n:
        raise ContractError(f"params fitted for n={params.n}, data has n={n}")
    if params.b.shape[1] != model.pk:
        raise ContractError("params kernel dimension does not match the model")


def _engine(
    model: StateSpaceModel, theta, y, params: EisParams,
    N: int, threshold: float | None, antithetic: bool, seed: int,
) -> LikEstimate:
    t_start = time.perf_counter()
    model.validate_params(theta)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != model.obs_dim:
        y = y.reshape(-1, model.obs_dim)
    n = y.shape[0]
    _check_params(model, params, n)
    if N < 2:
        raise ContractError("N must be >= 2")
    if antithetic and N % 2:
        raise ContractError("antithetic mode needs an even particle count")
    m = model.m
    nu_eta = model.state_noise_dof(theta)
    t_state = nu_eta is not None
    full_mode = params.alpha is not None
    rng = substream(seed, "peis")

    def draw_xi() -> np.ndarray:
        if antithetic:
            half = rng.standard_normal((N // 2, m))
            return np.concatenate([half, -half], axis=0)
        return rng.standard_normal((N, m))

    def predraw_mixing(j_next: int) -> np.ndarray | None:
        """lambda for the transition into period j_next (0-based array row)."""
        if not t_state:
            return None
        if full_mode:
            return draw_mixing(rng, nu_eta, params.alpha[j_next], params.beta[j_next], (N, m))
        return draw_mixing(rng, nu_eta, 0.0, 0.0, (N, m))

    increments = np.empty(n)
    ess_path = np.empty(n)
    resample_count = 0

    Zk = model.Zk

    # period 1
    pk = period_kernel(
        model, theta, 1, params.b[0], params.C[0], params.scale(0), None, None, None, n_batch=N
    )
    x = pk.draw(draw_xi())
    log_w = (
        model.log_meas(theta, y[0], model.signal(x))
        - kernel_tilt(x @ Zk.T, params.b[0], params.C[0], params.scale(0))
        - pk.log_delta
    )
    norm = _logsumexp(log_w)
    if not np.isfinite(norm):
        raise DegeneracyError(1)
    increments[0] = norm - math.log(N)
    log_W = log_w - norm

    def lookahead(j: int, x: np.ndarray):
        """Kernel of period j+1 (0-based row j+1) at the current particles."""
        lam_next = predraw_mixing(j + 1)
        pk_next = period_kernel(
            model, theta, j + 2, params.b[j + 1], params.C[j + 1], params.scale(j + 1),
            x, lam_next, y[j], n_batch=N,
        )
        return lam_next, pk_next, -pk_next.log_delta

    lam_next, pk_next, log_chi = lookahead(0, x)
    log_wplus = log_W + log_chi
    logsum_plus = _logsumexp(log_wplus)
    W_plus = np.exp(log_wplus - logsum_plus)
    ess_plus = float(1.0 / (W_plus**2).sum())
    ess_path[0] = ess_plus

    for j in range(1, n):
        t = j + 1
        resampled = threshold is not None and ess_plus / N < threshold
        if resampled:
            resample_count += 1
            u = float(rng.random())
            if antithetic:
                idx = systematic_resample(W_plus, N // 2, u)
                idx = np.concatenate([idx, idx])
            else:
                idx = systematic_resample(W_plus, N, u)
            x = x[idx]
            pk_next = pk_next.take(idx)
            if lam_next is not None:
                lam_next = lam_next[idx]
            log_W = np.full(N, -math.log(N))

        lam_cur = lam_next
        x = pk_next.draw(draw_xi())
        log_ratio = model.log_meas(theta, y[j], model.signal(x)) - kernel_tilt(
            x @ Zk.T, params.b[j], params.C[j], params.scale(j)
        )
        if full_mode:
            log_ratio = log_ratio + mixing_logratio(lam_cur, params.alpha[j], params.beta[j], nu_eta)
        log_w = log_W + log_ratio
        if not resampled:
            log_w = log_w - pk_next.log_delta  # equals + log chi_t
        norm = _logsumexp(log_w)
        if not np.isfinite(norm):
            raise DegeneracyError(t)
        increments[j] = norm + (logsum_plus if resampled else 0.0)
        log_W = log_w - norm

        if j < n - 1:
            lam_next, pk_next, log_chi = lookahead(j, x)
        else:
            log_chi = np.zeros(N)  # chi(x_n; a_{n+1}) = 1
        log_wplus = log_W + log_chi
        logsum_plus = _logsumexp(log_wplus)
        W_plus = np.exp(log_wplus - logsum_plus)
        ess_plus = float(1.0 / (W_plus**2).sum())
        ess_path[j] = ess_plus

    return LikEstimate(
        increments=increments,
        loglik=float(increments.sum()),
        resample_count=resample_count,
        seconds=time.perf_counter() - t_start,
        ess_path=ess_path,
    )


def peis_loglik(
    model: StateSpaceModel, theta, y, params: EisParams,
    cfg: PeisConfig, seed: int = 0,
) -> LikEstimate:
    """Unbiased log-likelihood estimate by particle EIS."""
    return _engine(model, theta, y, params, cfg.n_particles, cfg.threshold, cfg.antithetic, seed)


def eis_loglik(
    model: StateSpaceModel, theta, y, params: EisParams,
    N: int, antithetic: bool = True, seed: int = 0,
) -> LikEstimate:
    """Plain importance-sampling log-likelihood estimate (no resampling)."""
    return _engine(model, theta, y, params, N, None, antithetic, seed)


def unbiasedness_harness(estimator, R: int, log_ref: float) -> float:
    """z-score of mean(L_hat / L_ref) - 1 over ``R`` replications.

    ``estimator`` maps a replication index to a log-likelihood estimate;
    ``log_ref`` is the exact (or high-precision) log likelihood.
    """
    ratios = np.empty(R)
    for r in range(R):
        ratios[r] = math.exp(float(estimator(r)) - log_ref)
    dev = ratios.mean() - 1.0
    se = ratios.std(ddof=1) / math.sqrt(R)
    if se == 0.0:
        return 0.0
    return float(dev / se)
