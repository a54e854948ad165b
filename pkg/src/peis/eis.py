"""Efficient importance sampling: sequential Gaussian kernels fitted by
backward least-squares regressions.

The period-t importance density is

    q(x_t | x_{t-1}, lambda_t, y_{1:n})
        = delta_t(x_{t-1}, lambda_t)
          * exp(b_t' Z x_t - 0.5 x_t' Z' C_t Z x_t) * p(x_t | x_{t-1}, lambda_t),

a Gaussian with covariance V_t = [(Lambda_t Q Lambda_t)^{-1} + Z' C_t Z]^{-1}
and mean mu_t = V_t [Z' b_t + (Lambda_t Q Lambda_t)^{-1} F(x_{t-1})]. The
normalizer delta_t is the reciprocal of the kernel integration constant
chi(x_{t-1}; a_t) = int k(x_t, x_{t-1}; a_t) dx_t, so log chi = -log delta.

For Student's-t state noise, the inverse-gamma mixing variables are given
their own tilted proposal q(lambda_t) with components
IG(nu/2 - alpha_{j,t}, nu/2 - beta_{j,t}); the fit first converges with
q(lambda) = p(lambda) ("partial" mode) and then runs one sweep of the
extended regressions that also estimate alpha and beta ("full" mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
from scipy.linalg import get_lapack_funcs
from scipy.special import gammaln

from ._rng import substream
from .errors import ContractError, KernelDegeneracyError, SingularDesignError
from .models import StateSpaceModel

_SPD_TOL = 1e-12
_dtrtri = get_lapack_funcs("trtri", dtype=np.float64)
_dgelsy = get_lapack_funcs("gelsy", dtype=np.float64)
_dgelsy_lwork = get_lapack_funcs("gelsy_lwork", dtype=np.float64)


@dataclass
class EisConfig:
    """Fit settings; ``s`` is the number of common-random-number trajectories."""

    s: int = 50
    max_iter: int = 10
    rel_tol: float = 1e-3
    warm_iters: int = 3  # annealing length: zeta_k = min(1, k / warm_iters)
    leverage_warm: int = 2  # iterations with leverage coefficients forced to zero
    mode: str = "partial"  # "partial" | "full"

    def __post_init__(self):
        if self.mode not in ("partial", "full"):
            raise ContractError(f"unknown EIS mode {self.mode!r}")
        if self.max_iter < 0 or self.warm_iters < 1:
            raise ContractError("max_iter must be >= 0 and warm_iters >= 1")


@dataclass
class EisParams:
    """Per-period importance parameters.

    ``alpha``/``beta`` are present only for full-mode Student's-t fits; row t
    tilts the mixing proposal of the transition into period t+1 (row 0 is
    unused). ``log_scale`` rescales each kernel by exp(log_scale[t]); the
    estimators are invariant to it and it exists for diagnostics only.
    """

    b: np.ndarray  # (n, p)
    C: np.ndarray  # (n, p, p) symmetric
    alpha: np.ndarray | None = None  # (n, m)
    beta: np.ndarray | None = None  # (n, m)
    log_scale: np.ndarray | None = None  # (n,)

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def scale(self, j: int) -> float:
        return 0.0 if self.log_scale is None else float(self.log_scale[j])


@dataclass
class CrnStore:
    """Common random numbers reused across fit iterations."""

    xi: np.ndarray  # (S, n, m)
    lam: np.ndarray | None  # (S, n, m) inverse-gamma draws; row t=0 unused


@dataclass
class KernelMoments:
    mu: np.ndarray  # (m,)
    V: np.ndarray  # (m, m)
    log_delta: float


def natural_params(n: int, model: StateSpaceModel) -> EisParams:
    """The natural-sampler initialization b = 0, C = 0 for all periods."""
    return EisParams(b=np.zeros((n, model.pk)), C=np.zeros((n, model.pk, model.pk)))


# ---------------------------------------------------------------------------
# kernel moments


class PeriodKernel:
    """Batched Gaussian kernel moments for one period.

    ``mu`` is (B, m); ``chol`` is the lower Cholesky factor of V, either a
    shared (m, m) matrix or a per-particle (B, m, m) stack; ``log_delta`` is
    (B,).
    """

    __slots__ = ("mu", "chol", "log_delta", "shared")

    def __init__(self, mu, chol, log_delta, shared):
        self.mu = mu
        self.chol = chol
        self.log_delta = log_delta
        self.shared = shared

    def draw(self, xi: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.mu + xi @ self.chol.T
        return self.mu + np.einsum("bij,bj->bi", self.chol, xi)

    def take(self, idx: np.ndarray) -> "PeriodKernel":
        chol = self.chol if self.shared else self.chol[idx]
        return PeriodKernel(self.mu[idx], chol, self.log_delta[idx], self.shared)


def _chol2_lower(v11, v12, v22):
    """Vectorized 2x2 lower Cholesky from the entries of V."""
    l11 = np.sqrt(v11)
    l21 = v12 / l11
    l22sq = v22 - l21 * l21
    if np.any(l22sq <= 0.0):
        raise np.linalg.LinAlgError("2x2 factorization failed")
    out = np.zeros(v11.shape + (2, 2))
    out[..., 0, 0] = l11
    out[..., 1, 0] = l21
    out[..., 1, 1] = np.sqrt(l22sq)
    return out


def period_kernel(
    model: StateSpaceModel, theta, t: int, b_t, C_t, g_t: float,
    x_prev, lam, y_prev, n_batch: int | None = None,
    need_chol: bool = True, need_delta: bool = True,
) -> PeriodKernel:
    """Moments of the period-``t`` kernel for a batch of conditioning states.

    ``t`` is 1-based; ``t == 1`` uses the stationary initial moments and
    ignores ``x_prev``/``lam`` (``n_batch`` sets the batch size). The
    Cholesky factor and log delta can be skipped when not needed.
    """
    m, p, Z = model.m, model.pk, model.Zk
    if t == 1:
        a1, p1 = model.initial_mean_var(theta)
        B = n_batch if n_batch is not None else 1
        F = np.broadcast_to(a1, (B, m))
        var = np.broadcast_to(p1, (B, m))
        per_particle_var = False
    else:
        x_prev = np.atleast_2d(x_prev)
        F, var = model.transition_mean_var(theta, t, x_prev, y_prev=y_prev, lam=lam)
        per_particle_var = lam is not None

    if p == 1:
        # rank-one precision update: V = D - (c / (1 + c z'Dz)) (Dz)(Dz)'
        z = Z[0]
        c = float(np.asarray(C_t).reshape(-1)[0])
        b0 = float(np.asarray(b_t).reshape(-1)[0])
        Dz = var * z
        zDz = Dz @ z if Dz.ndim == 1 else (Dz * z).sum(axis=-1)
        denom = 1.0 + c * zDz
        if np.any(denom <= _SPD_TOL):
            raise KernelDegeneracyError(t)
        k = c / denom
        r = z * b0 + F / var
        Dzr = (Dz * r).sum(axis=-1)
        mu = var * r - (k * Dzr)[..., None] * Dz
        log_delta = None
        if need_delta:
            mu_r = (mu * r).sum(axis=-1)
            log_delta = np.atleast_1d(
                0.5 * np.log(denom) + 0.5 * (F * F / var).sum(axis=-1) - 0.5 * mu_r - g_t
            )
        shared = not per_particle_var
        chol = None
        if need_chol:
            if shared:
                var0, Dz0, k0 = var[0], Dz[0], k if np.ndim(k) == 0 else k[0]
                V = np.diag(var0) - k0 * np.outer(Dz0, Dz0)
                chol = _chol_dispatch(V[None], t)[0]
            else:
                V = var[..., None] * np.eye(m) - k[..., None, None] * (
                    Dz[..., :, None] * Dz[..., None, :]
                )
                chol = _chol_dispatch(V, t)
        return PeriodKernel(np.atleast_2d(mu), chol, log_delta, shared)

    C_t = np.asarray(C_t, dtype=float)
    if model.zk_identity:
        b_vec = np.asarray(b_t, dtype=float).reshape(p)
        ZCZ = C_t
    else:
        b_vec = Z.T @ np.asarray(b_t, dtype=float).reshape(p)
        ZCZ = Z.T @ C_t @ Z
    if not per_particle_var:
        var0 = var[0]
        P = np.diag(1.0 / var0) + ZCZ
        inv = _spd_inv_small(P)
        if inv is None:
            raise KernelDegeneracyError(t)
        V, logdet_P = inv
        r = b_vec + F / var0
        mu = r @ V
        log_delta = None
        if need_delta:
            log_delta = (
                0.5 * (np.log(var0).sum() + logdet_P)
                + 0.5 * (F * F / var0).sum(axis=-1)
                - 0.5 * (mu * r).sum(axis=-1)
                - g_t
            )
        chol = _chol_small(V, t) if need_chol else None
        return PeriodKernel(mu, chol, log_delta, shared=True)

    # per-particle variances with p > 1
    B = var.shape[0]
    if m == 2:
        # closed-form 2x2 inverse of P = diag(1/var) + ZCZ
        p11 = 1.0 / var[:, 0] + ZCZ[0, 0]
        p22 = 1.0 / var[:, 1] + ZCZ[1, 1]
        p12 = np.broadcast_to(ZCZ[0, 1], (B,))
        det = p11 * p22 - p12 * p12
        if np.any(p11 <= 0.0) or np.any(det <= 0.0):
            raise KernelDegeneracyError(t)
        V = np.empty((B, 2, 2))
        V[:, 0, 0] = p22 / det
        V[:, 1, 1] = p11 / det
        V[:, 0, 1] = V[:, 1, 0] = -p12 / det
        logdet_V = -np.log(det)
        r = b_vec + F / var
        mu = np.einsum("bij,bj->bi", V, r)
        chol = _chol_dispatch(V, t) if need_chol else None
    else:
        P = np.zeros((B, m, m))
        P[:, np.arange(m), np.arange(m)] = 1.0 / var
        P += ZCZ
        try:
            Lp = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise KernelDegeneracyError(t) from None
        eye = np.broadcast_to(np.eye(m), (B, m, m))
        Linv = np.linalg.solve(Lp, eye)
        V = np.swapaxes(Linv, 1, 2) @ Linv
        logdet_V = -2.0 * np.log(np.diagonal(Lp, axis1=1, axis2=2)).sum(axis=1)
        r = b_vec + F / var
        mu = np.einsum("bij,bj->bi", V, r)
        chol = _chol_dispatch(0.5 * (V + np.swapaxes(V, 1, 2)), t) if need_chol else None
    log_delta = None
    if need_delta:
        log_delta = (
            0.5 * (np.log(var).sum(axis=-1) - logdet_V)
            + 0.5 * (F * F / var).sum(axis=-1)
            - 0.5 * (mu * r).sum(axis=-1)
            - g_t
        )
    return PeriodKernel(mu, chol, log_delta, shared=False)


def _spd_inv_small(P: np.ndarray):
    """Inverse and log determinant of a small SPD matrix, or None if not SPD."""
    m = P.shape[0]
    if m == 1:
        a = P[0, 0]
        if a <= 0.0:
            return None
        return np.array([[1.0 / a]]), math.log(a)
    if m == 2:
        a, b, d = P[0, 0], P[0, 1], P[1, 1]
        det = a * d - b * b
        if a <= 0.0 or det <= 0.0:
            return None
        return np.array([[d, -b], [-b, a]]) / det, math.log(det)
    if m == 3:
        a, b, c = P[0, 0], P[0, 1], P[0, 2]
        d, e, f = P[1, 1], P[1, 2], P[2, 2]
        co11 = d * f - e * e
        co12 = c * e - b * f
        co13 = b * e - c * d
        det = a * co11 + b * co12 + c * co13
        if a <= 0.0 or a * d - b * b <= 0.0 or det <= 0.0:
            return None
        V = np.array(
            [
                [co11, co12, co13],
                [co12, a * f - c * c, b * c - a * e],
                [co13, b * c - a * e, a * d - b * b],
            ]
        ) / det
        return V, math.log(det)
    try:
        Lp = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        return None
    Linv, info = _dtrtri(Lp, lower=1)
    if info != 0:
        return None
    return Linv.T @ Linv, 2.0 * np.log(np.diag(Lp)).sum()


def _chol_small(V: np.ndarray, t: int) -> np.ndarray:
    m = V.shape[0]
    if m == 1:
        if V[0, 0] <= 0.0:
            raise KernelDegeneracyError(t)
        return np.array([[math.sqrt(V[0, 0])]])
    if m == 2:
        return _chol_dispatch(V[None], t)[0]
    if m == 3:
        try:
            l11 = math.sqrt(V[0, 0])
            l21 = V[1, 0] / l11
            l31 = V[2, 0] / l11
            l22 = math.sqrt(V[1, 1] - l21 * l21)
            l32 = (V[2, 1] - l31 * l21) / l22
            l33 = math.sqrt(V[2, 2] - l31 * l31 - l32 * l32)
        except (ValueError, ZeroDivisionError):
            raise KernelDegeneracyError(t) from None
        return np.array([[l11, 0.0, 0.0], [l21, l22, 0.0], [l31, l32, l33]])
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise KernelDegeneracyError(t) from None


def _chol_dispatch(V: np.ndarray, t: int) -> np.ndarray:
    m = V.shape[-1]
    try:
        if m == 1:
            if np.any(V[..., 0, 0] <= 0.0):
                raise np.linalg.LinAlgError
            return np.sqrt(V)
        if m == 2:
            return _chol2_lower(V[..., 0, 0], V[..., 1, 0], V[..., 1, 1])
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        raise KernelDegeneracyError(t) from None


def kernel_moments(
    model: StateSpaceModel, theta, t: int, params: EisParams,
    x_prev=None, lam_t=None, y_prev=None,
) -> KernelMoments:
    """Mean, covariance, and log normalizer of the period-``t`` kernel at a
    single conditioning state. ``log chi(x_prev; a_t) = -log_delta``."""
    j = t - 1
    lam = None if lam_t is None else np.asarray(lam_t, dtype=float).reshape(1, model.m)
    pk = period_kernel(
        model, theta, t, params.b[j], params.C[j], params.scale(j),
        None if x_prev is None else np.asarray(x_prev, dtype=float).reshape(1, model.m),
        lam, y_prev, n_batch=1,
    )
    L = pk.chol if pk.shared else pk.chol[0]
    return KernelMoments(mu=pk.mu[0], V=L @ L.T, log_delta=float(pk.log_delta[0]))


def draw_state(
    model: StateSpaceModel, theta, t: int, params: EisParams,
    x_prev, lam_t, xi, y_prev=None,
) -> np.ndarray:
    """Deterministic kernel draw mu_t + L_t xi with L_t = chol(V_t)."""
    xi = np.asarray(xi, dtype=float).reshape(1, model.m)
    if not np.all(np.isfinite(xi)):
        raise ContractError("xi must be finite")
    j = t - 1
    lam = None if lam_t is None else np.asarray(lam_t, dtype=float).reshape(1, model.m)
    pk = period_kernel(
        model, theta, t, params.b[j], params.C[j], params.scale(j),
        None if x_prev is None else np.asarray(x_prev, dtype=float).reshape(1, model.m),
        lam, y_prev, n_batch=1,
    )
    return pk.draw(xi)[0]


def kernel_tilt(sig: np.ndarray, b_t, C_t, g_t: float) -> np.ndarray:
    """log of the kernel tilt exp(b's - 0.5 s'Cs + g) at signals ``sig`` (B, p)."""
    sig = np.atleast_2d(sig)
    quad = np.einsum("bi,ij,bj->b", sig, np.atleast_2d(C_t), sig)
    return sig @ np.asarray(b_t).reshape(-1) - 0.5 * quad + g_t


# ---------------------------------------------------------------------------
# Student's-t mixing machinery


def log_phi(alpha: float, beta: float, nu_eta: float):
    """Log normalizer of the tilted inverse-gamma mixing density.

    q(lambda) = phi * lambda^alpha * exp(beta / lambda) * IG(nu/2, nu/2)
    is IG(nu/2 - alpha, nu/2 - beta); this returns log phi (elementwise)."""
    a = nu_eta / 2.0
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(a - alpha <= 0.0) or np.any(a - beta <= 0.0):
        raise ContractError("log_phi requires nu/2 - alpha > 0 and nu/2 - beta > 0")
    out = gammaln(a) - a * math.log(a) + (a - alpha) * np.log(a - beta) - gammaln(a - alpha)
    return out if out.shape else float(out)


def draw_mixing(rng, nu_eta: float, alpha, beta, size) -> np.ndarray:
    """Draw lambda ~ IG(nu/2 - alpha, nu/2 - beta) elementwise."""
    a = nu_eta / 2.0
    shape = np.broadcast_to(a - np.asarray(alpha, dtype=float), size)
    scale = np.broadcast_to(a - np.asarray(beta, dtype=float), size)
    return scale / rng.gamma(shape)


def mixing_logratio(lam: np.ndarray, alpha, beta, nu_eta: float) -> np.ndarray:
    """log p(lambda) - log q(lambda) summed over components; (B,) for (B, m)."""
    tilt = np.asarray(alpha) * np.log(lam) + np.asarray(beta) / lam
    return -(np.sum(log_phi(alpha, beta, nu_eta)) + tilt.sum(axis=-1))


def ig_logpdf(lam, shape: float, scale: float):
    lam = np.asarray(lam, dtype=float)
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(lam) - scale / lam


# ---------------------------------------------------------------------------
# Algorithm 1: backward least-squares fitting


def draw_crn(model: StateSpaceModel, theta, n: int, s: int, rng) -> CrnStore:
    xi = rng.standard_normal((s, n, model.m))
    nu_eta = model.state_noise_dof(theta)
    lam = None
    if nu_eta is not None:
        lam = np.ones((s, n, model.m))
        a = nu_eta / 2.0
        lam[:, 1:, :] = a / rng.gamma(a, size=(s, n - 1, model.m))
    return CrnStore(xi=xi, lam=lam)


def simulate_fit_paths(
    model: StateSpaceModel, theta, y: np.ndarray, params: EisParams, crn: CrnStore
) -> np.ndarray:
    """Regenerate the S fit trajectories from the current parameters."""
    S, n, m = crn.xi.shape
    X = np.empty((S, n, m))
    x_prev = None
    for j in range(n):
        lam = crn.lam[:, j] if (crn.lam is not None and j > 0) else None
        pk = period_kernel(
            model, theta, j + 1, params.b[j], params.C[j], 0.0,
            x_prev, lam, y[j - 1] if j > 0 else None, n_batch=S, need_delta=False,
        )
        X[:, j] = pk.draw(crn.xi[:, j])
        x_prev = X[:, j]
    return X


def _quad_columns(sig: np.ndarray) -> np.ndarray:
    """Regressors -(1/2)(2 - delta_ij) s_i s_j for i <= j, so that the fitted
    coefficients are directly the entries of the symmetric matrix C."""
    p = sig.shape[-1]
    cols = []
    for i in range(p):
        for j in range(i, p):
            factor = -0.5 if i == j else -1.0
            cols.append(factor * sig[..., i] * sig[..., j])
    return np.stack(cols, axis=-1)


def _sym_from_coefs(coefs: np.ndarray, p: int) -> np.ndarray:
    C = np.zeros((p, p))
    k = 0
    for i in range(p):
        for j in range(i, p):
            C[i, j] = C[j, i] = coefs[k]
            k += 1
    return C


def _psd_clip(C: np.ndarray) -> np.ndarray:
    """Project C onto the positive semidefinite cone.

    Keeping C PSD keeps log chi concave in the lagged state, which stops
    sampling noise in weakly identified directions from amplifying through
    the backward recursion (the multivariate divergence mode of the fit).
    """
    p = C.shape[0]
    if p == 1:
        return np.maximum(C, 0.0)
    if p == 2:
        if C[0, 0] > 0.0 and C[0, 0] * C[1, 1] - C[0, 1] ** 2 > 0.0:
            return C
    elif p == 3:
        det2 = C[0, 0] * C[1, 1] - C[0, 1] ** 2
        if C[0, 0] > 0.0 and det2 > 0.0:
            det3 = (
                C[0, 0] * (C[1, 1] * C[2, 2] - C[1, 2] ** 2)
                - C[0, 1] * (C[0, 1] * C[2, 2] - C[1, 2] * C[0, 2])
                + C[0, 2] * (C[0, 1] * C[1, 2] - C[1, 1] * C[0, 2])
            )
            if det3 > 0.0:
                return C
    w, Q = np.linalg.eigh(C)
    if w[0] >= 0.0:
        return C
    return (Q * np.clip(w, 0.0, None)) @ Q.T


_GELSY_LWORK_CACHE: dict = {}


def _gelsy_work(n_rows: int, n_cols: int) -> int:
    key = (n_rows, n_cols)
    got = _GELSY_LWORK_CACHE.get(key)
    if got is None:
        work, _ = _dgelsy_lwork(n_rows, n_cols, 1, 1e-10)
        got = int(work.real)
        _GELSY_LWORK_CACHE[key] = got
    return got


def _lstsq(A: np.ndarray, dep: np.ndarray, t: int, iteration: int) -> np.ndarray:
    """Pivoted-QR least squares (LAPACK gelsy), minimal overhead."""
    n_rows, n_cols = A.shape
    lwork = _gelsy_work(n_rows, n_cols)
    _, x, _, rank, info = _dgelsy(
        A, dep[:, None], np.zeros(n_cols, dtype=np.int32), 1e-10, lwork
    )
    if info != 0 or rank < n_cols:
        raise SingularDesignError(t, iteration, rank if info == 0 else -1, n_cols)
    return x[:n_cols, 0]


def _backward_pass(
    model, theta, y, X, crn, b, C, zeta, iteration, full, nu_eta
):
    """One backward sweep of the regressions; returns updated parameters.

    The dependent variable at period t is zeta * log p(y_t | x_t) minus
    log delta_{t+1}(x_t, lambda_{t+1}) evaluated at the parameters already
    updated for period t+1 (delta_{n+1} = 1). If the fitted C makes the
    kernel covariance lose positive definiteness at the stored draws, C is
    halved toward the natural sampler up to ten times.
    """
    S, n, m = X.shape
    p = model.pk
    sig = X @ model.Zk.T
    sig_meas = sig if model.Zk is model.Z else X @ model.Z.T
    quad = _quad_columns(sig)
    b_new = np.empty_like(b)
    C_new = np.empty_like(C)
    alpha = np.zeros((n, m))
    beta = np.zeros((n, m))
    n_quad = p * (p + 1) // 2
    n_lam_cols = 2 * m if full else 0
    n_cols = 1 + p + n_quad + n_lam_cols

    log_meas_all = model.log_meas_matrix(theta, y, sig_meas)

    A = np.empty((S, n_cols))
    A[:, 0] = 1.0
    log_delta_next = None
    for j in range(n - 1, -1, -1):
        dep = zeta * log_meas_all[:, j]
        if j < n - 1:
            dep = dep - log_delta_next
        if not np.all(np.isfinite(dep)):
            raise KernelDegeneracyError(j + 1, f"non-finite regression target at t={j + 1}")
        A[:, 1 : 1 + p] = sig[:, j]
        A[:, 1 + p : 1 + p + n_quad] = quad[:, j]
        if full:
            if j < n - 1:
                lam_next = crn.lam[:, j + 1]
                A[:, -n_lam_cols : -m] = np.log(lam_next)
                A[:, -m:] = 1.0 / lam_next
            else:
                A[:, -n_lam_cols:] = 0.0
        coef = _lstsq(A if not (full and j == n - 1) else A[:, : 1 + p + n_quad],
                      dep, j + 1, iteration)
        b_j = coef[1 : 1 + p].copy()
        C_j = _psd_clip(_sym_from_coefs(coef[1 + p : 1 + p + p * (p + 1) // 2], p))
        if full and j < n - 1:
            a_next = coef[-n_lam_cols : -m].copy()
            g_next = coef[-m:].copy()
            # keep the tilted inverse-gamma proper: shrink toward p(lambda)
            margin = 0.02 * nu_eta / 2.0
            for _ in range(60):
                if np.all(nu_eta / 2.0 - a_next > margin) and np.all(
                    nu_eta / 2.0 - g_next > margin
                ):
                    break
                a_next *= 0.5
                g_next *= 0.5
            alpha[j + 1] = a_next
            beta[j + 1] = g_next

        # SPD safeguard, then the delta values consumed by period j-1
        lam_j = crn.lam[:, j] if (crn.lam is not None and j > 0) else None
        x_prev = X[:, j - 1] if j > 0 else None
        y_prev = y[j - 1] if j > 0 else None
        for attempt in range(11):
            try:
                pk = period_kernel(
                    model, theta, j + 1, b_j, C_j, 0.0, x_prev, lam_j, y_prev,
                    n_batch=S, need_chol=False,
                )
                break
            except KernelDegeneracyError:
                if attempt == 10:
                    raise KernelDegeneracyError(j + 1) from None
                C_j = C_j * 0.5
        log_delta_next = pk.log_delta
        b_new[j] = b_j
        C_new[j] = C_j
    return b_new, C_new, alpha, beta


def fit_eis(
    model: StateSpaceModel, theta, y, cfg: EisConfig | None = None, seed: int = 0
) -> EisParams:
    """Fit the importance parameters by iterated backward regressions.

    Trajectories are regenerated from the current parameters with common
    random numbers each iteration; the measurement term is annealed by
    zeta_k = min(1, k / warm_iters); leverage coefficients are zeroed for the
    first ``leverage_warm`` iterations. Full mode first converges in partial
    mode and then runs exactly one sweep of the extended regressions.
    """
    cfg = cfg or EisConfig()
    model.validate_params(theta)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != model.obs_dim:
        y = y.reshape(-1, model.obs_dim)
    if not np.all(np.isfinite(y)):
        raise ContractError("observations must be finite")
    n = y.shape[0]
    m, p = model.m, model.pk
    if cfg.s < p * (p + 3) // 2 + 2 * m + 2:
        raise ContractError("S too small for the regression to be identified")
    nu_eta = model.state_noise_dof(theta)
    if cfg.mode == "full" and nu_eta is None:
        raise ContractError("full mode requires Student's-t state noise")

    rng = substream(seed, "eisfit")
    crn = draw_crn(model, theta, n, cfg.s, rng)
    params = natural_params(n, model)
    if cfg.max_iter == 0:
        return params

    warm_theta = theta
    if model.has_leverage and cfg.leverage_warm > 0:
        warm_theta = replace(theta, rho1=0.0, rho2=0.0)

    b, C = params.b, params.C
    for k in range(1, cfg.max_iter + 1):
        zeta = min(1.0, k / cfg.warm_iters)
        th = warm_theta if (model.has_leverage and k <= cfg.leverage_warm) else theta
        X = simulate_fit_paths(model, th, y, EisParams(b=b, C=C), crn)
        b_new, C_new, _, _ = _backward_pass(
            model, th, y, X, crn, b, C, zeta, k, full=False, nu_eta=nu_eta
        )
        rel = max(
            np.max(np.abs(b_new - b) / (1.0 + np.abs(b))),
            np.max(np.abs(C_new - C) / (1.0 + np.abs(C))),
        )
        b, C = b_new, C_new
        warm_done = k >= cfg.warm_iters and (not model.has_leverage or k > cfg.leverage_warm)
        if warm_done and rel < cfg.rel_tol:
            break

    if cfg.mode == "full":
        X = simulate_fit_paths(model, theta, y, EisParams(b=b, C=C), crn)
        b, C, alpha, beta = _backward_pass(
            model, theta, y, X, crn, b, C, 1.0, cfg.max_iter + 1, full=True, nu_eta=nu_eta
        )
        return EisParams(b=b, C=C, alpha=alpha, beta=beta)
    return EisParams(b=b, C=C)
