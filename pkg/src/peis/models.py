"""State space models: two-factor SV, bivariate SV, and linear-Gaussian oracles.

Every model follows the same contract. The state is an ``m``-vector with
conditionally Gaussian transitions

    x_t = F(x_{t-1}) + Lambda_t eta_t,   eta_t ~ N(0, Q),   Q diagonal,

where ``Lambda_t = diag(sqrt(lambda_t))`` carries the inverse-gamma mixing
variables of Student's-t state noise (``Lambda_t = I`` for Gaussian noise),
and the measurement density depends on the state only through the signal
``s_t = Z x_t`` with ``Z`` a ``p x m`` matrix, ``p <= m``. Leverage makes
``F`` depend on the previous observation. ``t = 1`` is handled uniformly:
the "transition" into period one is the stationary initial distribution.

All evaluators are pure functions of their inputs; random number generators
are always passed in explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import ContractError, NumericError, ParameterError

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class UnivSvParams:
    """Two-factor SV parameters; ``nu_eta`` only for Student's-t state noise."""

    phi1: float
    phi2: float
    var_eta1: float
    var_eta2: float
    rho1: float
    rho2: float
    nu: float
    c: float = 0.0
    nu_eta: float | None = None


@dataclass(frozen=True)
class BivSvParams:
    c1: float
    c2: float
    c3: float
    phi1: float
    phi2: float
    phi3: float
    var_eta1: float
    var_eta2: float
    var_eta3: float


@dataclass(frozen=True)
class LinGaussParams:
    phi: float
    var_eta: float
    var_eps: float


@dataclass(frozen=True)
class MvLinGaussParams:
    """Diagonal-AR(1) multivariate linear-Gaussian test parameters."""

    phi: tuple
    var_eta: tuple


@dataclass(frozen=True)
class Trajectory:
    """A simulated state/observation path and the seed that produced it."""

    x: np.ndarray  # (n, m)
    y: np.ndarray  # (n, obs_dim)
    seed: int


@dataclass(frozen=True)
class TransitionMoments:
    """Conditional mean and (diagonal) covariance of one state transition."""

    mean: np.ndarray  # (m,)
    var_diag: np.ndarray  # (m,)

    @property
    def cov(self) -> np.ndarray:
        return np.diag(self.var_diag)


def _floor_non_finite(out):
    """Replace numerically degenerate log densities by -inf (their limit)."""
    if np.ndim(out) == 0:
        return out if np.isfinite(out) else -np.inf
    bad = ~np.isfinite(out)
    if bad.any():
        out = np.where(bad, -np.inf, out)
    return out


def _check_unit(name: str, value: float) -> None:
    if not -1.0 < value < 1.0:
        raise ParameterError(f"{name}={value} must lie in (-1, 1)")


def _check_pos(name: str, value: float) -> None:
    if not value > 0.0:
        raise ParameterError(f"{name}={value} must be positive")


# ---------------------------------------------------------------------------
# model classes


class StateSpaceModel:
    """Shared mechanics; concrete models fill in the class attributes below."""

    model_id: str
    m: int
    p: int
    obs_dim: int
    Z: np.ndarray
    has_leverage: bool = False
    state_noise: str = "gaussian"  # "gaussian" | "student_t"
    measurement: str = "gaussian"  # "gaussian" | "sv_student_t" | "mvn_sv"

    @property
    def Zk(self) -> np.ndarray:
        """Signal map of the importance kernel.

        Defaults to the measurement map Z. Models whose backward integration
        constants depend on state directions outside the row span of Z must
        widen it (the two-factor model uses the identity), otherwise the
        kernel cannot absorb those terms and the importance weights retain
        per-period variance that grows linearly with the sample size.
        """
        return self.Z

    @property
    def pk(self) -> int:
        return self.Zk.shape[0]

    @property
    def zk_identity(self) -> bool:
        flag = getattr(self, "_zk_identity_flag", None)
        if flag is None:
            Zk = self.Zk
            flag = Zk.shape[0] == Zk.shape[1] and bool(np.array_equal(Zk, np.eye(Zk.shape[0])))
            self._zk_identity_flag = flag
        return flag

    # -- contracts ---------------------------------------------------------

    def validate_params(self, theta) -> None:
        raise NotImplementedError

    def initial_mean_var(self, theta):
        """Stationary mean and variance diagonal of the initial state."""
        raise NotImplementedError

    def transition_mean_var(self, theta, t, x_prev, y_prev=None, lam=None):
        """Batched conditional mean/variance of x_t given x_{t-1}.

        ``x_prev`` is (B, m); returns ``(F, var)`` both (B, m). ``t`` is
        1-based and must be >= 2; ``lam`` is the (B, m) inverse-gamma mixing
        array for Student's-t state noise.
        """
        raise NotImplementedError

    def log_meas(self, theta, y_t, s):
        """Log measurement density at observation ``y_t`` for signals ``s`` (B, p)."""
        raise NotImplementedError

    def log_meas_matrix(self, theta, y, sig):
        """Measurement log densities for all periods at once.

        ``y`` is (n, obs_dim), ``sig`` is (B, n, p); returns (B, n).
        """
        B, n, _ = sig.shape
        out = np.empty((B, n))
        for j in range(n):
            out[:, j] = self.log_meas(theta, y[j], sig[:, j])
        return out

    def meas_grad_hess(self, theta, y_t, s):
        """Gradient (B, p) and Hessian (B, p, p) of ``log_meas`` in the signal."""
        raise NotImplementedError(f"{self.model_id} has no signal derivatives")

    def simulate(self, theta, n, rng) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def state_noise_dof(self, theta):
        return None

    # -- shared helpers ----------------------------------------------------

    def signal(self, x: np.ndarray) -> np.ndarray:
        return x @ self.Z.T

    def q_diag(self, theta) -> np.ndarray:
        """Diagonal of Q, the Gaussian core of the state noise covariance."""
        raise NotImplementedError

    def _leverage_shock(self, theta, x_prev, y_prev):
        raise NotImplementedError

    def _arrays(self, theta) -> dict:
        """Single-slot cache of per-theta constant arrays (hot-path helper)."""
        cache = getattr(self, "_theta_cache", None)
        if cache is not None and cache[0] == theta:
            return cache[1]
        arrs = self._build_arrays(theta)
        self._theta_cache = (theta, arrs)
        return arrs

    def _build_arrays(self, theta) -> dict:
        phis = self._phis(theta)
        q = self.q_diag(theta)
        _, p1 = self.initial_mean_var(theta)
        return {"phis": phis, "q": q, "p1": p1}


class UnivariateTwoFactorSV(StateSpaceModel):
    """Two-factor log-volatility with leverage and Student's-t returns.

    y_t = exp((c + x_{1,t} + x_{2,t}) / 2) * eps_t with standardized-t(nu)
    return innovations; each factor follows an AR(1) whose innovation mixes
    the return shock (leverage) with independent noise that is either
    Gaussian or standardized Student's-t(nu_eta).
    """

    m = 2
    p = 1
    obs_dim = 1
    Z = np.array([[1.0, 1.0]])
    _Zk = np.eye(2)
    has_leverage = True
    measurement = "sv_student_t"

    @property
    def Zk(self) -> np.ndarray:
        return self._Zk

    def __init__(self, state_noise: str = "gaussian"):
        if state_noise not in ("gaussian", "student_t"):
            raise ParameterError(f"unknown state noise kind {state_noise!r}")
        self.state_noise = state_noise
        self.model_id = "univariate-sv" if state_noise == "gaussian" else "univariate-sv-t"

    def validate_params(self, theta: UnivSvParams) -> None:
        if not 1.0 > theta.phi1 > theta.phi2 > -1.0:
            raise ParameterError("identification requires 1 > phi1 > phi2 > -1")
        _check_pos("var_eta1", theta.var_eta1)
        _check_pos("var_eta2", theta.var_eta2)
        _check_unit("rho1", theta.rho1)
        _check_unit("rho2", theta.rho2)
        if not theta.nu > 2.0:
            raise ParameterError("nu must exceed 2")
        if self.state_noise == "student_t":
            if theta.nu_eta is None or not theta.nu_eta > 2.0:
                raise ParameterError("student_t state noise needs nu_eta > 2")
        elif theta.nu_eta is not None:
            raise ParameterError("nu_eta given but state noise is gaussian")

    def state_noise_dof(self, theta):
        return theta.nu_eta if self.state_noise == "student_t" else None

    def _phis(self, theta):
        return np.array([theta.phi1, theta.phi2])

    def _rhos(self, theta):
        return np.array([theta.rho1, theta.rho2])

    def _sigs(self, theta):
        return np.sqrt([theta.var_eta1, theta.var_eta2])

    def q_diag(self, theta) -> np.ndarray:
        q = (1.0 - self._rhos(theta) ** 2) * self._sigs(theta) ** 2
        if self.state_noise == "student_t":
            # standardized-t scale factor folded into Q so sqrt(lam)*z has
            # the right marginal variance
            q = q * (theta.nu_eta - 2.0) / theta.nu_eta
        return q

    def initial_mean_var(self, theta):
        sig2 = self._sigs(theta) ** 2
        return np.zeros(2), sig2 / (1.0 - self._phis(theta) ** 2)

    def _leverage_shock(self, theta, x_prev, y_prev):
        s_prev = x_prev[:, 0] + x_prev[:, 1]
        with np.errstate(over="ignore"):
            return float(np.asarray(y_prev).reshape(-1)[0]) * np.exp(-(theta.c + s_prev) / 2.0)

    def _build_arrays(self, theta) -> dict:
        arrs = super()._build_arrays(theta)
        arrs["rho_sig"] = self._rhos(theta) * self._sigs(theta)
        return arrs

    def transition_mean_var(self, theta, t, x_prev, y_prev=None, lam=None):
        if t < 2:
            raise ContractError("transition_mean_var requires t >= 2")
        if y_prev is None:
            raise ContractError("leverage model needs y_prev for t >= 2")
        arrs = self._arrays(theta)
        eps = self._leverage_shock(theta, x_prev, y_prev)
        mean = x_prev * arrs["phis"] + eps[:, None] * arrs["rho_sig"]
        var = np.broadcast_to(arrs["q"], x_prev.shape)
        if self.state_noise == "student_t":
            if lam is None:
                raise ContractError("student_t state noise needs lam")
            var = var * lam
        elif lam is not None:
            var = var * lam  # Lambda = I corresponds to lam of ones
        return mean, var

    def log_meas(self, theta, y_t, s):
        s1 = np.asarray(s)[..., 0]
        if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(y_t))):
            raise NumericError("non-finite measurement inputs")
        return self._log_meas_t(theta, float(np.asarray(y_t).reshape(-1)[0]), s1)

    @staticmethod
    def _log_meas_t(theta, y_val, s1):
        nu = theta.nu
        lv = theta.c + s1
        const = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * math.log((nu - 2.0) * math.pi)
        with np.errstate(over="ignore", invalid="ignore"):
            u = y_val * np.exp(-lv / 2.0)
            out = const - 0.5 * (nu + 1.0) * np.log1p(u * u / (nu - 2.0)) - lv / 2.0
        return _floor_non_finite(out)

    def log_meas_matrix(self, theta, y, sig):
        return self._log_meas_t(theta, y[:, 0], sig[..., 0])

    def meas_grad_hess(self, theta, y_t, s):
        s1 = np.asarray(s)[..., 0]
        nu = theta.nu
        u2 = (float(np.asarray(y_t).reshape(-1)[0]) ** 2) * np.exp(-(theta.c + s1))
        denom = (nu - 2.0) + u2
        g = 0.5 * (nu + 1.0) * u2 / denom - 0.5
        h = -0.5 * (nu + 1.0) * (nu - 2.0) * u2 / denom**2
        return g[:, None], h[:, None, None]

    def simulate(self, theta, n, rng):
        phis, rhos, sigs = self._phis(theta), self._rhos(theta), self._sigs(theta)
        nu = theta.nu
        eps = rng.standard_t(nu, size=n) * math.sqrt((nu - 2.0) / nu)
        z = rng.standard_normal((n, 2))
        scale = np.broadcast_to(np.sqrt(1.0 - rhos**2) * sigs, (n, 2))
        if self.state_noise == "student_t":
            a = theta.nu_eta / 2.0
            lam = a / rng.gamma(a, size=(n, 2))
            scale = scale * math.sqrt((theta.nu_eta - 2.0) / theta.nu_eta) * np.sqrt(lam)
        x = np.empty((n, 2))
        y = np.empty((n, 1))
        _, p1 = self.initial_mean_var(theta)
        x[0] = rng.standard_normal(2) * np.sqrt(p1)
        for t in range(n):
            y[t, 0] = math.exp((theta.c + x[t, 0] + x[t, 1]) / 2.0) * eps[t]
            if t + 1 < n:
                x[t + 1] = phis * x[t] + rhos * sigs * eps[t] + scale[t + 1] * z[t + 1]
        return x, y


class BivariateSV(StateSpaceModel):
    """Bivariate SV with time-varying correlation driven by a third factor."""

    model_id = "bivariate-sv"
    m = 3
    p = 3
    obs_dim = 2
    Z = np.eye(3)
    measurement = "mvn_sv"

    def validate_params(self, theta: BivSvParams) -> None:
        for i, phi in enumerate((theta.phi1, theta.phi2, theta.phi3), 1):
            _check_unit(f"phi{i}", phi)
        for i, v in enumerate((theta.var_eta1, theta.var_eta2, theta.var_eta3), 1):
            _check_pos(f"var_eta{i}", v)

    def _phis(self, theta):
        return np.array([theta.phi1, theta.phi2, theta.phi3])

    def q_diag(self, theta) -> np.ndarray:
        return np.array([theta.var_eta1, theta.var_eta2, theta.var_eta3])

    def initial_mean_var(self, theta):
        return np.zeros(3), self.q_diag(theta) / (1.0 - self._phis(theta) ** 2)

    def transition_mean_var(self, theta, t, x_prev, y_prev=None, lam=None):
        if t < 2:
            raise ContractError("transition_mean_var requires t >= 2")
        arrs = self._arrays(theta)
        var = np.broadcast_to(arrs["q"], x_prev.shape)
        if lam is not None:
            var = var * lam
        return x_prev * arrs["phis"], var

    @staticmethod
    def correlation(theta, s3):
        """rho_t = (1 - exp(-c3 - x3)) / (1 + exp(-c3 - x3)), i.e. tanh((c3+x3)/2)."""
        return np.tanh((theta.c3 + s3) / 2.0)

    def log_meas(self, theta, y_t, s):
        s = np.asarray(s)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y_t))):
            raise NumericError("non-finite measurement inputs")
        y = np.asarray(y_t).reshape(-1)
        return self._log_meas_mvn(theta, y[0], y[1], s)

    @staticmethod
    def _log_meas_mvn(theta, y1, y2, s):
        lv1 = theta.c1 + s[..., 0]
        lv2 = theta.c2 + s[..., 1]
        rho = np.tanh((theta.c3 + s[..., 2]) / 2.0)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            z1 = y1 * np.exp(-lv1 / 2.0)
            z2 = y2 * np.exp(-lv2 / 2.0)
            omr2 = 1.0 - rho * rho
            quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / omr2
            out = -LOG_2PI - 0.5 * (lv1 + lv2 + np.log(omr2)) - 0.5 * quad
        return _floor_non_finite(out)

    def log_meas_matrix(self, theta, y, sig):
        return self._log_meas_mvn(theta, y[:, 0], y[:, 1], sig)

    def simulate(self, theta, n, rng):
        phis = self._phis(theta)
        sig_eta = np.sqrt(self.q_diag(theta))
        x = np.empty((n, 3))
        y = np.empty((n, 2))
        _, p1 = self.initial_mean_var(theta)
        x[0] = rng.standard_normal(3) * np.sqrt(p1)
        eta = rng.standard_normal((n, 3)) * sig_eta
        z = rng.standard_normal((n, 2))
        for t in range(n):
            s1 = math.exp((theta.c1 + x[t, 0]) / 2.0)
            s2 = math.exp((theta.c2 + x[t, 1]) / 2.0)
            rho = math.tanh((theta.c3 + x[t, 2]) / 2.0)
            y[t, 0] = s1 * z[t, 0]
            y[t, 1] = s2 * (rho * z[t, 0] + math.sqrt(1.0 - rho * rho) * z[t, 1])
            if t + 1 < n:
                x[t + 1] = phis * x[t] + eta[t + 1]
        return x, y


class LinearGaussian(StateSpaceModel):
    """Scalar linear-Gaussian AR(1)-plus-noise model (exactness oracle)."""

    model_id = "linear-gaussian"
    m = 1
    p = 1
    obs_dim = 1
    Z = np.array([[1.0]])

    def validate_params(self, theta: LinGaussParams) -> None:
        _check_unit("phi", theta.phi)
        _check_pos("var_eta", theta.var_eta)
        _check_pos("var_eps", theta.var_eps)

    def _phis(self, theta):
        return np.array([theta.phi])

    def q_diag(self, theta) -> np.ndarray:
        return np.array([theta.var_eta])

    def initial_mean_var(self, theta):
        return np.zeros(1), np.array([theta.var_eta / (1.0 - theta.phi**2)])

    def transition_mean_var(self, theta, t, x_prev, y_prev=None, lam=None):
        if t < 2:
            raise ContractError("transition_mean_var requires t >= 2")
        var = np.broadcast_to(self._arrays(theta)["q"], x_prev.shape)
        if lam is not None:
            var = var * lam
        return theta.phi * x_prev, var

    def log_meas(self, theta, y_t, s):
        s1 = np.asarray(s)[..., 0]
        if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(y_t))):
            raise NumericError("non-finite measurement inputs")
        r = float(np.asarray(y_t).reshape(-1)[0]) - s1
        return -0.5 * (LOG_2PI + math.log(theta.var_eps)) - 0.5 * r * r / theta.var_eps

    def log_meas_matrix(self, theta, y, sig):
        r = y[:, 0] - sig[..., 0]
        return -0.5 * (LOG_2PI + math.log(theta.var_eps)) - 0.5 * r * r / theta.var_eps

    def meas_grad_hess(self, theta, y_t, s):
        s1 = np.asarray(s)[..., 0]
        g = (float(np.asarray(y_t).reshape(-1)[0]) - s1) / theta.var_eps
        h = np.full_like(s1, -1.0 / theta.var_eps)
        return g[:, None], h[:, None, None]

    def lgss_matrices(self, theta):
        phi = np.array([theta.phi])
        q = np.array([theta.var_eta])
        return phi, q, self.Z, np.array([[theta.var_eps]])

    def simulate(self, theta, n, rng):
        x = np.empty((n, 1))
        x[0, 0] = rng.standard_normal() * math.sqrt(theta.var_eta / (1.0 - theta.phi**2))
        eta = rng.standard_normal(n) * math.sqrt(theta.var_eta)
        for t in range(1, n):
            x[t, 0] = theta.phi * x[t - 1, 0] + eta[t]
        y = x + rng.standard_normal((n, 1)) * math.sqrt(theta.var_eps)
        return x, y


class MvLinearGaussian(StateSpaceModel):
    """Multivariate linear-Gaussian oracle with arbitrary Z and measurement
    covariance R; used to validate vector-signal code paths exactly."""

    model_id = "linear-gaussian-mv"

    def __init__(self, Z: np.ndarray, R: np.ndarray):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        self.Z = Z
        self.p, self.m = Z.shape
        self.obs_dim = self.p
        if np.linalg.matrix_rank(Z) < self.p:
            raise ParameterError("Z must have full row rank")
        self.R = R
        self._R_chol = np.linalg.cholesky(R)
        self._logdet_R = 2.0 * np.log(np.diag(self._R_chol)).sum()

    def validate_params(self, theta: MvLinGaussParams) -> None:
        if len(theta.phi) != self.m or len(theta.var_eta) != self.m:
            raise ParameterError("phi/var_eta length must equal the state dimension")
        for phi in theta.phi:
            _check_unit("phi", phi)
        for v in theta.var_eta:
            _check_pos("var_eta", v)

    def _phis(self, theta):
        return np.asarray(theta.phi, dtype=float)

    def q_diag(self, theta) -> np.ndarray:
        return np.asarray(theta.var_eta, dtype=float)

    def initial_mean_var(self, theta):
        phi = np.asarray(theta.phi)
        return np.zeros(self.m), self.q_diag(theta) / (1.0 - phi**2)

    def transition_mean_var(self, theta, t, x_prev, y_prev=None, lam=None):
        if t < 2:
            raise ContractError("transition_mean_var requires t >= 2")
        arrs = self._arrays(theta)
        var = np.broadcast_to(arrs["q"], x_prev.shape)
        if lam is not None:
            var = var * lam
        return arrs["phis"] * x_prev, var

    def log_meas(self, theta, y_t, s):
        s = np.atleast_2d(np.asarray(s))
        r = np.asarray(y_t).reshape(-1) - s
        sol = np.linalg.solve(self._R_chol, r.T)
        out = -0.5 * (self.p * LOG_2PI + self._logdet_R) - 0.5 * (sol**2).sum(axis=0)
        return out if np.asarray(s).ndim > 1 else out[0]

    def meas_grad_hess(self, theta, y_t, s):
        s = np.atleast_2d(np.asarray(s))
        r = np.asarray(y_t).reshape(-1) - s
        r_inv = np.linalg.inv(self.R)
        g = r @ r_inv
        h = np.broadcast_to(-r_inv, (s.shape[0], self.p, self.p))
        return g, h

    def lgss_matrices(self, theta):
        return np.asarray(theta.phi), self.q_diag(theta), self.Z, self.R

    def simulate(self, theta, n, rng):
        phi = np.asarray(theta.phi)
        x = np.empty((n, self.m))
        _, p1 = self.initial_mean_var(theta)
        x[0] = rng.standard_normal(self.m) * np.sqrt(p1)
        eta = rng.standard_normal((n, self.m)) * np.sqrt(self.q_diag(theta))
        for t in range(1, n):
            x[t] = phi * x[t - 1] + eta[t]
        y = x @ self.Z.T + rng.standard_normal((n, self.p)) @ self._R_chol.T
        return x, y


# ---------------------------------------------------------------------------
# public operations (single-sample wrappers around the batched methods)


def simulate_dgp(model: StateSpaceModel, theta, n: int, seed: int) -> Trajectory:
    """Draw a length-``n`` trajectory; identical seeds give identical output."""
    if n < 1:
        raise ContractError("n must be >= 1")
    model.validate_params(theta)
    from ._rng import substream

    x, y = model.simulate(theta, n, substream(seed, "dgp"))
    return Trajectory(x=x, y=y, seed=seed)


def log_meas(model: StateSpaceModel, theta, y_t, s_t) -> float:
    """Log measurement density at a single signal point."""
    s = np.asarray(s_t, dtype=float).reshape(1, model.p)
    return float(np.asarray(model.log_meas(theta, y_t, s))[0])


def transition_moments(
    model: StateSpaceModel, theta, t: int, x_prev, y_prev=None, lam_t=None
) -> TransitionMoments:
    """Conditional mean/covariance of x_t; ``t = 1`` gives the initial moments."""
    if model.state_noise == "student_t" and t > 1:
        if lam_t is None:
            raise ContractError("student_t state noise requires lam_t")
        if np.any(np.asarray(lam_t) <= 0):
            raise ContractError("lam_t entries must be positive")
    if t == 1:
        mean, var = model.initial_mean_var(theta)
        return TransitionMoments(mean=mean, var_diag=var)
    x = np.asarray(x_prev, dtype=float).reshape(1, model.m)
    lam = None if lam_t is None else np.asarray(lam_t, dtype=float).reshape(1, model.m)
    mean, var = model.transition_mean_var(theta, t, x, y_prev=y_prev, lam=lam)
    return TransitionMoments(mean=mean[0], var_diag=np.array(var[0]))


def log_transition(
    model: StateSpaceModel, theta, t: int, x_t, x_prev=None, y_prev=None, lam_t=None
) -> float:
    """Gaussian log transition density of ``x_t`` given the conditional moments."""
    mom = transition_moments(model, theta, t, x_prev, y_prev=y_prev, lam_t=lam_t)
    r = np.asarray(x_t, dtype=float).reshape(-1) - mom.mean
    return float(-0.5 * np.sum(LOG_2PI + np.log(mom.var_diag) + r * r / mom.var_diag))


# ---------------------------------------------------------------------------
# registry and simulation-study presets


def univariate_sv() -> UnivariateTwoFactorSV:
    return UnivariateTwoFactorSV("gaussian")


def univariate_sv_t() -> UnivariateTwoFactorSV:
    return UnivariateTwoFactorSV("student_t")


def bivariate_sv() -> BivariateSV:
    return BivariateSV()


def linear_gaussian() -> LinearGaussian:
    return LinearGaussian()


UNIV_SV_DGP = UnivSvParams(
    phi1=0.995, phi2=0.9, var_eta1=0.005, var_eta2=0.03, rho1=-0.2, rho2=-0.5, nu=10.0
)

BIV_SV_DGP = BivSvParams(
    c1=0.0, c2=0.0, c3=1.0,
    phi1=0.98, phi2=0.98, phi3=0.99,
    var_eta1=0.15**2, var_eta2=0.15**2, var_eta3=0.05**2,
)

LIN_GAUSS_DGP = LinGaussParams(phi=0.9, var_eta=1.0, var_eps=1.0)


def get_model(model_id: str):
    """Resolve a model id to ``(model, default DGP parameters)``."""
    if model_id == "univariate-sv":
        return univariate_sv(), UNIV_SV_DGP
    if model_id == "univariate-sv-nu100":
        return univariate_sv(), replace(UNIV_SV_DGP, nu=100.0)
    if model_id == "univariate-sv-t":
        return univariate_sv_t(), replace(UNIV_SV_DGP, nu_eta=10.0)
    if model_id == "bivariate-sv":
        return bivariate_sv(), BIV_SV_DGP
    if model_id == "linear-gaussian":
        return linear_gaussian(), LIN_GAUSS_DGP
    raise ContractError(f"unknown model id {model_id!r}")
