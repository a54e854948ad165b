"""Bayesian layer: priors, unconstrained reparametrization, IS-squared,
pseudo-marginal Metropolis-Hastings (adaptive random walk and independence),
a weighted-EM multivariate-t proposal, and chain diagnostics.

Both IS2 and PMMH treat the likelihood as a black-box unbiased estimator
``loglik(theta_vec, seed) -> float``; see :func:`make_loglik` for the
builders around the particle estimators. All sampling happens in an
unconstrained space: phi -> logit(phi), sigma^2 -> log sigma^2, c -> c,
rho -> atanh(rho), with exact log Jacobians.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from ._rng import substream
from .errors import (
    ContractError,
    DegenerateSampleError,
    PeisError,
    ProposalMismatchError,
    UndefinedVarianceError,
)

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# priors and parameter space


@dataclass(frozen=True)
class Marginal:
    """One prior marginal: normal(mu, var), uniform(lo, hi), or
    inverse_gamma(shape, scale)."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "inverse_gamma"):
            raise ContractError(f"unknown marginal kind {self.kind!r}")
        if self.kind == "normal" and self.b <= 0:
            raise ContractError("normal marginal needs positive variance")
        if self.kind == "uniform" and self.b <= self.a:
            raise ContractError("uniform marginal needs b > a")
        if self.kind == "inverse_gamma" and (self.a <= 0 or self.b <= 0):
            raise ContractError("inverse_gamma marginal needs positive shape and scale")

    def logpdf(self, x: float) -> float:
        if self.kind == "normal":
            return -0.5 * (LOG_2PI + math.log(self.b)) - 0.5 * (x - self.a) ** 2 / self.b
        if self.kind == "uniform":
            return -math.log(self.b - self.a) if self.a < x < self.b else -math.inf
        if x <= 0.0:
            return -math.inf
        return (
            self.a * math.log(self.b) - gammaln(self.a) - (self.a + 1.0) * math.log(x) - self.b / x
        )

    def sample(self, rng, size: int) -> np.ndarray:
        if self.kind == "normal":
            return self.a + math.sqrt(self.b) * rng.standard_normal(size)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return self.b / rng.gamma(self.a, size=size)


@dataclass(frozen=True)
class PriorSpec:
    marginals: tuple


@dataclass(frozen=True)
class ParamSpace:
    """Names, transforms, prior, and packing for one model's parameters."""

    names: tuple
    transforms: tuple  # per-parameter: identity | log | logit | atanh
    prior: PriorSpec
    pack: object = field(default=None)  # vector -> model theta

    def __post_init__(self):
        if not len(self.names) == len(self.transforms) == len(self.prior.marginals):
            raise ContractError("names, transforms, and prior marginals must align")
        for tr in self.transforms:
            if tr not in ("identity", "log", "logit", "atanh"):
                raise ContractError(f"unknown transform {tr!r}")

    @property
    def dim(self) -> int:
        return len(self.names)


def log_prior(prior: PriorSpec, theta_vec) -> float:
    """Sum of marginal log densities; -inf outside the support."""
    theta_vec = np.asarray(theta_vec, dtype=float)
    return float(sum(m.logpdf(x) for m, x in zip(prior.marginals, theta_vec)))


def sample_prior(space: ParamSpace, rng, size: int) -> np.ndarray:
    return np.column_stack([m.sample(rng, size) for m in space.prior.marginals])


def transform(space: ParamSpace, theta_vec) -> np.ndarray:
    """Map constrained parameters to the unconstrained sampling space."""
    theta_vec = np.asarray(theta_vec, dtype=float)
    out = np.empty_like(theta_vec)
    for i, tr in enumerate(space.transforms):
        x = theta_vec[i]
        if tr == "identity":
            out[i] = x
        elif tr == "log":
            if x <= 0.0:
                raise ContractError(f"{space.names[i]}={x} outside (0, inf)")
            out[i] = math.log(x)
        elif tr == "logit":
            if not 0.0 < x < 1.0:
                raise ContractError(f"{space.names[i]}={x} outside (0, 1)")
            out[i] = math.log(x / (1.0 - x))
        else:
            if not -1.0 < x < 1.0:
                raise ContractError(f"{space.names[i]}={x} outside (-1, 1)")
            out[i] = math.atanh(x)
    return out


def transform_inverse(space: ParamSpace, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    for i, tr in enumerate(space.transforms):
        if tr == "identity":
            out[i] = v[i]
        elif tr == "log":
            out[i] = math.exp(v[i])
        elif tr == "logit":
            out[i] = expit(v[i])
        else:
            out[i] = math.tanh(v[i])
    return out


def log_jacobian(space: ParamSpace, v) -> float:
    """log |d theta / d v| of the inverse transform at ``v``."""
    v = np.asarray(v, dtype=float)
    total = 0.0
    for i, tr in enumerate(space.transforms):
        if tr == "identity":
            continue
        if tr == "log":
            total += v[i]
        elif tr == "logit":
            # log sigma(v) + log sigma(-v), stable for large |v|
            total += -np.logaddexp(0.0, -v[i]) - np.logaddexp(0.0, v[i])
        else:
            total += 2.0 * (math.log(2.0) - v[i] - np.logaddexp(0.0, -2.0 * v[i]))
    return float(total)


def bivariate_sv_param_space() -> ParamSpace:
    """Priors and transforms for the bivariate SV model."""
    from .models import BivSvParams

    ig_vol = Marginal("inverse_gamma", 2.5, 0.035)
    return ParamSpace(
        names=(
            "c1", "c2", "c3", "phi1", "phi2", "phi3",
            "var_eta1", "var_eta2", "var_eta3",
        ),
        transforms=("identity",) * 3 + ("logit",) * 3 + ("log",) * 3,
        prior=PriorSpec(
            marginals=(
                Marginal("normal", 0.0, 1.0),
                Marginal("normal", 0.0, 1.0),
                Marginal("normal", 0.0, 1.0),
                Marginal("uniform", 0.0, 1.0),
                Marginal("uniform", 0.0, 1.0),
                Marginal("uniform", 0.0, 1.0),
                ig_vol,
                ig_vol,
                Marginal("inverse_gamma", 2.5, 0.0075),
            )
        ),
        pack=lambda vec: BivSvParams(*vec),
    )


# ---------------------------------------------------------------------------
# multivariate-t proposal


@dataclass
class MvtProposal:
    location: np.ndarray  # (d,)
    scale: np.ndarray  # (d, d) SPD
    dof: float

    def __post_init__(self):
        self.location = np.asarray(self.location, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.dof <= 2.0:
            raise ContractError("dof must exceed 2")
        self._chol = np.linalg.cholesky(self.scale)
        self._logdet = 2.0 * np.log(np.diag(self._chol)).sum()

    def logpdf(self, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        d = self.location.size
        z = np.linalg.solve(self._chol, (v - self.location).T)
        maha2 = (z * z).sum(axis=0)
        out = (
            gammaln((self.dof + d) / 2.0)
            - gammaln(self.dof / 2.0)
            - 0.5 * d * math.log(self.dof * math.pi)
            - 0.5 * self._logdet
            - 0.5 * (self.dof + d) * np.log1p(maha2 / self.dof)
        )
        return out

    def draw(self, rng, size: int) -> np.ndarray:
        d = self.location.size
        z = rng.standard_normal((size, d)) @ self._chol.T
        g = rng.chisquare(self.dof, size) / self.dof
        return self.location + z / np.sqrt(g)[:, None]


def _ridge(scale: np.ndarray) -> np.ndarray:
    d = scale.shape[0]
    bump = max(1e-8 * np.trace(scale) / d, 1e-12)
    return scale + bump * np.eye(d)


def fit_mvt_proposal(
    draws: np.ndarray, weights: np.ndarray, dof: float = 5.0,
    max_iter: int = 200, tol: float = 1e-6,
) -> MvtProposal:
    """Importance-weighted EM fit of a single multivariate Student's t."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    M, d = draws.shape
    if M <= d + 2:
        raise ContractError("need more draws than dimensions + 2")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise DegenerateSampleError("weights must be non-negative with positive sum")
    w = w / w.sum()

    loc = w @ draws
    diff = draws - loc
    scale = (w[:, None] * diff).T @ diff
    for _ in range(max_iter):
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError:
            scale = _ridge(scale)
            try:
                chol = np.linalg.cholesky(scale)
            except np.linalg.LinAlgError:
                raise DegenerateSampleError("scale matrix not positive definite") from None
        z = np.linalg.solve(chol, (draws - loc).T)
        maha2 = (z * z).sum(axis=0)
        u = (dof + d) / (dof + maha2)
        wu = w * u
        new_loc = wu @ draws / wu.sum()
        diff = draws - new_loc
        scale = (wu[:, None] * diff).T @ diff
        moved = np.linalg.norm(new_loc - loc) / (1.0 + np.linalg.norm(loc))
        loc = new_loc
        if moved < tol:
            break
    try:
        return MvtProposal(location=loc, scale=scale, dof=dof)
    except np.linalg.LinAlgError:
        return MvtProposal(location=loc, scale=_ridge(scale), dof=dof)


# ---------------------------------------------------------------------------
# likelihood estimator builders


def make_loglik(model, y, space: ParamSpace, method: str, n_particles: int,
                eis_cfg=None, threshold: float = 0.9, antithetic: bool = True):
    """Build ``loglik(theta_vec, seed) -> float`` around one estimator.

    ``method`` is one of "bootstrap", "eis", "peis"; the EIS variants refit
    the importance parameters for every parameter value.
    """
    from .eis import EisConfig, fit_eis
    from .particle import PeisConfig, eis_loglik, peis_loglik
    from .smc import ResamplePolicy, bootstrap_loglik

    if method == "bootstrap":

        def loglik(theta_vec, seed):
            theta = space.pack(np.asarray(theta_vec, dtype=float))
            return bootstrap_loglik(
                model, theta, y, n_particles, ResamplePolicy(), seed=seed
            ).loglik

        return loglik

    cfg = eis_cfg or EisConfig(s=32, max_iter=5, rel_tol=5e-3)
    if method == "eis":

        def loglik(theta_vec, seed):
            theta = space.pack(np.asarray(theta_vec, dtype=float))
            params = fit_eis(model, theta, y, cfg, seed=seed)
            return eis_loglik(model, theta, y, params, n_particles, antithetic, seed=seed).loglik

        return loglik
    if method == "peis":
        pcfg = PeisConfig(n_particles, threshold=threshold, antithetic=antithetic)

        def loglik(theta_vec, seed):
            theta = space.pack(np.asarray(theta_vec, dtype=float))
            params = fit_eis(model, theta, y, cfg, seed=seed)
            return peis_loglik(model, theta, y, params, pcfg, seed=seed).loglik

        return loglik
    raise ContractError(f"unknown likelihood method {method!r}")


# ---------------------------------------------------------------------------
# IS-squared


@dataclass
class Is2Result:
    draws: np.ndarray  # (M, d) constrained
    log_weights: np.ndarray  # raw (M,)
    weights: np.ndarray  # normalized (M,)
    mean: np.ndarray
    sd: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray
    ci90: np.ndarray  # (d, 2)
    log_marglik: float
    mean_se: np.ndarray
    marglik_se: float
    ess: float
    seconds: float


def _weighted_stats(draws, w):
    mean = w @ draws
    diff = draws - mean
    m2 = w @ diff**2
    m3 = w @ diff**3
    m4 = w @ diff**4
    sd = np.sqrt(m2)
    skew = m3 / np.where(m2 > 0, m2**1.5, np.inf)
    kurt = m4 / np.where(m2 > 0, m2**2, np.inf)
    return mean, sd, skew, kurt


def _weighted_quantile(x, w, qs):
    order = np.argsort(x)
    xs, ws = x[order], w[order]
    cum = np.cumsum(ws) - 0.5 * ws
    return np.interp(qs, cum / ws.sum(), xs)


def is2_run(
    space: ParamSpace, loglik, proposal: MvtProposal, M: int, seed: int,
    bootstrap_reps: int = 1000,
) -> Is2Result:
    """Importance sampling over parameters with an estimated likelihood.

    Draws M parameters from the proposal (in unconstrained space), weighs
    them by estimated-likelihood * prior * Jacobian / proposal, and returns
    self-normalized posterior statistics, the marginal likelihood (mean
    unnormalized weight), and bootstrap standard errors.
    """
    if M < 2:
        raise ContractError("M must be >= 2")
    t0 = time.perf_counter()
    rng = substream(seed, "is2")
    V = proposal.draw(rng, M)
    log_q = proposal.logpdf(V)
    draws = np.empty((M, space.dim))
    log_w = np.empty(M)
    for i in range(M):
        theta_vec = transform_inverse(space, V[i])
        draws[i] = theta_vec
        lp = log_prior(space.prior, theta_vec)
        if not np.isfinite(lp):
            log_w[i] = -np.inf
            continue
        try:
            ll = loglik(theta_vec, int(rng.integers(2**63)))
        except PeisError:
            log_w[i] = -np.inf
            continue
        log_w[i] = ll + lp + log_jacobian(space, V[i]) - log_q[i]

    mx = np.max(log_w)
    if not np.isfinite(mx):
        raise ProposalMismatchError("all IS2 weights are zero")
    w_raw = np.exp(log_w - mx)
    w = w_raw / w_raw.sum()
    log_marglik = mx + math.log(w_raw.mean())

    mean, sd, skew, kurt = _weighted_stats(draws, w)
    ci90 = np.stack(
        [_weighted_quantile(draws[:, k], w, [0.05, 0.95]) for k in range(space.dim)]
    )

    # bootstrap standard errors over (draw, weight) pairs
    brng = substream(seed, "is2-bootstrap")
    means = np.empty((bootstrap_reps, space.dim))
    margs = np.empty(bootstrap_reps)
    for r in range(bootstrap_reps):
        idx = brng.integers(0, M, size=M)
        wr = w_raw[idx]
        means[r] = (wr / wr.sum()) @ draws[idx]
        margs[r] = mx + math.log(wr.mean())
    return Is2Result(
        draws=draws,
        log_weights=log_w,
        weights=w,
        mean=mean,
        sd=sd,
        skew=skew,
        kurt=kurt,
        ci90=ci90,
        log_marglik=float(log_marglik),
        mean_se=means.std(axis=0, ddof=1),
        marglik_se=float(margs.std(ddof=1)),
        ess=float(1.0 / np.sum(w * w)),
        seconds=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# pseudo-marginal Metropolis-Hastings


@dataclass
class ChainResult:
    chain: np.ndarray  # (iters, d) constrained, post burn-in
    accept_rate: float
    inefficiency: np.ndarray  # (d,)
    seconds: float
    log_liks: np.ndarray  # (iters,)


def _finish_chain(chain, accepted, t0, burn_in, log_liks):
    kept = chain[burn_in:]
    ineff = np.empty(kept.shape[1])
    for k in range(kept.shape[1]):
        try:
            ineff[k] = obm_inefficiency(kept[:, k])
        except UndefinedVarianceError:
            ineff[k] = np.inf
        except ContractError:  # chain too short for batch means
            ineff[k] = np.nan
    return ChainResult(
        chain=kept,
        accept_rate=accepted / max(1, chain.shape[0] - 1 - burn_in),
        inefficiency=ineff,
        seconds=time.perf_counter() - t0,
        log_liks=log_liks[burn_in:],
    )


def pmmh_arw(
    space: ParamSpace, loglik, init_theta, iters: int, seed: int,
    burn_in: int | None = None, mix_prob: float = 0.95, freeze: int = 100,
) -> ChainResult:
    """Pseudo-marginal MH with the adaptive random walk proposal.

    With probability ``mix_prob`` the step covariance is (2.38^2/d) times
    the running chain covariance, otherwise (0.1^2/d) I; the first
    ``freeze`` iterations use only the fixed component. The current point's
    likelihood estimate is stored, never re-evaluated; estimator failures
    reject the move.
    """
    t0 = time.perf_counter()
    burn_in = iters // 4 if burn_in is None else burn_in
    if iters <= burn_in:
        raise ContractError("iters must exceed burn_in")
    d = space.dim
    rng = substream(seed, "pmmh-arw")
    v = transform(space, np.asarray(init_theta, dtype=float))
    cur_theta = transform_inverse(space, v)
    cur_post = (
        loglik(cur_theta, int(rng.integers(2**63)))
        + log_prior(space.prior, cur_theta)
        + log_jacobian(space, v)
    )
    cur_ll = cur_post

    # running first/second moments of the v-chain for adaptation
    run_mean = v.copy()
    run_m2 = np.zeros((d, d))
    count = 1

    chain = np.empty((iters, d))
    log_liks = np.empty(iters)
    chain[0] = cur_theta
    log_liks[0] = cur_ll
    accepted = 0
    small = 0.1 / math.sqrt(d)
    for i in range(1, iters):
        adaptive = i > freeze and rng.random() < mix_prob and count > 2 * d
        if adaptive:
            cov = run_m2 / (count - 1)
            try:
                chol = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
                step = (2.38 / math.sqrt(d)) * (chol @ rng.standard_normal(d))
            except np.linalg.LinAlgError:
                step = small * rng.standard_normal(d)
        else:
            step = small * rng.standard_normal(d)
        v_prop = v + step
        theta_prop = transform_inverse(space, v_prop)
        lp = log_prior(space.prior, theta_prop)
        if np.isfinite(lp):
            try:
                ll = loglik(theta_prop, int(rng.integers(2**63)))
                post = ll + lp + log_jacobian(space, v_prop)
                if math.log(rng.random()) < post - cur_post:
                    v, cur_theta, cur_post, cur_ll = v_prop, theta_prop, post, ll
                    if i > burn_in:
                        accepted += 1
            except PeisError:
                pass
        chain[i] = cur_theta
        log_liks[i] = cur_ll
        delta = v - run_mean
        run_mean += delta / (count + 1)
        run_m2 += np.outer(delta, v - run_mean)
        count += 1
    return _finish_chain(chain, accepted, t0, burn_in, log_liks)


def pmmh_imh(
    space: ParamSpace, loglik, proposal: MvtProposal, iters: int, seed: int,
    burn_in: int | None = None, init_theta=None,
) -> ChainResult:
    """Pseudo-marginal independence MH with a multivariate-t proposal."""
    t0 = time.perf_counter()
    burn_in = iters // 4 if burn_in is None else burn_in
    if iters <= burn_in:
        raise ContractError("iters must exceed burn_in")
    rng = substream(seed, "pmmh-imh")
    v = (
        transform(space, np.asarray(init_theta, dtype=float))
        if init_theta is not None
        else proposal.location.copy()
    )
    cur_theta = transform_inverse(space, v)
    cur_ll = loglik(cur_theta, int(rng.integers(2**63)))
    cur_post = cur_ll + log_prior(space.prior, cur_theta) + log_jacobian(space, v)
    cur_q = float(proposal.logpdf(v)[0])

    chain = np.empty((iters, space.dim))
    log_liks = np.empty(iters)
    chain[0] = cur_theta
    log_liks[0] = cur_ll
    accepted = 0
    for i in range(1, iters):
        v_prop = proposal.draw(rng, 1)[0]
        theta_prop = transform_inverse(space, v_prop)
        lp = log_prior(space.prior, theta_prop)
        if np.isfinite(lp):
            try:
                ll = loglik(theta_prop, int(rng.integers(2**63)))
                post = ll + lp + log_jacobian(space, v_prop)
                q_prop = float(proposal.logpdf(v_prop)[0])
                if math.log(rng.random()) < (post - cur_post) - (q_prop - cur_q):
                    v, cur_theta, cur_post, cur_q, cur_ll = (
                        v_prop, theta_prop, post, q_prop, ll,
                    )
                    if i > burn_in:
                        accepted += 1
            except PeisError:
                pass
        chain[i] = cur_theta
        log_liks[i] = cur_ll
    return _finish_chain(chain, accepted, t0, burn_in, log_liks)


def train_mvt_proposal(
    space: ParamSpace, loglik, seed: int, m0: int = 500, rounds: int = 5,
    tol: float = 0.01, dof: float = 5.0,
) -> MvtProposal:
    """Iteratively fit the t proposal by importance-weighted EM rounds,
    starting from a prior-matched location/scale."""
    rng = substream(seed, "train-proposal")
    prior_draws = sample_prior(space, rng, 4000)
    V0 = np.array([transform(space, row) for row in prior_draws])
    proposal = MvtProposal(
        location=V0.mean(axis=0), scale=_ridge(np.cov(V0.T)), dof=dof
    )
    for _ in range(rounds):
        V = proposal.draw(rng, m0)
        log_q = proposal.logpdf(V)
        log_w = np.full(m0, -np.inf)
        for i in range(m0):
            theta_vec = transform_inverse(space, V[i])
            lp = log_prior(space.prior, theta_vec)
            if not np.isfinite(lp):
                continue
            try:
                ll = loglik(theta_vec, int(rng.integers(2**63)))
            except PeisError:
                continue
            log_w[i] = ll + lp + log_jacobian(space, V[i]) - log_q[i]
        mx = log_w.max()
        if not np.isfinite(mx):
            raise ProposalMismatchError("proposal training produced no finite weights")
        w = np.exp(log_w - mx)
        new = fit_mvt_proposal(V, w / w.sum(), dof=dof)
        scale_diag = np.sqrt(np.diag(new.scale))
        moved = np.max(np.abs(new.location - proposal.location) / (scale_diag + 1e-12))
        proposal = new
        if moved < tol:
            break
    return proposal


# ---------------------------------------------------------------------------
# diagnostics


def optimal_particles(var_unit: float, tau1: float, tau2: float) -> float:
    """Optimal particle count from the one-particle log-likelihood variance
    and the affine timing model tau1 + N * tau2."""
    if var_unit <= 0 or tau2 <= 0 or tau1 < 0:
        raise ContractError("need var_unit > 0, tau2 > 0, tau1 >= 0")
    return 0.5 * var_unit * (1.0 + math.sqrt(1.0 + 4.0 * (tau1 / tau2) / var_unit))


def obm_inefficiency(x: np.ndarray, batch_len: int | None = None) -> float:
    """Inefficiency factor (long-run variance over sample variance) by
    overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    b = batch_len if batch_len is not None else max(1, int(math.sqrt(n)))
    if n < 10 * b:
        raise ContractError("chain too short for the requested batch length")
    s2 = x.var(ddof=1)
    if s2 <= 0.0:
        raise UndefinedVarianceError("constant chain has no variance")
    csum = np.concatenate([[0.0], np.cumsum(x)])
    batch_means = (csum[b:] - csum[:-b]) / b
    k = batch_means.size  # n - b + 1
    lrv = n * b / ((n - b) * (n - b + 1.0)) * np.sum((batch_means - x.mean()) ** 2)
    return float(lrv / s2)


def chain_mean_se(x: np.ndarray, batch_len: int | None = None) -> float:
    """Monte Carlo standard error of the chain mean via the OBM long-run variance."""
    x = np.asarray(x, dtype=float)
    return math.sqrt(obm_inefficiency(x, batch_len) * x.var(ddof=1) / x.size)


def bootstrap_se(draws, weights, statistic, B: int = 1000, seed: int = 0) -> float:
    """Bootstrap standard error of ``statistic(draws, weights)`` over
    resamples of (draw, weight) pairs."""
    if B < 100:
        raise ContractError("B must be >= 100")
    draws = np.asarray(draws, dtype=float)
    w = np.asarray(weights, dtype=float)
    rng = substream(seed, "bootstrap-se")
    M = draws.shape[0]
    vals = np.empty(B)
    for r in range(B):
        idx = rng.integers(0, M, size=M)
        vals[r] = statistic(draws[idx], w[idx])
    return float(vals.std(ddof=1))
