"""Experiment harness: the variance/efficiency study design, the affine
timing model, and data ingestion.

A study draws R trajectories from a data generating process, runs J
independent log-likelihood evaluations per trajectory for every method, and
estimates each method's variance as the average across trajectories of the
within-trajectory sample variance. Efficiency compares variances after
normalizing by the affine computing-time model tau1 + N * tau2 (tau1 is the
importance-density fitting overhead; zero for the particle filters).

All randomness derives from the study's root seed: trajectory i uses stream
("dgp", i) and evaluation j of method h on trajectory i uses stream
("eval", h, i, j); see peis._rng for the derivation rule.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .eis import EisConfig, fit_eis
from .errors import ContractError, CsvFormatError, PeisError, StudyIntegrityError
from .models import get_model
from .particle import PeisConfig, eis_loglik, peis_loglik
from .smc import ResamplePolicy, apf0_loglik, bootstrap_loglik, sisr2_loglik

FILTER_METHODS = ("bf", "apf0", "sisr2")
EIS_METHODS = ("eis", "peis")


@dataclass(frozen=True)
class MethodSpec:
    """One estimator cell of a study."""

    name: str  # bf | apf0 | sisr2 | eis | peis
    n_particles: int
    mode: str = "partial"  # EIS fit mode for eis/peis
    threshold: float | None = None
    antithetic: bool = True

    def __post_init__(self):
        if self.name not in FILTER_METHODS + EIS_METHODS:
            raise ContractError(f"unknown method {self.name!r}")
        if self.n_particles < 2:
            raise ContractError("n_particles must be >= 2")

    @property
    def label(self) -> str:
        suffix = "-full" if self.name in EIS_METHODS and self.mode == "full" else ""
        return f"{self.name}{suffix}"


@dataclass(frozen=True)
class ExperimentConfig:
    model_id: str
    n: int
    methods: tuple
    n_trajectories: int  # R
    n_evals: int  # J
    seed: int
    eis_s: int = 50
    eis_max_iter: int = 10
    benchmark: str = "eis"

    def __post_init__(self):
        if self.n_trajectories < 1 or self.n_evals < 2:
            raise ContractError("need R >= 1 trajectories and J >= 2 evaluations")


@dataclass(frozen=True)
class TimingModel:
    tau1: float  # fixed overhead per evaluation (importance-density fit)
    tau2: float  # seconds per particle

    def __post_init__(self):
        if self.tau1 < 0 or self.tau2 <= 0:
            raise ContractError("need tau1 >= 0 and tau2 > 0")

    def seconds(self, n_particles: int) -> float:
        return self.tau1 + n_particles * self.tau2


@dataclass
class MethodResult:
    spec: MethodSpec
    logliks: np.ndarray  # (R, J), NaN where the estimator failed
    var_hat: float
    var_ratio: float
    tau1: float
    n_tau2: float
    eff_n: float
    eff_inf: float
    failures: int


@dataclass
class VarianceStudyResult:
    config: ExperimentConfig
    methods: dict  # label -> MethodResult
    benchmark: str


def variance_from_samples(logliks: np.ndarray) -> float:
    """Mean over trajectories of the within-trajectory sample variance."""
    logliks = np.atleast_2d(np.asarray(logliks, dtype=float))
    per_traj = []
    for row in logliks:
        vals = row[np.isfinite(row)]
        if vals.size >= 2:
            per_traj.append(vals.var(ddof=1))
    if not per_traj:
        raise ContractError("no trajectory has two valid evaluations")
    return float(np.mean(per_traj))


def efficiency(var_h, var_b, tau1_h, tau2_h, tau1_b, tau2_b, N):
    """Time-normalized relative efficiency at N particles and in the limit.

    eff_N = (var_h / var_b) / (1 + (tau1_b + N tau2_b - tau1_h - N tau2_h)
    / (N tau2_h)); eff_inf = (var_h / var_b) * (tau2_h / tau2_b).
    """
    if tau2_h <= 0 or tau2_b <= 0 or var_b <= 0:
        raise ContractError("efficiency needs positive benchmark variance and tau2")
    ratio = var_h / var_b
    denom = 1.0 + (tau1_b + N * tau2_b - tau1_h - N * tau2_h) / (N * tau2_h)
    if denom <= 0:
        raise ContractError("degenerate timing comparison")
    return ratio / denom, ratio * tau2_h / tau2_b


def eval_seed(root_seed: int, method_label: str, traj: int, repl: int) -> int:
    """Deterministic evaluation seed for one study cell."""
    return int(substream(root_seed, "eval", method_label, traj, repl).integers(2**63))


def run_method_once(model, theta, y, spec: MethodSpec, eis_cfg: EisConfig, seed: int):
    """One log-likelihood evaluation; returns (loglik, fit_seconds, run_seconds)."""
    if spec.name in FILTER_METHODS:
        policy = ResamplePolicy(threshold=spec.threshold if spec.threshold else 0.5)
        fn = {"bf": bootstrap_loglik, "apf0": apf0_loglik, "sisr2": sisr2_loglik}[spec.name]
        est = fn(model, theta, y, spec.n_particles, policy, seed=seed)
        return est.loglik, 0.0, est.seconds
    cfg = EisConfig(s=eis_cfg.s, max_iter=eis_cfg.max_iter, rel_tol=eis_cfg.rel_tol,
                    warm_iters=eis_cfg.warm_iters, leverage_warm=eis_cfg.leverage_warm,
                    mode=spec.mode)
    t0 = time.perf_counter()
    params = fit_eis(model, theta, y, cfg, seed=seed)
    fit_seconds = time.perf_counter() - t0
    if spec.name == "eis":
        est = eis_loglik(model, theta, y, params, spec.n_particles,
                         antithetic=spec.antithetic, seed=seed)
    else:
        pcfg = PeisConfig(spec.n_particles, threshold=spec.threshold or 0.9,
                          antithetic=spec.antithetic)
        est = peis_loglik(model, theta, y, params, pcfg, seed=seed)
    return est.loglik, fit_seconds, est.seconds


def variance_study(cfg: ExperimentConfig, theta=None) -> VarianceStudyResult:
    """Run the full variance/efficiency study defined by ``cfg``."""
    model, theta_default = get_model(cfg.model_id)
    theta = theta_default if theta is None else theta
    eis_cfg = EisConfig(s=cfg.eis_s, max_iter=cfg.eis_max_iter)

    trajectories = []
    for i in range(cfg.n_trajectories):
        rng = substream(cfg.seed, "dgp", i)
        trajectories.append(model.simulate(theta, cfg.n, rng)[1])

    results: dict[str, MethodResult] = {}
    for spec in cfg.methods:
        label = spec.label
        R, J = cfg.n_trajectories, cfg.n_evals
        logliks = np.full((R, J), np.nan)
        fit_secs, run_secs = [], []
        failures = 0
        for i in range(R):
            for j in range(J):
                seed = eval_seed(cfg.seed, label, i, j)
                try:
                    ll, fs, rs = run_method_once(
                        model, theta, trajectories[i], spec, eis_cfg, seed
                    )
                except PeisError:
                    failures += 1
                    continue
                logliks[i, j] = ll
                fit_secs.append(fs)
                run_secs.append(rs)
        total = R * J
        if failures > 0.01 * total:
            raise StudyIntegrityError(f"{cfg.model_id}/{label}", failures, total)
        tau1 = float(np.median(fit_secs)) if spec.name in EIS_METHODS else 0.0
        n_tau2 = float(np.median(run_secs))
        results[label] = MethodResult(
            spec=spec,
            logliks=logliks,
            var_hat=variance_from_samples(logliks),
            var_ratio=math.nan,
            tau1=tau1,
            n_tau2=n_tau2,
            eff_n=math.nan,
            eff_inf=math.nan,
            failures=failures,
        )

    bench = cfg.benchmark
    if bench in results:
        b = results[bench]
        tau2_b = b.n_tau2 / b.spec.n_particles
        for label, r in results.items():
            tau2_h = r.n_tau2 / r.spec.n_particles
            r.var_ratio = r.var_hat / b.var_hat
            r.eff_n, r.eff_inf = efficiency(
                r.var_hat, b.var_hat, r.tau1, tau2_h, b.tau1, tau2_b, r.spec.n_particles
            )
    return VarianceStudyResult(config=cfg, methods=results, benchmark=bench)


# ---------------------------------------------------------------------------
# data ingestion


@dataclass
class ObservationSeries:
    dates: list
    values: np.ndarray  # (n, k)
    names: list


def load_returns_csv(path) -> ObservationSeries:
    """Read a returns CSV: header row, one date column, numeric columns.

    Rejects missing or non-numeric cells with the offending 1-based line
    number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "empty file") from None
        if len(header) < 2:
            raise CsvFormatError(1, "need a date column plus at least one series")
        names = [h.strip() for h in header[1:]]
        dates, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(line_no, f"expected {len(header)} cells, got {len(row)}")
            vals = []
            for cell in row[1:]:
                cell = cell.strip()
                if not cell:
                    raise CsvFormatError(line_no, "missing cell")
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(line_no, f"non-numeric cell {cell!r}") from None
                if not math.isfinite(v):
                    raise CsvFormatError(line_no, "non-finite cell")
                vals.append(v)
            dates.append(row[0].strip())
            rows.append(vals)
    if not rows:
        raise CsvFormatError(2, "no data rows")
    return ObservationSeries(dates=dates, values=np.asarray(rows, dtype=float), names=names)


def write_returns_csv(path, series: ObservationSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(series.names))
        for date, row in zip(series.dates, series.values):
            writer.writerow([date] + [repr(float(v)) for v in row])
