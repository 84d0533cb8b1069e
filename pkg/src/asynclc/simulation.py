"""Data-generating process, Monte Carlo orchestration, and evaluation metrics.

Per subject the synchronous and asynchronous observation counts follow
1 + Poisson(rate), observation times are i.i.d. U(0,1), X and Z are Gaussian
processes with exponential covariance, and the noise is Gaussian with
covariance 2^{-|t-s|}. Z is drawn once jointly over the union of synchronous
and asynchronous times: its values at synchronous times enter the response
and are then discarded, so the stored dataset carries Z only where it was
"observed".

Note the orthogonality needed by the two-step estimators holds here even
though E{Z(t)} varies with t: Z is independent of X, so E{Z | X} = E{Z}.
Replicates run on per-replicate RNG substreams and aggregate in replicate
order, so reports are identical across runs and worker counts.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import LongitudinalDataset, SubjectRecord
from .errors import (
    CovarianceNotPD,
    EstimationFailed,
    InvalidParameter,
    NoLocalData,
    SingularLocalFit,
)
from .estimators import (
    Bandwidths,
    CurveEstimate,
    Z95,
    default_grid,
    fit_centering,
    fit_curve,
    fit_gamma_second_step,
    fit_one_step,
    fit_vcm,
)
from .rng import substream
from .scb import MultiplierLaw, bootstrap_band

__all__ = [
    "DgpConfig",
    "EstimatorConfig",
    "McConfig",
    "SimulationReport",
    "PointwiseRow",
    "CurveRow",
    "sample_gp",
    "generate_dataset",
    "rase",
    "run_monte_carlo",
]

log = logging.getLogger("asynclc")

SETTINGS = {
    "i": (lambda t: 3.0 * (t - 0.4) ** 2, lambda t: np.sin(2.0 * np.pi * t)),
    "ii": (lambda t: 0.4 * t + 0.5, lambda t: np.sqrt(t)),
}


@dataclass(frozen=True)
class DgpConfig:
    """The simulation data-generating process.

    setting "i": beta(t) = 3(t-0.4)^2, gamma(t) = sin(2 pi t);
    setting "ii": beta(t) = 0.4t + 0.5, gamma(t) = sqrt(t);
    or pass custom beta_fn/gamma_fn with setting "custom".
    """

    n: int
    setting: str = "i"
    obs_rate: float = 5.0
    beta_fn: Callable | None = None
    gamma_fn: Callable | None = None
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameter("n must be >= 2")
        if self.obs_rate <= 0:
            raise InvalidParameter("obs_rate must be positive")
        if self.noise_scale < 0:
            raise InvalidParameter("noise_scale must be nonnegative")
        if self.setting not in SETTINGS and self.setting != "custom":
            raise InvalidParameter(f"unknown setting {self.setting!r}")
        if self.setting == "custom" and (self.beta_fn is None or self.gamma_fn is None):
            raise InvalidParameter("custom setting requires beta_fn and gamma_fn")

    @property
    def truth(self) -> tuple[Callable, Callable]:
        if self.setting == "custom":
            return self.beta_fn, self.gamma_fn
        return SETTINGS[self.setting]

    def z_mean(self, t):
        return 2.0 * (np.asarray(t) - 0.5) ** 2

    def alpha_truth(self, t):
        # intercept absorbed by the VCM first stage: E{Z(t)}^T gamma(t)
        _, gamma_fn = self.truth
        return self.z_mean(t) * gamma_fn(t)


def sample_gp(times, mean_fn, cov_fn, rng: np.random.Generator) -> np.ndarray:
    """One Gaussian-process draw at sorted times via Cholesky.

    Duplicate times are perturbed by 1e-12 jitter before factorization (and
    logged); a factorization failure after jitter raises CovarianceNotPD.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.empty(0)
    if times.size > 1 and np.any(np.diff(times) == 0.0):
        log.warning("sample_gp: tied observation times perturbed by 1e-12 jitter")
        times = times + 1e-12 * np.arange(times.size)
    cov = cov_fn(times[:, None], times[None, :])
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotPD(f"covariance factorization failed: {exc}") from exc
    return np.asarray(mean_fn(times), dtype=float) + chol @ rng.standard_normal(times.size)


def _exp_cov(a, b):
    return math.e ** (-np.abs(a - b))


def _noise_cov(a, b):
    return 2.0 ** (-np.abs(a - b))


def generate_dataset(cfg: DgpConfig, rng: np.random.Generator) -> LongitudinalDataset:
    """Draw one study of n subjects from the configured process."""
    beta_fn, gamma_fn = cfg.truth
    subjects = []
    for i in range(cfg.n):
        l_i = 1 + rng.poisson(cfg.obs_rate)
        m_i = 1 + rng.poisson(cfg.obs_rate)
        t_sync = np.sort(rng.uniform(0.0, 1.0, size=l_i))
        t_async = np.sort(rng.uniform(0.0, 1.0, size=m_i))
        x = sample_gp(t_sync, np.zeros_like, _exp_cov, rng)
        # one joint Z draw over the union; sync-time values are used only
        # to build the response
        union = np.concatenate([t_sync, t_async])
        order = np.argsort(union, kind="stable")
        z_sorted = sample_gp(union[order], cfg.z_mean, _exp_cov, rng)
        z_union = np.empty_like(z_sorted)
        z_union[order] = z_sorted
        z_at_sync, z_at_async = z_union[:l_i], z_union[l_i:]
        eps = cfg.noise_scale * sample_gp(t_sync, np.zeros_like, _noise_cov, rng)
        y = x * beta_fn(t_sync) + z_at_sync * gamma_fn(t_sync) + eps
        subjects.append(
            SubjectRecord(
                id=str(i),
                sync_times=t_sync,
                responses=y,
                sync_covariates=x[:, None],
                async_times=t_async,
                async_covariates=z_at_async[:, None],
            )
        )
    return LongitudinalDataset(tuple(subjects), p=1, q=1)


def rase(curve: CurveEstimate, truth_fn, grid: np.ndarray | None = None) -> np.ndarray:
    """Root average squared error of each coefficient column over the grid.

    truth_fn(t) returns the true values matching the curve's columns. With
    grid=None the curve's successful grid points are used; an explicit grid
    must be a subset of the curve's grid.
    """
    if grid is None:
        keep = curve.ok
    else:
        grid = np.asarray(grid, dtype=float)
        idx = np.searchsorted(curve.grid, grid)
        if np.any(idx >= len(curve.grid)) or np.any(np.abs(curve.grid[np.minimum(idx, len(curve.grid) - 1)] - grid) > 1e-12):
            raise InvalidParameter("grid must be a subset of the curve's grid")
        keep = np.zeros(len(curve.grid), dtype=bool)
        keep[idx] = True
        keep &= curve.ok
    pts = curve.grid[keep]
    est = curve.coef[keep]
    truth = np.stack([np.atleast_1d(np.asarray(truth_fn(t), dtype=float)) for t in pts])
    return np.sqrt(np.mean((est - truth) ** 2, axis=0))


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass(frozen=True)
class EstimatorConfig:
    """One estimator/bandwidth combination to evaluate.

    method "oracle" substitutes the truth for the estimate (SE fixed at 1);
    se_scale multiplies reported SEs before coverage is computed. Both are
    testing instrumentation.
    """

    label: str
    method: str
    h: float | None = None
    h1: float | None = None
    h2: float | None = None
    curve_metrics: bool = False
    scb_targets: tuple[str, ...] = ()
    se_scale: float = 1.0

    def __post_init__(self):
        for target in self.scb_targets:
            if target not in ("beta", "gamma"):
                raise InvalidParameter(f"scb target must be 'beta' or 'gamma', got {target!r}")


@dataclass(frozen=True)
class McConfig:
    replicates: int = 200
    estimators: tuple[EstimatorConfig, ...] = ()
    eval_times: tuple[float, ...] = (0.3, 0.6, 0.9)
    grid: np.ndarray = field(default_factory=default_grid)
    scb_b: int = 500
    scb_alpha: float = 0.05
    scb_law: MultiplierLaw = MultiplierLaw.RADEMACHER
    base_seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidParameter("replicates must be >= 1")
        grid = np.asarray(self.grid, dtype=float)
        if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
            raise InvalidParameter("grid must lie within [0, 1]")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class PointwiseRow:
    estimator: str
    block: str
    time: float
    truth: float
    bias: float       # absolute bias |mean(est) - truth|
    sd: float
    se_mean: float
    cp_pct: float
    n_used: int


@dataclass(frozen=True)
class CurveRow:
    estimator: str
    block: str
    rase_mean: float
    rase_sd: float
    ci_sim_pct: float
    scb_pct: float | None
    n_used: int


@dataclass(frozen=True)
class SimulationReport:
    pointwise: tuple[PointwiseRow, ...]
    curves: tuple[CurveRow, ...]
    failures: dict
    replicates: int
    warnings: tuple[str, ...]


_NUMERICAL_ERRORS = (NoLocalData, SingularLocalFit, EstimationFailed, CovarianceNotPD)


def _truth_value(dgp: DgpConfig, block: str, t: float) -> float:
    beta_fn, gamma_fn = dgp.truth
    if block == "beta":
        return float(beta_fn(t))
    if block == "gamma":
        return float(gamma_fn(t))
    return float(dgp.alpha_truth(t))


def _eval_config(cfg: EstimatorConfig, dataset, mc: McConfig, dgp: DgpConfig, rep: int):
    """Per-replicate records for one estimator: pointwise (block,t) -> (est, se)
    plus per-block curve metrics when requested."""
    point: dict = {}
    curve_out: dict | None = None
    blocks = ["beta"] + (["gamma"] if dataset.q >= 1 else [])

    if cfg.method == "oracle":
        for t in mc.eval_times:
            for block in blocks:
                point[(block, t)] = (_truth_value(dgp, block, t), 1.0)
        if cfg.curve_metrics:
            curve_out = {
                block: {"rase": 0.0, "ci_all": True, **({"scb_all": True} if block in cfg.scb_targets else {})}
                for block in blocks
            }
        return point, curve_out

    bw = Bandwidths(h=cfg.h, h1=cfg.h1 if dataset.q >= 1 else None, h2=cfg.h2 if dataset.q >= 1 else None)
    curve = None
    if cfg.method == "one-step":
        for t in mc.eval_times:
            est = fit_one_step(dataset, t, cfg.h1, cfg.h2)
            se = est.se
            point[("beta", t)] = (float(est.coef[0]), float(se[0]))
            point[("gamma", t)] = (float(est.coef[dataset.p]), float(se[dataset.p]))
        if cfg.curve_metrics:
            curve = fit_curve(dataset, cfg.method, bw, grid=mc.grid)
    else:
        # one curve fit serves beta interpolation, pointwise gamma, and metrics
        grid = mc.grid if cfg.curve_metrics else default_grid()
        curve = fit_curve(dataset, cfg.method, bw, grid=grid)
        beta_fn = curve.beta_fn_internal or curve.coef_fn("beta")
        for t in mc.eval_times:
            if cfg.method == "two-step-centering":
                first = fit_centering(curve.centered, t, cfg.h)
                point[("beta", t)] = (float(first.coef[0]), float(first.se[0]))
            else:
                first = fit_vcm(dataset, t, cfg.h)
                point[("alpha", t)] = (float(first.coef[0]), float(first.se[0]))
                point[("beta", t)] = (float(first.coef[1]), float(first.se[1]))
            if dataset.q >= 1:
                second = fit_gamma_second_step(dataset, beta_fn, t, cfg.h1, cfg.h2)
                point[("gamma", t)] = (float(second.coef[0]), float(second.se[0]))

    if cfg.curve_metrics:
        if not curve.ok.all():
            raise EstimationFailed("curve fit failed at some grid points")
        curve_out = {}
        for block, _size in curve.blocks:
            sl = curve.block_slice(block)
            col = sl.start  # first coefficient of the block (p = q = 1 in the DGP)
            truth_col = np.array([_truth_value(dgp, block, t) for t in curve.grid])
            err = curve.coef[:, col] - truth_col
            se_col = curve.se[:, col] * cfg.se_scale
            curve_out[block] = {
                "rase": float(np.sqrt(np.mean(err**2))),
                "ci_all": bool(np.all(np.abs(err) <= Z95 * se_col)),
            }
            if block in cfg.scb_targets:
                # the VCM beta band process covers (alpha, beta); others are per-block
                coef_idx = 1 if (curve.method == "two-step-vcm" and block == "beta") else 0
                band = bootstrap_band(
                    dataset,
                    curve,
                    target=block,
                    coef=coef_idx,
                    B=mc.scb_b,
                    alpha=mc.scb_alpha,
                    law=mc.scb_law,
                    seed=(mc.base_seed, rep),
                )
                curve_out[block]["scb_all"] = bool(np.all(np.abs(err) <= band.c_alpha))
    return point, curve_out


def _replicate_worker(rep: int, mc: McConfig, dgp: DgpConfig):
    rng = substream((mc.base_seed, dgp.seed), rep)
    dataset = generate_dataset(dgp, rng)
    results = {}
    for cfg in mc.estimators:
        try:
            results[cfg.label] = _eval_config(cfg, dataset, mc, dgp, rep)
        except _NUMERICAL_ERRORS:
            results[cfg.label] = None
    return results


def _worker_count() -> int:
    raw = os.environ.get("ASYNCLC_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        value = min(4, os.cpu_count() or 1)
    return value


def run_monte_carlo(mc: McConfig, dgp: DgpConfig) -> SimulationReport:
    """Run the study and aggregate bias/SD/SE/CP plus curve metrics.

    Replicates with numerical failures are counted and excluded, never
    retried. Results are independent of the worker count (ASYNCLC_THREADS).
    """
    if not mc.estimators:
        raise InvalidParameter("at least one estimator configuration is required")
    workers = _worker_count()
    if workers > 1 and mc.replicates > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_results = list(pool.map(lambda r: _replicate_worker(r, mc, dgp), range(mc.replicates)))
    else:
        all_results = [_replicate_worker(r, mc, dgp) for r in range(mc.replicates)]

    pointwise: list[PointwiseRow] = []
    curves: list[CurveRow] = []
    failures = {}
    warnings = []
    for cfg in mc.estimators:
        used = [res[cfg.label] for res in all_results if res[cfg.label] is not None]
        n_fail = mc.replicates - len(used)
        failures[cfg.label] = n_fail
        if n_fail > 0.10 * mc.replicates:
            warnings.append(
                f"DegenerateStudy: estimator {cfg.label!r} failed in {n_fail} of "
                f"{mc.replicates} replicates"
            )
        if not used:
            continue
        for block, t in used[0][0].keys():
            ests = np.array([u[0][(block, t)][0] for u in used])
            ses = np.array([u[0][(block, t)][1] for u in used]) * cfg.se_scale
            truth = _truth_value(dgp, block, t)
            covered = np.abs(ests - truth) <= Z95 * ses
            pointwise.append(
                PointwiseRow(
                    estimator=cfg.label,
                    block=block,
                    time=float(t),
                    truth=truth,
                    bias=float(abs(ests.mean() - truth)),
                    sd=float(ests.std(ddof=1)) if len(ests) > 1 else 0.0,
                    se_mean=float(ses.mean()),
                    cp_pct=float(100.0 * covered.mean()),
                    n_used=len(used),
                )
            )
        if cfg.curve_metrics and used[0][1] is not None:
            for block in used[0][1].keys():
                rases = np.array([u[1][block]["rase"] for u in used])
                ci = np.array([u[1][block]["ci_all"] for u in used])
                scb = None
                if "scb_all" in used[0][1][block]:
                    scb = float(100.0 * np.mean([u[1][block]["scb_all"] for u in used]))
                curves.append(
                    CurveRow(
                        estimator=cfg.label,
                        block=block,
                        rase_mean=float(rases.mean()),
                        rase_sd=float(rases.std(ddof=1)) if len(rases) > 1 else 0.0,
                        ci_sim_pct=float(100.0 * ci.mean()),
                        scb_pct=scb,
                        n_used=len(used),
                    )
                )
    return SimulationReport(
        pointwise=tuple(pointwise),
        curves=tuple(curves),
        failures=failures,
        replicates=mc.replicates,
        warnings=tuple(warnings),
    )
