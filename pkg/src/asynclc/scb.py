"""Wild-bootstrap simultaneous confidence bands for coefficient curves.

The band machinery never refits: per grid point it forms kernel-weighted
residuals of the already-fitted local model, reduces them to per-subject
score vectors v_i(t) = f_n(t)^{-1} s_i(t), and resamples only through i.i.d.
mean-0/SD-1 subject multipliers. The sup statistic of each replicate is
sup_t |a(t)^T Qhat_n^u(t)| and the band half-width is the empirical
(1 - alpha) percentile of the B sup draws.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from math import ceil

import numpy as np

from .data import segment_sums
from .errors import InvalidParameter, SingularLocalFit
from .estimators import CurveEstimate, _as_beta_fn, _group_starts
from .kernels import DEFAULT_FAMILY, eval_scaled_bi, eval_scaled_uni
from .rng import substream

__all__ = [
    "MultiplierLaw",
    "ResidualBundle",
    "ScbResult",
    "kernel_weighted_residuals",
    "q_hat",
    "subject_terms",
    "bootstrap_replicate",
    "bootstrap_band",
    "percentile_order_stat",
]


class MultiplierLaw(enum.Enum):
    RADEMACHER = "rademacher"
    STANDARD_NORMAL = "standard-normal"


def draw_multipliers(law: MultiplierLaw, rng: np.random.Generator, n: int) -> np.ndarray:
    if law is MultiplierLaw.RADEMACHER:
        return rng.integers(0, 2, size=n) * 2.0 - 1.0
    return rng.standard_normal(n)


@dataclass(frozen=True)
class ResidualBundle:
    """Per-pair kernel-weighted residuals at one evaluation time.

    r = K_{h1,h2}(t1 - t, t2 - t) * (response - local model prediction),
    restricted to pairs with positive kernel weight. x/z carry the matching
    covariate rows; starts delimit subjects for per-subject reductions.
    """

    t: float
    weights: np.ndarray  # (N,) kernel weights
    r: np.ndarray        # (N,) kernel-weighted residuals
    x: np.ndarray        # (N, p)
    z: np.ndarray        # (N, q)
    starts: np.ndarray   # (n+1,)
    n: int


def kernel_weighted_residuals(dataset, rho, t: float, h1: float, h2: float, family=DEFAULT_FAMILY) -> ResidualBundle:
    """Kernel-weighted residuals of the one-step local model at t.

    rho is the natural solution vector (beta, beta_deriv, gamma, gamma_deriv).
    """
    p, q = dataset.p, dataset.q
    rho = np.asarray(rho, dtype=float)
    pf = dataset.pair_flat
    w = eval_scaled_bi(family, h1, h2, pf.t1 - t, pf.t2 - t)
    nz = w > 0.0
    w = w[nz]
    t1, t2 = pf.t1[nz], pf.t2[nz]
    x, z, y = pf.x[nz], pf.z[nz], pf.y[nz]
    rows = np.concatenate([x, x * (t1 - t)[:, None], z, z * (t2 - t)[:, None]], axis=1)
    resid = y - np.einsum("ni,i->n", rows, rho)
    return ResidualBundle(
        t=float(t),
        weights=w,
        r=w * resid,
        x=x,
        z=z,
        starts=_group_starts(pf.subject[nz], dataset.n),
        n=dataset.n,
    )


def _qn_vector(v: np.ndarray, u: np.ndarray | None, n: int) -> np.ndarray:
    """n^{-1} sum_i u_i v_i with a fixed reduction order (u=None means ones)."""
    if u is not None:
        v = u[:, None] * v
    return np.sum(v, axis=0) / n


def subject_terms(bundle: ResidualBundle, target: str) -> np.ndarray:
    """Per-subject vectors v_i = f_n^{-1} sum_pairs row * r, shape (n, dim).

    target "gamma" reduces against Z rows with weight matrix f_n; "beta"
    against X rows with g_n.
    """
    if target == "gamma":
        rows = bundle.z
    elif target == "beta":
        rows = bundle.x
    else:
        raise InvalidParameter(f"target must be 'beta' or 'gamma', got {target!r}")
    if rows.shape[1] == 0:
        raise InvalidParameter(f"no covariate columns for target {target!r}")
    fn = np.einsum("ni,nj->ij", rows * bundle.weights[:, None], rows) / bundle.n
    mean_diag = np.trace(fn) / rows.shape[1]
    if mean_diag <= 0.0 or np.linalg.eigvalsh(fn)[0] < 1e-10 * mean_diag:
        raise SingularLocalFit(bundle.t, "weight matrix for the band process is singular")
    scores = segment_sums(rows * bundle.r[:, None], bundle.starts)
    return np.ascontiguousarray(np.linalg.solve(fn, scores.T).T)


def q_hat(dataset, bundle: ResidualBundle, t: float, target: str) -> np.ndarray:
    """Qhat_n(t) (target gamma) or Jhat_n(t) (target beta)."""
    return _qn_vector(subject_terms(bundle, target), None, bundle.n)


def bootstrap_replicate(terms: list[np.ndarray], u: np.ndarray) -> np.ndarray:
    """The multiplier process at every grid point for one replicate.

    terms[g] is the (n, dim) per-subject matrix at grid point g; returns the
    (G, dim) array of Qhat_n^u values. With u identically 1 this reproduces
    q_hat bit-for-bit at every grid point.
    """
    n = terms[0].shape[0]
    return np.stack([_qn_vector(v, u, n) for v in terms])


@dataclass(frozen=True)
class ScbResult:
    """A simultaneous confidence band: center(t) +/- c_alpha over the grid."""

    grid: np.ndarray
    center: np.ndarray
    c_alpha: float
    alpha: float
    B: int
    sup_stats: np.ndarray
    seed: object
    target: str

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.c_alpha

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.c_alpha


def percentile_order_stat(sup_stats: np.ndarray, alpha: float) -> float:
    """The ceil((1 - alpha) * B)-th order statistic of the sup draws."""
    b = len(sup_stats)
    rank = min(max(ceil((1.0 - alpha) * b), 1), b)
    return float(np.sort(sup_stats)[rank - 1])


def _two_step_gamma_terms(dataset, curve: CurveEstimate, grid_idx: np.ndarray):
    """Per-grid subject terms for the two-step gamma process."""
    h1, h2 = curve.bandwidths.h1, curve.bandwidths.h2
    beta_fn = curve.beta_fn_internal or curve.coef_fn("beta")
    pf = dataset.pair_flat
    partial = pf.y - np.einsum("ni,ni->n", pf.x, beta_fn(pf.t1))
    q = dataset.q
    terms = []
    for g in grid_idx:
        t = curve.grid[g]
        w = eval_scaled_bi(curve.family, h1, h2, pf.t1 - t, pf.t2 - t)
        nz = w > 0.0
        w_nz = w[nz]
        z = pf.z[nz]
        phi = curve.second_stage[g]
        rows = np.concatenate([z, z * (pf.t2[nz] - t)[:, None]], axis=1)
        r = w_nz * (partial[nz] - np.einsum("ni,i->n", rows, phi))
        bundle = ResidualBundle(
            t=float(t),
            weights=w_nz,
            r=r,
            x=pf.x[nz],
            z=z,
            starts=_group_starts(pf.subject[nz], dataset.n),
            n=dataset.n,
        )
        terms.append(subject_terms(bundle, "gamma"))
    return terms


def _two_step_beta_terms(dataset, curve: CurveEstimate, grid_idx: np.ndarray):
    """Per-grid subject terms for the first-stage beta (or alpha/beta) process."""
    h = curve.bandwidths.h
    if curve.method == "two-step-centering":
        sf = curve.centered.sync_flat
        k1 = curve.p
    else:
        sf = dataset.sync_flat
        k1 = curve.p + 1
    n = dataset.n
    terms = []
    for g in grid_idx:
        t = curve.grid[g]
        kh = eval_scaled_uni(curve.family, h, sf.t - t)
        nz = kh > 0.0
        kh_nz = kh[nz]
        x, y = sf.x[nz], sf.y[nz]
        dt = (sf.t[nz] - t)[:, None]
        if curve.method == "two-step-centering":
            base = x
            rows = np.concatenate([x, x * dt], axis=1)
        else:
            ones = np.ones((len(kh_nz), 1))
            base = np.concatenate([ones, x], axis=1)
            rows = np.concatenate([ones, x, dt, x * dt], axis=1)
        theta = curve.first_stage[g]
        r = kh_nz * (y - np.einsum("ni,i->n", rows, theta))
        gn = np.einsum("ni,nj->ij", base * kh_nz[:, None], base) / n
        mean_diag = np.trace(gn) / k1
        if mean_diag <= 0.0 or np.linalg.eigvalsh(gn)[0] < 1e-10 * mean_diag:
            raise SingularLocalFit(float(t), "weight matrix for the band process is singular")
        scores = segment_sums(base * r[:, None], _group_starts(sf.subject[nz], n))
        terms.append(np.ascontiguousarray(np.linalg.solve(gn, scores.T).T))
    return terms


def _one_step_terms(dataset, curve: CurveEstimate, grid_idx: np.ndarray, target: str):
    terms = []
    for g in grid_idx:
        bundle = kernel_weighted_residuals(
            dataset,
            curve.first_stage[g],
            float(curve.grid[g]),
            curve.bandwidths.h1,
            curve.bandwidths.h2,
            curve.family,
        )
        terms.append(subject_terms(bundle, target))
    return terms


def _resolve_contrast(curve: CurveEstimate, target: str, coef: int, contrast, dim: int, grid):
    """Per-grid contrast matrix (G, dim) and the matching center columns."""
    g = len(grid)
    if contrast is None:
        vec = np.zeros(dim)
        vec[coef] = 1.0
        a = np.tile(vec, (g, 1))
    elif callable(contrast):
        a = np.stack([np.asarray(contrast(t), dtype=float) for t in grid])
    else:
        a = np.tile(np.asarray(contrast, dtype=float), (g, 1))
    if a.shape != (g, dim):
        raise InvalidParameter(f"contrast must have dimension {dim}")
    return a


def bootstrap_band(
    dataset,
    curve: CurveEstimate,
    target: str = "gamma",
    coef: int = 0,
    contrast=None,
    B: int = 1000,
    alpha: float = 0.05,
    law: MultiplierLaw = MultiplierLaw.RADEMACHER,
    seed=0,
    multiplier_hook=None,
) -> ScbResult:
    """Wild-bootstrap simultaneous confidence band for one coefficient contrast.

    Multipliers are drawn once per subject per replicate (substream derived
    from (seed, replicate index)) and shared across all grid points, so bands
    for both targets built with the same seed share their multipliers.
    `multiplier_hook(rng, n)`, when given, replaces the law draw (testing
    instrumentation).
    """
    if B < 100:
        raise InvalidParameter(f"B must be >= 100, got {B}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must be in (0, 1), got {alpha}")
    if target not in ("beta", "gamma"):
        raise InvalidParameter(f"target must be 'beta' or 'gamma', got {target!r}")
    if target == "gamma" and curve.q < 1:
        raise InvalidParameter("no asynchronous covariates to band")

    grid_idx = np.flatnonzero(curve.ok)
    grid = curve.grid[grid_idx]
    if curve.method == "one-step":
        terms = _one_step_terms(dataset, curve, grid_idx, target)
        block = target
        dim = curve.p if target == "beta" else curve.q
    elif target == "gamma":
        terms = _two_step_gamma_terms(dataset, curve, grid_idx)
        block = "gamma"
        dim = curve.q
    else:
        terms = _two_step_beta_terms(dataset, curve, grid_idx)
        if curve.method == "two-step-vcm":
            block = None  # process covers (alpha, beta)
            dim = curve.p + 1
        else:
            block = "beta"
            dim = curve.p
    a = _resolve_contrast(curve, target, coef, contrast, dim, grid)

    if block is None:
        sl = slice(0, curve.p + 1)  # alpha + beta columns of the VCM curve
    else:
        sl = curve.block_slice(block)
    center = np.einsum("gk,gk->g", curve.coef[grid_idx, sl], a)

    # contrast-first per-subject scalars, (n, G)
    n = dataset.n
    psi = np.column_stack([np.einsum("nk,k->n", terms[g], a[g]) for g in range(len(grid))]) / n
    psi = np.ascontiguousarray(psi)

    sup_stats = np.empty(B)
    for b in range(B):
        rng = substream(seed, b)
        u = multiplier_hook(rng, n) if multiplier_hook is not None else draw_multipliers(law, rng, n)
        dev = np.einsum("n,ng->g", u, psi)
        sup_stats[b] = np.max(np.abs(dev))
    c_alpha = percentile_order_stat(sup_stats, alpha)
    return ScbResult(
        grid=grid,
        center=center,
        c_alpha=c_alpha,
        alpha=alpha,
        B=int(B),
        sup_stats=sup_stats,
        seed=seed,
        target=target,
    )
