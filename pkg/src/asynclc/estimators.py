"""Point estimators and sandwich variances for the varying-coefficient model.

Local fits are kernel-weighted least squares solved through their normal
equations in a scaled basis (time offsets divided by the bandwidth), which
leaves the non-derivative coefficient blocks and their covariances unchanged
while keeping the small systems well conditioned. Zero-weight observations
are dropped before any accumulation, so deleting them from the input leaves
results bit-identical. Accumulations use fixed-order numpy reductions and
never BLAS, so results do not depend on thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import (
    CenteredDataset,
    LongitudinalDataset,
    MeanCurve,
    SubjectRecord,
    segment_sums,
)
from .errors import (
    DegenerateScale,
    EstimationFailed,
    InvalidBandwidth,
    InvalidParameter,
    NoLocalData,
    SingularFit,
    SingularLocalFit,
)
from .kernels import DEFAULT_FAMILY, Bandwidths, KernelFamily, eval_scaled_bi, eval_scaled_uni

__all__ = [
    "CoefficientEstimate",
    "DesignLayout",
    "CurveEstimate",
    "ConstantCoefficients",
    "METHODS",
    "Z95",
    "default_grid",
    "nw_mean",
    "center",
    "fit_one_step",
    "fit_centering",
    "fit_vcm",
    "fit_gamma_second_step",
    "normalize_longitudinal",
    "fit_constant_coefficients",
    "fit_curve",
]

Z95 = 1.96  # fixed pointwise 95% z-multiplier

METHODS = ("one-step", "two-step-centering", "two-step-vcm")

_SINGULAR_RTOL = 1e-10  # min eigenvalue threshold relative to mean diagonal
_SCALE_EPS = 1e-10


@dataclass(frozen=True)
class DesignLayout:
    """Block descriptors mapping a raw solution vector to named blocks."""

    blocks: tuple[tuple[str, int], ...]

    @property
    def dim(self) -> int:
        return sum(size for _, size in self.blocks)

    def block_slice(self, name: str) -> slice:
        lo = 0
        for block, size in self.blocks:
            if block == name:
                return slice(lo, lo + size)
            lo += size
        raise KeyError(name)

    def extract(self, vec: np.ndarray, name: str) -> np.ndarray:
        return vec[self.block_slice(name)]

    @classmethod
    def one_step(cls, p: int, q: int) -> "DesignLayout":
        return cls((("beta", p), ("beta_deriv", p), ("gamma", q), ("gamma_deriv", q)))

    @classmethod
    def centering(cls, p: int) -> "DesignLayout":
        return cls((("beta", p), ("beta_deriv", p)))

    @classmethod
    def vcm(cls, p: int) -> "DesignLayout":
        return cls((("alpha", 1), ("beta", p), ("alpha_deriv", 1), ("beta_deriv", p)))

    @classmethod
    def second_step(cls, q: int) -> "DesignLayout":
        return cls((("gamma", q), ("gamma_deriv", q)))


@dataclass(frozen=True)
class CoefficientEstimate:
    """A local fit at one evaluation time.

    coef / deriv hold the named non-derivative / derivative blocks; cov is
    the sandwich covariance of coef. `solution` is the full solution vector
    in natural units laid out per `solution_layout` (derivatives included),
    kept for residual reconstruction.
    """

    t: float
    coef: np.ndarray
    deriv: np.ndarray
    cov: np.ndarray
    n_effective: int
    blocks: tuple[tuple[str, int], ...]
    solution: np.ndarray
    solution_layout: DesignLayout

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def block(self, name: str) -> np.ndarray:
        lo = 0
        for block, size in self.blocks:
            if block == name:
                return self.coef[lo : lo + size]
            lo += size
        raise KeyError(name)


def default_grid(n_points: int = 181, start: float = 0.05, stop: float = 0.95) -> np.ndarray:
    """Default reporting grid: 181 equally spaced points on [0.05, 0.95]."""
    return np.linspace(start, stop, n_points)


# ---------------------------------------------------------------------------
# shared numerical helpers


def _check_singular(a: np.ndarray, t) -> None:
    dim = a.shape[0]
    mean_diag = np.trace(a) / dim
    if not np.isfinite(mean_diag) or mean_diag <= 0.0:
        raise SingularLocalFit(t, "normal matrix has nonpositive trace")
    if np.linalg.eigvalsh(a)[0] < _SINGULAR_RTOL * mean_diag:
        raise SingularLocalFit(t)


def _sandwich(bread: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """bread^{-1} (sum of per-subject score outer products) bread^{-1}."""
    meat = np.einsum("ni,nj->ij", scores, scores)
    half = np.linalg.solve(bread, meat)
    cov = np.linalg.solve(bread, half.T).T
    return 0.5 * (cov + cov.T)


def _group_starts(subject_idx: np.ndarray, n: int) -> np.ndarray:
    counts = np.bincount(subject_idx, minlength=n)
    return np.concatenate(([0], np.cumsum(counts)))


def _wsum_mat(w: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum_n w_n rows_n rows_n^T without BLAS."""
    return np.einsum("ni,nj->ij", rows * w[:, None], rows)


def _wsum_vec(w: np.ndarray, rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("ni,n->i", rows, w * y)


# ---------------------------------------------------------------------------
# Nadaraya-Watson means and centering


def _nw_values(
    eval_times: np.ndarray,
    obs_times: np.ndarray,
    obs_values: np.ndarray,
    h: float,
    family: KernelFamily,
    chunk: int = 512,
):
    """NW means of obs_values (N,) or (N, k) at eval_times; None where no mass."""
    eval_times = np.asarray(eval_times, dtype=float)
    values = obs_values if obs_values.ndim == 2 else obs_values[:, None]
    out = np.empty((len(eval_times), values.shape[1]))
    mass = np.empty(len(eval_times))
    for lo in range(0, len(eval_times), chunk):
        sl = slice(lo, lo + chunk)
        w = eval_scaled_uni(family, h, eval_times[sl, None] - obs_times[None, :])
        denom = np.einsum("eo->e", w)
        num = np.einsum("eo,ok->ek", w, values)
        mass[sl] = denom
        with np.errstate(invalid="ignore", divide="ignore"):
            out[sl] = num / denom[:, None]
    return out, mass


def nw_mean(dataset, t: float, h: float, target: str = "response", family=DEFAULT_FAMILY):
    """Kernel-weighted mean of the response (scalar) or covariates (p-vector) at t."""
    sf = dataset.sync_flat
    if target not in ("response", "covariates"):
        raise InvalidParameter(f"unknown target {target!r}")
    values = sf.y if target == "response" else sf.x
    out, mass = _nw_values(np.array([t]), sf.t, values, h, family)
    if mass[0] <= 0.0:
        raise NoLocalData(t, h)
    return float(out[0, 0]) if target == "response" else out[0]


def center(dataset: LongitudinalDataset, h: float, family=DEFAULT_FAMILY) -> CenteredDataset:
    """Subtract NW mean curves from the response and each covariate column."""
    sf = dataset.sync_flat
    my, mass = _nw_values(sf.t, sf.t, sf.y, h, family)
    if np.any(mass <= 0.0):
        raise NoLocalData(float(sf.t[int(np.argmax(mass <= 0.0))]), h)
    mx, _ = _nw_values(sf.t, sf.t, sf.x, h, family)
    my = my[:, 0]
    centered = []
    for i, s in enumerate(dataset.subjects):
        sl = slice(sf.starts[i], sf.starts[i + 1])
        centered.append(
            SubjectRecord(
                id=s.id,
                sync_times=s.sync_times,
                responses=s.responses - my[sl],
                sync_covariates=s.sync_covariates - mx[sl],
                async_times=s.async_times,
                async_covariates=s.async_covariates,
            )
        )
    return CenteredDataset(
        source=dataset,
        h=float(h),
        subjects=tuple(centered),
        mean_y=MeanCurve(sf.t.copy(), my, float(h)),
        mean_x=MeanCurve(sf.t.copy(), mx, float(h)),
    )


# ---------------------------------------------------------------------------
# local fits


def fit_one_step(
    dataset, t: float, h1: float, h2: float, family=DEFAULT_FAMILY
) -> CoefficientEstimate:
    """Joint local-linear fit of (beta, gamma) with bivariate kernel weights."""
    p, q = dataset.p, dataset.q
    if q < 1:
        raise InvalidParameter("one-step fit requires at least one asynchronous covariate")
    pf = dataset.pair_flat
    w = eval_scaled_bi(family, h1, h2, pf.t1 - t, pf.t2 - t)
    nz = w > 0.0
    if not nz.any():
        raise NoLocalData(t, (h1, h2))
    w = w[nz]
    u1 = (pf.t1[nz] - t) / h1
    u2 = (pf.t2[nz] - t) / h2
    x, z, y = pf.x[nz], pf.z[nz], pf.y[nz]
    rows = np.concatenate([x, x * u1[:, None], z, z * u2[:, None]], axis=1)
    normal = _wsum_mat(w, rows)
    _check_singular(normal, t)
    sol = np.linalg.solve(normal, _wsum_vec(w, rows, y))
    resid = y - np.einsum("ni,i->n", rows, sol)
    starts = _group_starts(pf.subject[nz], dataset.n)
    scores = segment_sums(rows * (w * resid)[:, None], starts)
    cov_full = _sandwich(normal, scores)
    keep = np.r_[0:p, 2 * p : 2 * p + q]
    solution = sol.copy()
    solution[p : 2 * p] /= h1
    solution[2 * p + q :] /= h2
    return CoefficientEstimate(
        t=float(t),
        coef=np.concatenate([sol[0:p], sol[2 * p : 2 * p + q]]),
        deriv=np.concatenate([solution[p : 2 * p], solution[2 * p + q :]]),
        cov=cov_full[np.ix_(keep, keep)],
        n_effective=int(nz.sum()),
        blocks=(("beta", p), ("gamma", q)),
        solution=solution,
        solution_layout=DesignLayout.one_step(p, q),
    )


def fit_centering(
    centered: CenteredDataset, t: float, h: float, family=DEFAULT_FAMILY
) -> CoefficientEstimate:
    """First-stage local-linear fit on centered data via the S/q closed form."""
    p = centered.p
    sf = centered.sync_flat
    kh = eval_scaled_uni(family, h, sf.t - t)
    nz = kh > 0.0
    if not nz.any():
        raise NoLocalData(t, h)
    kh = kh[nz]
    u = (sf.t[nz] - t) / h
    x, y = sf.x[nz], sf.y[nz]
    n = centered.n
    base = kh / (n * h)
    s0 = _wsum_mat(base, x)
    s1 = np.einsum("ni,nj->ij", x * (base * u)[:, None], x)
    s2 = np.einsum("ni,nj->ij", x * (base * u * u)[:, None], x)
    q0 = _wsum_vec(base, x, y)
    q1 = _wsum_vec(base * u, x, y)
    m = np.block([[s0, s1], [s1, s2]])
    _check_singular(m, t)
    sol = np.linalg.solve(m, np.concatenate([q0, q1]))  # (beta, h * beta_deriv)
    rows = np.concatenate([x, x * u[:, None]], axis=1)
    bread = _wsum_mat(kh, rows)
    resid = y - np.einsum("ni,i->n", rows, sol)
    starts = _group_starts(sf.subject[nz], n)
    scores = segment_sums(rows * (kh * resid)[:, None], starts)
    cov_full = _sandwich(bread, scores)
    solution = np.concatenate([sol[:p], sol[p:] / h])
    return CoefficientEstimate(
        t=float(t),
        coef=solution[:p].copy(),
        deriv=solution[p:].copy(),
        cov=cov_full[:p, :p],
        n_effective=int(nz.sum()),
        blocks=(("beta", p),),
        solution=solution,
        solution_layout=DesignLayout.centering(p),
    )


def fit_vcm(dataset, t: float, h: float, family=DEFAULT_FAMILY) -> CoefficientEstimate:
    """Local-linear fit of the response on (1, X) with a nonparametric intercept."""
    p = dataset.p
    sf = dataset.sync_flat
    kh = eval_scaled_uni(family, h, sf.t - t)
    nz = kh > 0.0
    if not nz.any():
        raise NoLocalData(t, h)
    kh = kh[nz]
    u = (sf.t[nz] - t) / h
    x, y = sf.x[nz], sf.y[nz]
    ones = np.ones((len(u), 1))
    rows = np.concatenate([ones, x, u[:, None], x * u[:, None]], axis=1)
    normal = _wsum_mat(kh, rows)
    _check_singular(normal, t)
    sol = np.linalg.solve(normal, _wsum_vec(kh, rows, y))
    resid = y - np.einsum("ni,i->n", rows, sol)
    starts = _group_starts(sf.subject[nz], dataset.n)
    scores = segment_sums(rows * (kh * resid)[:, None], starts)
    cov_full = _sandwich(normal, scores)
    k = p + 1
    solution = np.concatenate([sol[:k], sol[k:] / h])
    return CoefficientEstimate(
        t=float(t),
        coef=solution[:k].copy(),
        deriv=solution[k:].copy(),
        cov=cov_full[:k, :k],
        n_effective=int(nz.sum()),
        blocks=(("alpha", 1), ("beta", p)),
        solution=solution,
        solution_layout=DesignLayout.vcm(p),
    )


def _as_beta_fn(beta_curve, p: int) -> Callable[[np.ndarray], np.ndarray]:
    """Normalize a beta curve (CurveEstimate or callable) to times -> (m, p)."""
    if isinstance(beta_curve, CurveEstimate):
        return beta_curve.coef_fn("beta")

    def wrapped(times: np.ndarray) -> np.ndarray:
        out = np.asarray(beta_curve(times), dtype=float)
        if out.ndim == 1:
            if p != 1:
                raise InvalidParameter("beta function returned a 1-d array for p > 1")
            out = out[:, None]
        return out

    return wrapped


def fit_gamma_second_step(
    dataset, beta_curve, t: float, h1: float, h2: float, family=DEFAULT_FAMILY
) -> CoefficientEstimate:
    """Second-stage local-linear fit of partial residuals on Z."""
    p, q = dataset.p, dataset.q
    if q < 1:
        raise InvalidParameter("second-stage fit requires at least one asynchronous covariate")
    beta_fn = _as_beta_fn(beta_curve, p)
    pf = dataset.pair_flat
    w = eval_scaled_bi(family, h1, h2, pf.t1 - t, pf.t2 - t)
    nz = w > 0.0
    if not nz.any():
        raise NoLocalData(t, (h1, h2))
    w = w[nz]
    t1, z, y = pf.t1[nz], pf.z[nz], pf.y[nz]
    beta_vals = beta_fn(t1)
    partial = y - np.einsum("ni,ni->n", pf.x[nz], beta_vals)
    u2 = (pf.t2[nz] - t) / h2
    rows = np.concatenate([z, z * u2[:, None]], axis=1)
    normal = _wsum_mat(w, rows)
    _check_singular(normal, t)
    sol = np.linalg.solve(normal, _wsum_vec(w, rows, partial))
    resid = partial - np.einsum("ni,i->n", rows, sol)
    starts = _group_starts(pf.subject[nz], dataset.n)
    scores = segment_sums(rows * (w * resid)[:, None], starts)
    cov_full = _sandwich(normal, scores)
    solution = np.concatenate([sol[:q], sol[q:] / h2])
    return CoefficientEstimate(
        t=float(t),
        coef=solution[:q].copy(),
        deriv=solution[q:].copy(),
        cov=cov_full[:q, :q],
        n_effective=int(nz.sum()),
        blocks=(("gamma", q),),
        solution=solution,
        solution_layout=DesignLayout.second_step(q),
    )


# ---------------------------------------------------------------------------
# longitudinal normalization and constant-coefficient fits


def _parse_column(dataset, column: str) -> tuple[str, int]:
    column = column.strip().lower()
    kind, idx = column[0], column[1:]
    if kind not in ("x", "z") or not idx.isdigit():
        raise InvalidParameter(f"column selector must look like 'x1' or 'z2', got {column!r}")
    j = int(idx) - 1
    bound = dataset.p if kind == "x" else dataset.q
    if not 0 <= j < bound:
        raise InvalidParameter(f"column {column!r} out of range")
    return kind, j


def normalize_longitudinal(
    dataset: LongitudinalDataset, h: float, column: str, family=DEFAULT_FAMILY
) -> LongitudinalDataset:
    """Standardize one covariate column.

    Longitudinal columns are standardized pointwise using NW estimates of the
    column's mean and second moment over its own observation process; columns
    that are constant within every subject (baseline covariates) use the
    cross-subject sample mean and population SD instead.
    """
    kind, j = _parse_column(dataset, column)
    per_subject = [
        (s.sync_times, s.sync_covariates[:, j]) if kind == "x" else (s.async_times, s.async_covariates[:, j])
        for s in dataset.subjects
    ]
    baseline = all(vals.size and np.all(vals == vals[0]) for _, vals in per_subject)
    if baseline:
        reps = np.array([vals[0] for _, vals in per_subject])
        sd = reps.std(ddof=0)
        if sd <= _SCALE_EPS:
            raise DegenerateScale()
        mu = reps.mean()
        new_cols = [(vals - mu) / sd for _, vals in per_subject]
    else:
        times = np.concatenate([t for t, _ in per_subject])
        vals = np.concatenate([v for _, v in per_subject])
        m1, mass = _nw_values(times, times, vals, h, family)
        if np.any(mass <= 0.0):
            raise NoLocalData(float(times[int(np.argmax(mass <= 0.0))]), h)
        m2, _ = _nw_values(times, times, vals * vals, h, family)
        var = m2[:, 0] - m1[:, 0] ** 2
        if np.any(var <= _SCALE_EPS):
            raise DegenerateScale(float(times[int(np.argmax(var <= _SCALE_EPS))]))
        normalized = (vals - m1[:, 0]) / np.sqrt(var)
        new_cols, lo = [], 0
        for t_i, _ in per_subject:
            new_cols.append(normalized[lo : lo + len(t_i)])
            lo += len(t_i)
    subjects = []
    for s, col in zip(dataset.subjects, new_cols):
        if kind == "x":
            mat = s.sync_covariates.copy()
            mat[:, j] = col
            subjects.append(
                SubjectRecord(s.id, s.sync_times, s.responses, mat, s.async_times, s.async_covariates)
            )
        else:
            mat = s.async_covariates.copy()
            mat[:, j] = col
            subjects.append(
                SubjectRecord(s.id, s.sync_times, s.responses, s.sync_covariates, s.async_times, mat)
            )
    return LongitudinalDataset(tuple(subjects), dataset.p, dataset.q, dataset.time_rescale)


@dataclass(frozen=True)
class ConstantCoefficients:
    """Constant-coefficient estimates with clustered sandwich SEs."""

    beta: np.ndarray
    beta_cov: np.ndarray
    gamma: np.ndarray | None
    gamma_cov: np.ndarray | None
    x_cols: tuple[int, ...]

    @property
    def beta_se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.beta_cov), 0.0))

    @property
    def gamma_se(self) -> np.ndarray | None:
        if self.gamma_cov is None:
            return None
        return np.sqrt(np.maximum(np.diag(self.gamma_cov), 0.0))


def fit_constant_coefficients(
    data,
    h: float | None = None,
    x_cols: Sequence[int] | None = None,
    include_gamma: bool = True,
    family=DEFAULT_FAMILY,
) -> ConstantCoefficients:
    """Constant beta by pooled least squares; constant gamma by pooled
    kernel-weighted least squares on the partial residuals.

    Pass a CenteredDataset (the usual case) so the pooled regressions run on
    mean-centered values; asynchronous covariates should be mean-centered or
    normalized beforehand. The gamma stage weights every (t1, t2) pair by
    K((t1 - t2)/h)/h.
    """
    sf = data.sync_flat
    cols = tuple(range(data.p)) if x_cols is None else tuple(x_cols)
    x = sf.x[:, cols]
    bread = np.einsum("ni,nj->ij", x, x)
    mean_diag = np.trace(bread) / max(len(cols), 1)
    if mean_diag <= 0.0 or np.linalg.eigvalsh(bread)[0] < _SINGULAR_RTOL * mean_diag:
        raise SingularFit("pooled synchronous design is rank deficient")
    beta = np.linalg.solve(bread, np.einsum("ni,n->i", x, sf.y))
    resid = sf.y - np.einsum("ni,i->n", x, beta)
    scores = segment_sums(x * resid[:, None], sf.starts)
    beta_cov = _sandwich(bread, scores)

    gamma = gamma_cov = None
    if include_gamma and data.q >= 1:
        if h is None:
            raise InvalidBandwidth("a bandwidth is required for the gamma stage")
        pf = data.pair_flat
        w = eval_scaled_uni(family, h, pf.t1 - pf.t2)
        nz = w > 0.0
        if not nz.any():
            raise NoLocalData(None, h)
        w = w[nz]
        z = pf.z[nz]
        partial = pf.y[nz] - np.einsum("ni,i->n", pf.x[nz][:, cols], beta)
        bread2 = _wsum_mat(w, z)
        mean_diag = np.trace(bread2) / data.q
        if mean_diag <= 0.0 or np.linalg.eigvalsh(bread2)[0] < _SINGULAR_RTOL * mean_diag:
            raise SingularFit("pooled asynchronous design is rank deficient")
        gamma = np.linalg.solve(bread2, _wsum_vec(w, z, partial))
        resid2 = partial - np.einsum("ni,i->n", z, gamma)
        starts = _group_starts(pf.subject[nz], data.n)
        scores2 = segment_sums(z * (w * resid2)[:, None], starts)
        gamma_cov = _sandwich(bread2, scores2)

    return ConstantCoefficients(beta, beta_cov, gamma, gamma_cov, cols)


# ---------------------------------------------------------------------------
# curve fitting


@dataclass
class CurveEstimate:
    """Pointwise coefficient estimates over a time grid with 95% CIs.

    Grid points whose fit failed are flagged in `ok` (rows are NaN), never
    dropped. Stage solution vectors and the centered dataset are retained so
    confidence-band machinery can rebuild residuals without refitting.
    """

    grid: np.ndarray
    method: str
    blocks: tuple[tuple[str, int], ...]
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    ok: np.ndarray
    bandwidths: Bandwidths
    family: KernelFamily
    p: int
    q: int
    first_stage: np.ndarray | None = None
    second_stage: np.ndarray | None = None
    centered: CenteredDataset | None = None
    bands: dict = field(default_factory=dict)
    beta_fn_internal: Callable | None = None  # extended first-stage interpolant

    @property
    def ci_lo(self) -> np.ndarray:
        return self.coef - Z95 * self.se

    @property
    def ci_hi(self) -> np.ndarray:
        return self.coef + Z95 * self.se

    def block_slice(self, name: str) -> slice:
        lo = 0
        for block, size in self.blocks:
            if block == name:
                return slice(lo, lo + size)
            lo += size
        raise KeyError(name)

    def coef_fn(self, block: str = "beta") -> Callable[[np.ndarray], np.ndarray]:
        """Linear interpolant of a coefficient block over the ok grid points."""
        sl = self.block_slice(block)
        grid_ok = self.grid[self.ok]
        vals = self.coef[self.ok, sl]
        if grid_ok.size == 0:
            raise EstimationFailed("no successful grid point to interpolate")

        def fn(times: np.ndarray) -> np.ndarray:
            times = np.atleast_1d(np.asarray(times, dtype=float))
            return np.column_stack([np.interp(times, grid_ok, vals[:, j]) for j in range(vals.shape[1])])

        return fn


def _interp_beta_fn(dataset, method, centered, grid, stage1_coef, ok1, stage1_blocks, bandwidths, family):
    """First-stage beta interpolant for the second step.

    The reporting grid may not reach every synchronous time that carries a
    positive pair weight (windows at the first/last grid point extend h1
    beyond it), so the grid is padded with auxiliary first-stage fits there
    rather than clamping the interpolation at the hull.
    """
    p = dataset.p
    beta_lo = 1 if method == "two-step-vcm" else 0
    grid_pts = list(grid[ok1])
    vals = list(stage1_coef[ok1][:, beta_lo : beta_lo + p])
    spacing = grid[1] - grid[0] if len(grid) > 1 else bandwidths.h1
    for lo, hi in ((grid[0] - bandwidths.h1, grid[0]), (grid[-1], grid[-1] + bandwidths.h1)):
        extra = np.arange(max(lo, 0.0), min(hi, 1.0) + 1e-12, spacing)
        for t in extra:
            if grid[0] <= t <= grid[-1]:
                continue
            try:
                if method == "two-step-centering":
                    est = fit_centering(centered, float(t), bandwidths.h, family)
                    vals.append(est.coef)
                else:
                    est = fit_vcm(dataset, float(t), bandwidths.h, family)
                    vals.append(est.coef[1:])
                grid_pts.append(float(t))
            except (NoLocalData, SingularLocalFit):
                continue
    order = np.argsort(grid_pts)
    pts = np.asarray(grid_pts)[order]
    vmat = np.asarray(vals)[order]

    def fn(times: np.ndarray) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.column_stack([np.interp(times, pts, vmat[:, j]) for j in range(p)])

    return fn


def _validate_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidParameter("grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) <= 0.0):
        raise InvalidParameter("grid must be strictly increasing")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise InvalidParameter("grid must lie within [0, 1]")
    return grid


def fit_curve(
    dataset: LongitudinalDataset,
    method: str,
    bandwidths: Bandwidths,
    grid: np.ndarray | None = None,
    family=DEFAULT_FAMILY,
) -> CurveEstimate:
    """Batch the pointwise fits for one estimation method over a grid.

    For two-step methods the second stage runs only when both h1 and h2 are
    set; leaving them unset fits the first stage alone (as bandwidth
    selection requires before the second-stage pair is chosen).
    """
    if method not in METHODS:
        raise InvalidParameter(f"method must be one of {METHODS}, got {method!r}")
    grid = default_grid() if grid is None else _validate_grid(grid)
    p, q = dataset.p, dataset.q
    g = len(grid)
    with_gamma = q >= 1 and (
        method == "one-step" or (bandwidths.h1 is not None and bandwidths.h2 is not None)
    )

    if method == "one-step":
        bandwidths.require("h1", "h2")
        blocks = (("beta", p), ("gamma", q))
        k = p + q
        coef = np.full((g, k), np.nan)
        se = np.full((g, k), np.nan)
        ok = np.zeros(g, dtype=bool)
        first = np.full((g, 2 * (p + q)), np.nan)
        for i, t in enumerate(grid):
            try:
                est = fit_one_step(dataset, t, bandwidths.h1, bandwidths.h2, family)
            except (NoLocalData, SingularLocalFit):
                continue
            coef[i] = est.coef
            se[i] = est.se
            first[i] = est.solution
            ok[i] = True
        curve = CurveEstimate(
            grid=grid,
            method=method,
            blocks=blocks,
            names=_names(blocks),
            coef=coef,
            se=se,
            ok=ok,
            bandwidths=bandwidths,
            family=family,
            p=p,
            q=q,
            first_stage=first,
        )
    else:
        bandwidths.require("h")
        if with_gamma:
            bandwidths.require("h1", "h2")
        centered = center(dataset, bandwidths.h, family) if method == "two-step-centering" else None
        stage1_blocks = (("beta", p),) if method == "two-step-centering" else (("alpha", 1), ("beta", p))
        k1 = sum(size for _, size in stage1_blocks)
        blocks = stage1_blocks + ((("gamma", q),) if with_gamma else ())
        k = k1 + (q if with_gamma else 0)
        coef = np.full((g, k), np.nan)
        se = np.full((g, k), np.nan)
        ok1 = np.zeros(g, dtype=bool)
        first = np.full((g, 2 * k1), np.nan)
        for i, t in enumerate(grid):
            try:
                if method == "two-step-centering":
                    est = fit_centering(centered, t, bandwidths.h, family)
                else:
                    est = fit_vcm(dataset, t, bandwidths.h, family)
            except (NoLocalData, SingularLocalFit):
                continue
            coef[i, :k1] = est.coef
            se[i, :k1] = est.se
            first[i] = est.solution
            ok1[i] = True
        ok = ok1.copy()
        second = None
        if with_gamma:
            if not ok1.any():
                raise EstimationFailed("first stage failed at every grid point")
            beta_fn = _interp_beta_fn(
                dataset, method, centered, grid, coef[:, :k1], ok1, stage1_blocks, bandwidths, family
            )
            second = np.full((g, 2 * q), np.nan)
            for i, t in enumerate(grid):
                try:
                    est = fit_gamma_second_step(
                        dataset, beta_fn, t, bandwidths.h1, bandwidths.h2, family
                    )
                except (NoLocalData, SingularLocalFit):
                    ok[i] = False
                    continue
                coef[i, k1:] = est.coef
                se[i, k1:] = est.se
                second[i] = est.solution
        curve = CurveEstimate(
            grid=grid,
            method=method,
            blocks=blocks,
            names=_names(blocks),
            coef=coef,
            se=se,
            ok=ok,
            bandwidths=bandwidths,
            family=family,
            p=p,
            q=q,
            first_stage=first,
            second_stage=second,
            centered=centered,
            beta_fn_internal=beta_fn if with_gamma else None,
        )

    if not curve.ok.any():
        raise EstimationFailed("every grid point failed")
    return curve


def _names(blocks: tuple[tuple[str, int], ...]) -> tuple[str, ...]:
    names: list[str] = []
    for block, size in blocks:
        if size == 1:
            names.append(block)
        else:
            names.extend(f"{block}{j + 1}" for j in range(size))
    return tuple(names)
