"""Kernel-smoothed D-fold cross-validation for bandwidth selection.

Folds split subjects (never observations) so held-out prediction is honest
under within-subject correlation. The first-stage criterion averages the
ratio of kernel-weighted squared prediction error to kernel mass over folds;
the second-stage criterion does the same over (t1, t2) pairs with bivariate
weights, with the first-stage coefficient curve held fixed at its own
selected bandwidth. Fold averages use exact summation, so relabelling folds
cannot change the result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    FoldDegenerate,
    InvalidParameter,
    NoLocalData,
    SelectionFailed,
    SingularLocalFit,
)
from .estimators import _as_beta_fn, center
from .kernels import DEFAULT_FAMILY, eval_scaled_bi, eval_scaled_uni
from .rng import substream

__all__ = [
    "CvPlan",
    "CvResult",
    "fold_indices",
    "aspe_beta",
    "aspe_gamma",
    "select",
    "default_plan",
    "STAGES",
]

STAGES = ("first", "second", "one-step")

# per-stage search ranges (exponents of n) used for default candidate grids,
# and the wider theoretically-allowable ranges reported alongside selections
_SEARCH_RANGE = {"first": (0.8, 0.6), "second": (0.5, 0.4), "one-step": (0.5, 0.4)}
_THEORY_RANGE = {"first": (1.0, 0.2), "second": (0.5, 1.0 / 6.0), "one-step": (0.5, 1.0 / 6.0)}


@dataclass(frozen=True)
class CvPlan:
    """Candidates, fold layout, and evaluation times for one selection.

    candidates are bandwidths (first stage) or (h1, h2) pairs; they are
    deduplicated and kept sorted. With integrated=True the ASPE is averaged
    over eval_times, otherwise exactly one evaluation time is required.
    """

    candidates: tuple
    n_folds: int = 5
    eval_times: tuple[float, ...] = (0.3, 0.6, 0.9)
    integrated: bool = True
    seed: int = 0
    fold_assignment: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.fold_assignment is not None:
            folds = tuple(tuple(int(i) for i in fold) for fold in self.fold_assignment)
            if len(folds) != self.n_folds or any(not fold for fold in folds):
                raise InvalidParameter("fold_assignment must give n_folds nonempty folds")
            object.__setattr__(self, "fold_assignment", folds)
        if self.n_folds < 2:
            raise InvalidParameter("n_folds must be >= 2")
        cands = []
        for c in self.candidates:
            if isinstance(c, (tuple, list, np.ndarray)):
                pair = (float(c[0]), float(c[1]))
                if min(pair) <= 0:
                    raise InvalidParameter(f"candidate bandwidths must be positive: {c!r}")
                cands.append(pair)
            else:
                c = float(c)
                if c <= 0:
                    raise InvalidParameter(f"candidate bandwidths must be positive: {c!r}")
                cands.append(c)
        if not cands:
            raise InvalidParameter("at least one candidate is required")
        object.__setattr__(self, "candidates", tuple(sorted(set(cands))))
        times = tuple(float(t) for t in self.eval_times)
        if any(t < 0.0 or t > 1.0 for t in times):
            raise InvalidParameter("evaluation times must lie in [0, 1]")
        if not times:
            raise InvalidParameter("at least one evaluation time is required")
        if not self.integrated and len(times) != 1:
            raise InvalidParameter("pointwise selection requires exactly one evaluation time")
        object.__setattr__(self, "eval_times", times)


@dataclass(frozen=True)
class CvResult:
    stage: str
    aspe: dict
    chosen: object
    excluded: dict
    theoretical_range: tuple[float, float]
    fold_aspe: dict = None  # candidate -> {eval time -> per-fold A/B ratios}

    def __post_init__(self):
        object.__setattr__(self, "aspe", dict(self.aspe))
        object.__setattr__(self, "excluded", dict(self.excluded))
        object.__setattr__(self, "fold_aspe", dict(self.fold_aspe or {}))


def fold_indices(plan: CvPlan, n: int) -> list[np.ndarray]:
    """Deterministic partition of subject indices (seeded round-robin, or the
    plan's explicit assignment when given)."""
    if plan.fold_assignment is not None:
        folds = [np.asarray(fold, dtype=np.intp) for fold in plan.fold_assignment]
        flat = np.sort(np.concatenate(folds))
        if len(flat) != n or not np.array_equal(flat, np.arange(n)):
            raise InvalidParameter("fold_assignment must partition the subject indices")
        return folds
    if n < plan.n_folds:
        raise InvalidParameter(f"cannot split {n} subjects into {plan.n_folds} folds")
    perm = substream(plan.seed, 0).permutation(n)
    return [np.sort(perm[k :: plan.n_folds]) for k in range(plan.n_folds)]


# ---------------------------------------------------------------------------
# coefficient-only local fits on raw arrays (no variance work)


def _local_beta(tt, yy, xx, t, h, family):
    """Closed-form local-linear coefficient at t, or None when undefined."""
    kh = eval_scaled_uni(family, h, tt - t)
    nz = kh > 0.0
    if not nz.any():
        return None
    kh, u = kh[nz], (tt[nz] - t) / h
    x, y = xx[nz], yy[nz]
    rows = np.concatenate([x, x * u[:, None]], axis=1)
    normal = np.einsum("ni,nj->ij", rows * kh[:, None], rows)
    mean_diag = np.trace(normal) / normal.shape[0]
    if mean_diag <= 0.0 or np.linalg.eigvalsh(normal)[0] < 1e-10 * mean_diag:
        return None
    sol = np.linalg.solve(normal, np.einsum("ni,n->i", rows, kh * y))
    return sol[: x.shape[1]]


def _local_gamma(t1, t2, ee, zz, t, h1, h2, family):
    w = eval_scaled_bi(family, h1, h2, t1 - t, t2 - t)
    nz = w > 0.0
    if not nz.any():
        return None
    w, u2 = w[nz], (t2[nz] - t) / h2
    z, e = zz[nz], ee[nz]
    rows = np.concatenate([z, z * u2[:, None]], axis=1)
    normal = np.einsum("ni,nj->ij", rows * w[:, None], rows)
    mean_diag = np.trace(normal) / normal.shape[0]
    if mean_diag <= 0.0 or np.linalg.eigvalsh(normal)[0] < 1e-10 * mean_diag:
        return None
    sol = np.linalg.solve(normal, np.einsum("ni,n->i", rows, w * e))
    return sol[: z.shape[1]]


def _local_one_step(t1, t2, yy, xx, zz, t, h1, h2, family):
    w = eval_scaled_bi(family, h1, h2, t1 - t, t2 - t)
    nz = w > 0.0
    if not nz.any():
        return None
    w = w[nz]
    u1, u2 = (t1[nz] - t) / h1, (t2[nz] - t) / h2
    x, z, y = xx[nz], zz[nz], yy[nz]
    rows = np.concatenate([x, x * u1[:, None], z, z * u2[:, None]], axis=1)
    normal = np.einsum("ni,nj->ij", rows * w[:, None], rows)
    mean_diag = np.trace(normal) / normal.shape[0]
    if mean_diag <= 0.0 or np.linalg.eigvalsh(normal)[0] < 1e-10 * mean_diag:
        return None
    sol = np.linalg.solve(normal, np.einsum("ni,n->i", rows, w * y))
    p, q = x.shape[1], z.shape[1]
    return sol[:p], sol[2 * p : 2 * p + q]


# ---------------------------------------------------------------------------
# ASPE criteria


def aspe_beta(plan: CvPlan, dataset, t: float, h: float, family=DEFAULT_FAMILY) -> float:
    """First-stage average squared prediction error at t for bandwidth h."""
    return math.fsum(_aspe_beta_folds(plan, dataset, t, h, family)) / plan.n_folds


def _aspe_beta_folds(plan, dataset, t, h, family):
    centered = center(dataset, h, family)
    sf = centered.sync_flat
    folds = fold_indices(plan, dataset.n)
    ratios = []
    for k, test in enumerate(folds):
        test_obs = np.isin(sf.subject, test)
        w = eval_scaled_uni(family, h, sf.t[test_obs] - t)
        mass = float(np.sum(w))
        if mass <= 0.0:
            raise FoldDegenerate(k, t)
        train_obs = ~test_obs
        tt, yy, xx = sf.t[train_obs], sf.y[train_obs], sf.x[train_obs]
        t_te, y_te, x_te = sf.t[test_obs], sf.y[test_obs], sf.x[test_obs]
        err = 0.0
        for j in np.flatnonzero(w > 0.0):
            beta = _local_beta(tt, yy, xx, t_te[j], h, family)
            if beta is None:
                raise FoldDegenerate(k, t)
            err += w[j] * float(y_te[j] - x_te[j] @ beta) ** 2
        ratios.append(err / mass)
    return ratios


def aspe_gamma(
    plan: CvPlan, dataset, beta_curve, t: float, h1: float, h2: float, family=DEFAULT_FAMILY
) -> float:
    """Second-stage ASPE at t for (h1, h2), with the first stage held fixed."""
    return math.fsum(_aspe_gamma_folds(plan, dataset, beta_curve, t, h1, h2, family)) / plan.n_folds


def _aspe_gamma_folds(plan, dataset, beta_curve, t, h1, h2, family):
    beta_fn = _as_beta_fn(beta_curve, dataset.p)
    pf = dataset.pair_flat
    partial = pf.y - np.einsum("ni,ni->n", pf.x, beta_fn(pf.t1))
    folds = fold_indices(plan, dataset.n)
    ratios = []
    for k, test in enumerate(folds):
        test_pairs = np.isin(pf.subject, test)
        w = eval_scaled_bi(family, h1, h2, pf.t1[test_pairs] - t, pf.t2[test_pairs] - t)
        mass = float(np.sum(w))
        if mass <= 0.0:
            raise FoldDegenerate(k, t)
        train = ~test_pairs
        t1_tr, t2_tr, e_tr, z_tr = pf.t1[train], pf.t2[train], partial[train], pf.z[train]
        t2_te, e_te, z_te = pf.t2[test_pairs], partial[test_pairs], pf.z[test_pairs]
        cache: dict[float, np.ndarray] = {}
        err = 0.0
        for j in np.flatnonzero(w > 0.0):
            tau = float(t2_te[j])
            gamma = cache.get(tau)
            if gamma is None:
                gamma = _local_gamma(t1_tr, t2_tr, e_tr, z_tr, tau, h1, h2, family)
                if gamma is None:
                    raise FoldDegenerate(k, t)
                cache[tau] = gamma
            err += w[j] * float(e_te[j] - z_te[j] @ gamma) ** 2
        ratios.append(err / mass)
    return ratios


def _aspe_one_step(plan: CvPlan, dataset, t: float, h1: float, h2: float, family) -> float:
    """One-step ASPE: held-out pairs predicted by the joint local fit."""
    return math.fsum(_aspe_one_step_folds(plan, dataset, t, h1, h2, family)) / plan.n_folds


def _aspe_one_step_folds(plan, dataset, t, h1, h2, family):
    pf = dataset.pair_flat
    folds = fold_indices(plan, dataset.n)
    ratios = []
    for k, test in enumerate(folds):
        test_pairs = np.isin(pf.subject, test)
        w = eval_scaled_bi(family, h1, h2, pf.t1[test_pairs] - t, pf.t2[test_pairs] - t)
        mass = float(np.sum(w))
        if mass <= 0.0:
            raise FoldDegenerate(k, t)
        train = ~test_pairs
        arrs = (pf.t1[train], pf.t2[train], pf.y[train], pf.x[train], pf.z[train])
        t1_te, t2_te = pf.t1[test_pairs], pf.t2[test_pairs]
        y_te, x_te, z_te = pf.y[test_pairs], pf.x[test_pairs], pf.z[test_pairs]
        beta_cache: dict[float, np.ndarray] = {}
        gamma_cache: dict[float, np.ndarray] = {}
        err = 0.0
        for j in np.flatnonzero(w > 0.0):
            tb, tg = float(t1_te[j]), float(t2_te[j])
            if tb not in beta_cache:
                fit = _local_one_step(*arrs, tb, h1, h2, family)
                if fit is None:
                    raise FoldDegenerate(k, t)
                beta_cache[tb] = fit[0]
            if tg not in gamma_cache:
                fit = _local_one_step(*arrs, tg, h1, h2, family)
                if fit is None:
                    raise FoldDegenerate(k, t)
                gamma_cache[tg] = fit[1]
            pred = float(x_te[j] @ beta_cache[tb] + z_te[j] @ gamma_cache[tg])
            err += w[j] * float(y_te[j] - pred) ** 2
        ratios.append(err / mass)
    return ratios


# ---------------------------------------------------------------------------
# selection


def _candidate_score(plan, fold_ratios_at):
    per_time = {t: fold_ratios_at(t) for t in plan.eval_times}
    vals = [math.fsum(r) / plan.n_folds for r in per_time.values()]
    return math.fsum(vals) / len(vals), per_time


def select(plan: CvPlan, dataset, stage: str, beta_curve=None, family=DEFAULT_FAMILY) -> CvResult:
    """Pick the ASPE-minimizing candidate; ties go to the smallest bandwidth.

    Degenerate candidates are excluded with a warning; SelectionFailed is
    raised only when every candidate degenerates.
    """
    if stage not in STAGES:
        raise InvalidParameter(f"stage must be one of {STAGES}, got {stage!r}")
    if stage == "second" and beta_curve is None:
        raise InvalidParameter("second-stage selection requires a fitted beta curve")
    scores: dict = {}
    excluded: dict = {}
    fold_aspe: dict = {}
    for cand in plan.candidates:
        if stage == "first":
            fn = lambda t: _aspe_beta_folds(plan, dataset, t, cand, family)
        elif stage == "second":
            fn = lambda t: _aspe_gamma_folds(plan, dataset, beta_curve, t, cand[0], cand[1], family)
        else:
            fn = lambda t: _aspe_one_step_folds(plan, dataset, t, cand[0], cand[1], family)
        try:
            scores[cand], fold_aspe[cand] = _candidate_score(plan, fn)
        except (FoldDegenerate, NoLocalData, SingularLocalFit) as exc:
            warnings.warn(f"bandwidth candidate {cand!r} excluded: {exc}")
            excluded[cand] = str(exc)
            fold_aspe.pop(cand, None)
    if not scores:
        raise SelectionFailed("every bandwidth candidate was degenerate")
    chosen = None
    best = math.inf
    for cand in plan.candidates:  # ascending, so ties keep the smallest
        if cand in scores and scores[cand] < best:
            best = scores[cand]
            chosen = cand
    lo_exp, hi_exp = _THEORY_RANGE[stage]
    n = dataset.n
    return CvResult(
        stage=stage,
        aspe=scores,
        chosen=chosen,
        excluded=excluded,
        theoretical_range=(n ** (-lo_exp), n ** (-hi_exp)),
        fold_aspe=fold_aspe,
    )


def default_plan(
    n: int,
    stage: str,
    n_candidates: int = 8,
    n_folds: int = 5,
    eval_times: tuple[float, ...] = (0.3, 0.6, 0.9),
    seed: int = 0,
) -> CvPlan:
    """Log-spaced candidates spanning the stage's search range."""
    if stage not in STAGES:
        raise InvalidParameter(f"stage must be one of {STAGES}, got {stage!r}")
    lo_exp, hi_exp = _SEARCH_RANGE[stage]
    grid = np.exp(np.linspace(math.log(n**-lo_exp), math.log(n**-hi_exp), n_candidates))
    if stage == "first":
        candidates = tuple(float(h) for h in grid)
    else:
        candidates = tuple((float(h), float(h)) for h in grid)
    return CvPlan(candidates, n_folds=n_folds, eval_times=eval_times, seed=seed)
