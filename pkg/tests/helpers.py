"""Shared test fixtures: tiny datasets, independent least-squares oracles."""

from __future__ import annotations

import numpy as np

from asynclc import (
    CenteredDataset,
    LongitudinalDataset,
    MeanCurve,
    SubjectRecord,
    eval_scaled_bi,
    eval_scaled_uni,
)


def wls_lstsq(rows: np.ndarray, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """SVD-based weighted LS minimizer (independent of normal equations)."""
    sw = np.sqrt(w)
    sol, *_ = np.linalg.lstsq(rows * sw[:, None], y * sw, rcond=None)
    return sol


def cramer_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cramer's rule via determinants; textbook small-system path."""
    det_a = np.linalg.det(a)
    out = np.empty(len(b))
    for i in range(len(b)):
        a_i = a.copy()
        a_i[:, i] = b
        out[i] = np.linalg.det(a_i) / det_a
    return out


def make_subject(rng, sid, l_i, m_i, p, q, y_fn=None):
    """Random subject; y_fn(t, x, z_const) overrides the default noise draw."""
    t_sync = np.sort(rng.uniform(0, 1, l_i))
    t_async = np.sort(rng.uniform(0, 1, m_i))
    x = rng.normal(size=(l_i, p))
    z = rng.normal(size=(m_i, q))
    y = rng.normal(size=l_i) if y_fn is None else y_fn(t_sync, x)
    return SubjectRecord(sid, t_sync, y, x, t_async, z)


def tiny_dataset(rng, n=None, p=None, q=None) -> LongitudinalDataset:
    """Random tiny instance: n in {2,3}, p,q in {1,2}, enough observations
    that the local designs are full rank under a wide bandwidth."""
    n = int(rng.integers(2, 4)) if n is None else n
    p = int(rng.integers(1, 3)) if p is None else p
    q = int(rng.integers(1, 3)) if q is None else q
    subjects = [
        make_subject(rng, str(i), 2 * p + 1 + int(rng.integers(0, 2)), 2 * q + 1, p, q)
        for i in range(n)
    ]
    return LongitudinalDataset(tuple(subjects), p=p, q=q)


def manual_centered(dataset: LongitudinalDataset, responses, covariates) -> CenteredDataset:
    """A CenteredDataset with caller-supplied centered values (means zero)."""
    subjects = []
    for s, y, x in zip(dataset.subjects, responses, covariates):
        subjects.append(
            SubjectRecord(s.id, s.sync_times, y, x, s.async_times, s.async_covariates)
        )
    all_t = np.concatenate([s.sync_times for s in dataset.subjects])
    return CenteredDataset(
        source=dataset,
        h=0.1,
        subjects=tuple(subjects),
        mean_y=MeanCurve(all_t, np.zeros(len(all_t)), 0.1),
        mean_x=MeanCurve(all_t, np.zeros((len(all_t), dataset.p)), 0.1),
    )


def one_step_rows(dataset, t):
    """Natural one-step design rows over all pairs, with pair weights hook."""
    pf = dataset.pair_flat
    rows = np.concatenate(
        [pf.x, pf.x * (pf.t1 - t)[:, None], pf.z, pf.z * (pf.t2 - t)[:, None]], axis=1
    )
    return pf, rows


def one_step_oracle(dataset, t, h1, h2, family="epanechnikov"):
    """lstsq minimizer of the one-step objective in the natural basis."""
    pf, rows = one_step_rows(dataset, t)
    w = eval_scaled_bi(family, h1, h2, pf.t1 - t, pf.t2 - t)
    return wls_lstsq(rows, w, pf.y)


def centering_oracle(centered, t, h, family="epanechnikov"):
    sf = centered.sync_flat
    rows = np.concatenate([sf.x, sf.x * (sf.t - t)[:, None]], axis=1)
    w = eval_scaled_uni(family, h, sf.t - t)
    return wls_lstsq(rows, w, sf.y)


def vcm_oracle(dataset, t, h, family="epanechnikov"):
    sf = dataset.sync_flat
    ones = np.ones((len(sf.t), 1))
    dt = (sf.t - t)[:, None]
    rows = np.concatenate([ones, sf.x, dt, sf.x * dt], axis=1)
    w = eval_scaled_uni(family, h, sf.t - t)
    return wls_lstsq(rows, w, sf.y)


def gamma_oracle(dataset, beta_fn, t, h1, h2, family="epanechnikov"):
    pf = dataset.pair_flat
    partial = pf.y - np.einsum("ni,ni->n", pf.x, beta_fn(pf.t1))
    rows = np.concatenate([pf.z, pf.z * (pf.t2 - t)[:, None]], axis=1)
    w = eval_scaled_bi(family, h1, h2, pf.t1 - t, pf.t2 - t)
    return wls_lstsq(rows, w, partial)
