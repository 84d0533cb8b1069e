"""Immutable containers for mixed synchronous/asynchronous longitudinal data.

A subject carries two observation processes on [0, 1]: the response and
synchronous covariates observed at times T_ij, and asynchronous covariates
observed at times S_ik. Integration against the bivariate counting process
is realized as summation over all L_i * M_i (j, k) pairs in lexicographic
order (j outer, k inner).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import numpy as np

__all__ = [
    "SubjectRecord",
    "LongitudinalDataset",
    "CenteredDataset",
    "MeanCurve",
    "ValidationReport",
    "validate",
    "pair_iterator",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


def _as_matrix(a, n_rows: int) -> np.ndarray:
    """Coerce covariate input to an (n_rows, k) float matrix; k may be 0."""
    a = np.array(a, dtype=float, copy=True)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(n_rows, 0)
    elif a.ndim == 0:
        a = a.reshape(1, 1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's observations.

    sync_times (L,), responses (L,) and sync_covariates (L, p) share the
    response process; async_times (M,) and async_covariates (M, q) belong
    to the asynchronous process. Ties within a process are allowed and kept.
    """

    id: str
    sync_times: np.ndarray
    responses: np.ndarray
    sync_covariates: np.ndarray
    async_times: np.ndarray
    async_covariates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sync_times", _freeze(np.atleast_1d(self.sync_times)))
        object.__setattr__(self, "responses", _freeze(np.atleast_1d(self.responses)))
        object.__setattr__(self, "async_times", _freeze(np.atleast_1d(self.async_times)))
        object.__setattr__(
            self, "sync_covariates", _as_matrix(self.sync_covariates, len(self.sync_times))
        )
        object.__setattr__(
            self, "async_covariates", _as_matrix(self.async_covariates, len(self.async_times))
        )

    @property
    def n_sync(self) -> int:
        return len(self.sync_times)

    @property
    def n_async(self) -> int:
        return len(self.async_times)

    @property
    def p(self) -> int:
        return self.sync_covariates.shape[1]

    @property
    def q(self) -> int:
        return self.async_covariates.shape[1]


def pair_iterator(subject: SubjectRecord) -> Iterator[tuple]:
    """Yield (T_ij, S_ik, Y_ij, X_ij, Z_ik) over all pairs, j outer, k inner."""
    for j in range(subject.n_sync):
        t1 = subject.sync_times[j]
        y = subject.responses[j]
        x = subject.sync_covariates[j]
        for k in range(subject.n_async):
            yield (t1, subject.async_times[k], y, x, subject.async_covariates[k])


@dataclass(frozen=True)
class FlatSync:
    """All subjects' synchronous observations, concatenated in input order."""

    t: np.ndarray       # (N,)
    y: np.ndarray       # (N,)
    x: np.ndarray       # (N, p)
    starts: np.ndarray  # (n+1,) subject boundaries
    subject: np.ndarray  # (N,) subject index


@dataclass(frozen=True)
class FlatAsync:
    t: np.ndarray
    z: np.ndarray
    starts: np.ndarray
    subject: np.ndarray


@dataclass(frozen=True)
class FlatPairs:
    """All (j, k) pairs, subjects in input order, pairs lexicographic."""

    t1: np.ndarray      # (N,)
    t2: np.ndarray
    y: np.ndarray
    x: np.ndarray       # (N, p)
    z: np.ndarray       # (N, q)
    starts: np.ndarray  # (n+1,)
    subject: np.ndarray


class _FlatViewsMixin:
    """Cached flattened array views shared by dataset-like containers."""

    @cached_property
    def sync_flat(self) -> FlatSync:
        subs = self.subjects
        counts = np.array([s.n_sync for s in subs], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(counts)))
        t = np.concatenate([s.sync_times for s in subs]) if subs else np.empty(0)
        y = np.concatenate([s.responses for s in subs]) if subs else np.empty(0)
        x = (
            np.concatenate([s.sync_covariates for s in subs], axis=0)
            if subs
            else np.empty((0, self.p))
        )
        return FlatSync(t, y, np.ascontiguousarray(x), starts, np.repeat(np.arange(len(subs)), counts))

    @cached_property
    def async_flat(self) -> FlatAsync:
        subs = self.subjects
        counts = np.array([s.n_async for s in subs], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(counts)))
        t = np.concatenate([s.async_times for s in subs]) if subs else np.empty(0)
        z = (
            np.concatenate([s.async_covariates for s in subs], axis=0)
            if subs
            else np.empty((0, self.q))
        )
        return FlatAsync(t, np.ascontiguousarray(z), starts, np.repeat(np.arange(len(subs)), counts))

    @cached_property
    def pair_flat(self) -> FlatPairs:
        subs = self.subjects
        counts = np.array([s.n_sync * s.n_async for s in subs], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(counts)))
        t1, t2, y, x, z = [], [], [], [], []
        for s in subs:
            m = s.n_async
            t1.append(np.repeat(s.sync_times, m))
            y.append(np.repeat(s.responses, m))
            x.append(np.repeat(s.sync_covariates, m, axis=0))
            t2.append(np.tile(s.async_times, s.n_sync))
            z.append(np.tile(s.async_covariates, (s.n_sync, 1)))
        cat = lambda parts, width: (
            np.concatenate(parts, axis=0) if parts else np.empty((0, width) if width is not None else 0)
        )
        return FlatPairs(
            cat(t1, None),
            cat(t2, None),
            cat(y, None),
            np.ascontiguousarray(cat(x, self.p)),
            np.ascontiguousarray(cat(z, self.q)),
            starts,
            np.repeat(np.arange(len(subs)), counts),
        )


@dataclass(frozen=True)
class LongitudinalDataset(_FlatViewsMixin):
    """A study of n subjects with p synchronous and q asynchronous covariates.

    q = 0 is permitted (no asynchronous covariates; only first-stage
    estimators apply). Instances are immutable and safe to share across
    concurrent estimation tasks.
    """

    subjects: tuple[SubjectRecord, ...]
    p: int
    q: int
    time_rescale: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))

    @property
    def n(self) -> int:
        return len(self.subjects)


@dataclass(frozen=True)
class MeanCurve:
    """Kernel-smoothed mean values at a set of evaluation times."""

    times: np.ndarray
    values: np.ndarray  # (N,) or (N, p)
    bandwidth: float


@dataclass(frozen=True)
class CenteredDataset(_FlatViewsMixin):
    """A dataset with responses and synchronous covariates mean-centered.

    `subjects` hold the centered values; `source` keeps the originals.
    mean_y / mean_x are the smoothed mean curves evaluated at every
    synchronous observation time (concatenated in input order).
    """

    source: LongitudinalDataset
    h: float
    subjects: tuple[SubjectRecord, ...]
    mean_y: MeanCurve
    mean_x: MeanCurve

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.source.p

    @property
    def q(self) -> int:
        return self.source.q


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "violations", tuple(self.violations))

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(dataset: LongitudinalDataset) -> ValidationReport:
    """Report every structural invariant violation; empty report iff valid."""
    bad: list[str] = []
    if dataset.n < 2:
        bad.append(f"dataset has {dataset.n} subject(s); at least 2 required")
    for s in dataset.subjects:
        tag = f"subject {s.id!r}"
        if len(s.responses) != len(s.sync_times):
            bad.append(f"{tag}: {len(s.responses)} responses for {len(s.sync_times)} sync times")
        if s.sync_covariates.shape[0] != len(s.sync_times):
            bad.append(
                f"{tag}: {s.sync_covariates.shape[0]} covariate rows for "
                f"{len(s.sync_times)} sync times"
            )
        if s.async_covariates.shape[0] != len(s.async_times):
            bad.append(
                f"{tag}: {s.async_covariates.shape[0]} covariate rows for "
                f"{len(s.async_times)} async times"
            )
        if s.n_sync < 1:
            bad.append(f"{tag}: empty response process")
        if dataset.q >= 1 and s.n_async < 1:
            bad.append(f"{tag}: empty asynchronous process")
        if s.p != dataset.p:
            bad.append(f"{tag}: covariate dimension {s.p} != dataset p={dataset.p}")
        if dataset.q >= 1 and s.q != dataset.q:
            bad.append(f"{tag}: covariate dimension {s.q} != dataset q={dataset.q}")
        for name, times in (("sync", s.sync_times), ("async", s.async_times)):
            if times.size and (times.min() < 0.0 or times.max() > 1.0):
                bad.append(f"{tag}: {name} time outside [0,1]")
        for name, arr in (
            ("sync times", s.sync_times),
            ("responses", s.responses),
            ("sync covariates", s.sync_covariates),
            ("async times", s.async_times),
            ("async covariates", s.async_covariates),
        ):
            if arr.size and not np.all(np.isfinite(arr)):
                bad.append(f"{tag}: non-finite value in {name}")
    return ValidationReport(tuple(bad))


def segment_sums(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Per-group sums of contiguous row groups delimited by `starts`.

    Handles empty groups (np.add.reduceat alone does not). Reduction order is
    deterministic: rows in input order within each group.
    """
    n = len(starts) - 1
    out = np.zeros((n,) + values.shape[1:], dtype=float)
    counts = np.diff(starts)
    nonempty = counts > 0
    if values.shape[0] and nonempty.any():
        out[nonempty] = np.add.reduceat(values, starts[:-1][nonempty], axis=0)
    return out
