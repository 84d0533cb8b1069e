"""Exception types shared across the package."""

from __future__ import annotations


class AsynclcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidBandwidth(AsynclcError):
    """A bandwidth is nonpositive or not finite."""


class InvalidSampleSize(AsynclcError):
    """A sample size used in a bandwidth rule is not a positive integer."""


class InvalidParameter(AsynclcError):
    """A numeric parameter is outside its admissible range."""


class NoLocalData(AsynclcError):
    """No observation (or pair) carries positive kernel weight near t."""

    def __init__(self, t, h=None):
        self.t = t
        self.h = h
        extra = f" with bandwidth {h!r}" if h is not None else ""
        super().__init__(f"no data with positive kernel weight at t={t!r}{extra}")


class SingularLocalFit(AsynclcError):
    """The local normal-equation matrix is numerically singular."""

    def __init__(self, t, detail=""):
        self.t = t
        msg = f"singular local fit at t={t!r}; consider enlarging the bandwidth(s)"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class SingularFit(AsynclcError):
    """A pooled design matrix is rank deficient."""


class DegenerateScale(AsynclcError):
    """A normalization scale estimate is zero (or numerically so)."""

    def __init__(self, t=None):
        self.t = t
        where = f" at t={t!r}" if t is not None else ""
        super().__init__(f"degenerate scale estimate{where}")


class EstimationFailed(AsynclcError):
    """Every grid point of a curve fit failed."""


class FoldDegenerate(AsynclcError):
    """A cross-validation fold has zero kernel mass at the evaluation time."""

    def __init__(self, fold, t):
        self.fold = fold
        self.t = t
        super().__init__(f"fold {fold} has zero kernel mass at t={t!r}")


class SelectionFailed(AsynclcError):
    """Every bandwidth candidate was degenerate."""


class CovarianceNotPD(AsynclcError):
    """A covariance matrix could not be factorized even after tie jitter."""


class ParseError(AsynclcError):
    """A CSV row could not be parsed."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class OrphanSubject(AsynclcError):
    """A subject appears in the asynchronous file but not the synchronous one."""

    def __init__(self, subject_id):
        self.subject_id = subject_id
        super().__init__(f"subject {subject_id!r} appears only in the asynchronous file")


class EmptyInput(AsynclcError):
    """An input file contains no data rows."""


class InvalidDataset(AsynclcError):
    """An ingested dataset violates structural invariants."""

    def __init__(self, report):
        self.report = report
        lines = "; ".join(str(v) for v in report.violations[:5])
        more = "" if len(report.violations) <= 5 else f" (+{len(report.violations) - 5} more)"
        super().__init__(f"invalid dataset: {lines}{more}")
