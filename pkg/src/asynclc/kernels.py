"""Kernel families, scaled kernel weights, and bandwidth-rule arithmetic.

Conventions:
  - supports are the open interval (-1, 1); weights at exactly |u| = 1 are 0,
    which is immaterial to integrals but fixed for determinism;
  - bivariate kernels are products of the univariate family;
  - K_h(t) = K(t/h)/h and K_{h1,h2}(t, s) = K(t/h1) K(s/h2)/(h1 h2).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidBandwidth, InvalidSampleSize

__all__ = [
    "KernelFamily",
    "Bandwidths",
    "KernelSpec",
    "eval_uni",
    "eval_bi",
    "eval_scaled_uni",
    "eval_scaled_bi",
    "bandwidth_rule",
]


class KernelFamily(enum.Enum):
    EPANECHNIKOV = "epanechnikov"
    UNIFORM = "uniform"


DEFAULT_FAMILY = KernelFamily.EPANECHNIKOV


def _as_family(family) -> KernelFamily:
    if isinstance(family, KernelFamily):
        return family
    return KernelFamily(str(family).lower())


def eval_uni(family, u):
    """Univariate kernel weight K(u); 0 outside (-1, 1)."""
    family = _as_family(family)
    u_arr = np.asarray(u, dtype=float)
    inside = np.abs(u_arr) < 1.0
    if family is KernelFamily.EPANECHNIKOV:
        k = np.where(inside, 0.75 * (1.0 - u_arr * u_arr), 0.0)
    else:
        k = np.where(inside, 0.5, 0.0)
    return float(k) if np.isscalar(u) or k.ndim == 0 else k


def eval_bi(family, u, v):
    """Product kernel weight K(u) K(v)."""
    out = np.asarray(eval_uni(family, u)) * np.asarray(eval_uni(family, v))
    return float(out) if out.ndim == 0 else out


def _check_bandwidth(h) -> float:
    h = float(h)
    if not math.isfinite(h) or h <= 0.0:
        raise InvalidBandwidth(f"bandwidth must be positive and finite, got {h!r}")
    return h


def eval_scaled_uni(family, h, t):
    """Scaled weight K(t/h)/h."""
    h = _check_bandwidth(h)
    out = np.asarray(eval_uni(family, np.asarray(t, dtype=float) / h)) / h
    return float(out) if out.ndim == 0 else out


def eval_scaled_bi(family, h1, h2, t, s):
    """Scaled product weight K(t/h1) K(s/h2)/(h1 h2)."""
    h1 = _check_bandwidth(h1)
    h2 = _check_bandwidth(h2)
    out = (
        np.asarray(eval_uni(family, np.asarray(t, dtype=float) / h1))
        * np.asarray(eval_uni(family, np.asarray(s, dtype=float) / h2))
        / (h1 * h2)
    )
    return float(out) if out.ndim == 0 else out


def bandwidth_rule(n, exponent, scale=1.0):
    """Bandwidth of the form scale * n**(-exponent)."""
    n = int(n)
    if n < 1:
        raise InvalidSampleSize(f"sample size must be >= 1, got {n}")
    scale = float(scale)
    if not math.isfinite(scale) or scale <= 0.0:
        raise InvalidBandwidth(f"scale must be positive, got {scale!r}")
    return scale * float(n) ** (-float(exponent))


@dataclass(frozen=True)
class Bandwidths:
    """First-stage bandwidth h and bivariate pair (h1, h2).

    Unused slots may be left as None; every stored value must be positive
    and finite.
    """

    h: float | None = None
    h1: float | None = None
    h2: float | None = None

    def __post_init__(self):
        for name in ("h", "h1", "h2"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _check_bandwidth(value))

    @classmethod
    def from_rules(cls, n, h_exponent=None, h1_exponent=None, h2_exponent=None, scale=1.0):
        """Build bandwidths from n**(-a) rules for a common sample size."""

        def rule(exp):
            return None if exp is None else bandwidth_rule(n, exp, scale)

        return cls(h=rule(h_exponent), h1=rule(h1_exponent), h2=rule(h2_exponent))

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise InvalidBandwidth(f"bandwidth {name!r} is required but not set")
        return self


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family bundled with its bandwidths."""

    family: KernelFamily = DEFAULT_FAMILY
    bandwidths: Bandwidths = Bandwidths()

    def uni(self, u):
        return eval_uni(self.family, u)

    def bi(self, u, v):
        return eval_bi(self.family, u, v)

    def scaled_uni(self, t):
        self.bandwidths.require("h")
        return eval_scaled_uni(self.family, self.bandwidths.h, t)

    def scaled_bi(self, t, s):
        self.bandwidths.require("h1", "h2")
        return eval_scaled_bi(self.family, self.bandwidths.h1, self.bandwidths.h2, t, s)
