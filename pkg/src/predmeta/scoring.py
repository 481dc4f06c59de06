"""Scores and summaries for predictive distributions: CRPS, coverage,
interval and Fisher skewness, correlation and agreement measures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .data import MetaDataset
from .predictive import PredictionInterval, PredictiveSamples

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass(frozen=True)
class FutureEffects:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise ValueError("future effects must be a non-empty array of finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def J(self) -> int:
        return self.values.size


def _draws(samples):
    return samples.draws if isinstance(samples, PredictiveSamples) else np.asarray(samples, dtype=float)


def crps_mc(samples, theta0):
    """Sample-based CRPS.

    ``mean|x_b - theta0| - sum_{b<B} |x_b - x_{b+1}| / (2 (B - 1))``, with the
    second term pairing draws in their stored order. ``theta0`` may be an
    array; the first term is then evaluated via sorted prefix sums.
    """
    x = _draws(samples)
    B = x.size
    if B < 2:
        raise ValueError("need at least two draws")
    spread = np.abs(np.diff(x)).sum() / (2.0 * (B - 1))
    y = np.asarray(theta0, dtype=float)
    if y.ndim == 0:
        return float(np.abs(x - y).mean() - spread)
    xs = np.sort(x)
    csum = np.concatenate(([0.0], np.cumsum(xs)))
    m = np.searchsorted(xs, y, side="right")
    # sum|x - y| = y (2m - B) + total - 2 * (sum of the m smallest)
    abs_sum = y * (2 * m - B) + csum[-1] - 2 * csum[m]
    return abs_sum / B - spread


def crps_normal_closed(mu: float, sigma: float, y):
    """Closed-form CRPS of N(mu, sigma^2) at ``y``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    z = (np.asarray(y, dtype=float) - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    out = sigma * (z * (2 * ndtr(z) - 1) + 2 * pdf - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def coverage(interval: PredictionInterval, futures) -> float:
    """Share of future effects inside the closed interval."""
    v = futures.values if isinstance(futures, FutureEffects) else np.asarray(futures, dtype=float)
    if v.size < 1:
        raise ValueError("need at least one future effect")
    return float(np.mean((v >= interval.lower) & (v <= interval.upper)))


def coverage_variance(cov: float, J: int) -> float:
    """Within-iteration binomial variance Cov (1 - Cov) / J."""
    return cov * (1.0 - cov) / J


def interval_skewness(lower: float, upper: float, center: float) -> float:
    """(upper + lower - 2 center) / (upper - lower)."""
    if not upper > lower:
        raise ValueError("interval skewness undefined for upper <= lower")
    return (upper + lower - 2.0 * center) / (upper - lower)


def fisher_skewness(values, weights=None) -> float:
    """Weighted Fisher skewness about the weighted mean.

    ``sum w d^3 * sqrt(sum w) / (sum w d^2)^{3/2}``; unit weights give the
    ordinary moment coefficient.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two values")
    sw = w.sum()
    d = x - (w * x).sum() / sw
    m2 = (w * d * d).sum()
    if not m2 > 0 or m2 < 1e-28 * (w * x * x).sum():
        raise ValueError("zero spread: skewness undefined")
    return float((w * d**3).sum() * math.sqrt(sw) / m2**1.5)


def fisher_weighted_skewness(dataset: MetaDataset, weighted: bool = True) -> float:
    """Skewness of effect estimates with inverse-variance weights (or unit weights)."""
    w = 1.0 / dataset.variances if weighted else None
    return fisher_skewness(dataset.effects, w)


def sample_skewness(x) -> float:
    """Moment skewness m3 / m2^{3/2} of a sample."""
    return fisher_skewness(_draws(x))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("x and y need equal length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance: correlation undefined")
    r = (dx * dy).sum() / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def cohen_kappa(a, b) -> float:
    """Cohen's kappa over the sign categories {-1, 0, +1}.

    Returns 0 in the degenerate case of chance agreement equal to one.
    """
    a = np.sign(np.asarray(a, dtype=float)).astype(int)
    b = np.sign(np.asarray(b, dtype=float)).astype(int)
    if a.shape != b.shape or a.size < 1:
        raise ValueError("a and b need equal length >= 1")
    p_o = float(np.mean(a == b))
    p_e = sum(float(np.mean(a == c)) * float(np.mean(b == c)) for c in (-1, 0, 1))
    if p_e >= 1.0:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def kappa_se(a, b) -> float:
    """Large-sample standard error sqrt(p_o (1 - p_o) / n) / (1 - p_e)."""
    a = np.sign(np.asarray(a, dtype=float))
    b = np.sign(np.asarray(b, dtype=float))
    n = a.size
    p_o = float(np.mean(a == b))
    p_e = sum(float(np.mean(a == c)) * float(np.mean(b == c)) for c in (-1, 0, 1))
    if p_e >= 1.0:
        return 0.0
    return math.sqrt(p_o * (1 - p_o) / n) / (1 - p_e)
