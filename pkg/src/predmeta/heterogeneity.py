"""Between-study heterogeneity: generalised Q statistic, tau^2 estimators,
Q-profile interval, I^2, IVW/HKSJ mean and tau^2 confidence-distribution draws."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats

from ._roots import expand_upper, solve_increasing
from .data import MetaDataset
from .exceptions import ConvergenceError, DataError

Q_TOL = 1e-8


@dataclass(frozen=True)
class Tau2Estimate:
    value: float
    method: str
    ci: Optional[tuple[float, float]] = None
    level: Optional[float] = None
    i2: Optional[float] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci) if self.ci is not None else None
        return out


@dataclass(frozen=True)
class MeanEstimate:
    value: float
    se_ivw: float
    se_hksj: float
    ci: tuple[float, float]
    df: int
    level: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci"] = list(self.ci)
        return out


def _q_parts(theta, var, tau2):
    """Q(tau2) and dQ/dtau2 for an array of tau2 values."""
    tau2 = np.asarray(tau2, dtype=float)
    w = 1.0 / (var + tau2[..., None])
    mu = (w * theta).sum(-1) / w.sum(-1)
    r2 = (theta - mu[..., None]) ** 2
    wr2 = w * r2
    return wr2.sum(-1), -(w * wr2).sum(-1)


def generalized_q(dataset: MetaDataset, tau2):
    """Generalised heterogeneity statistic Q(tau2).

    Weighted residual sum of squares about the IVW mean with weights
    ``1 / (variance_i + tau2)``. Accepts a scalar or an array of ``tau2``.
    """
    t = np.asarray(tau2, dtype=float)
    if np.any(t < 0):
        raise ValueError("tau2 must be >= 0")
    q, _ = _q_parts(dataset.effects, dataset.variances, t)
    return float(q) if q.ndim == 0 else q


def tau2_from_q(dataset: MetaDataset, target):
    """Invert Q(tau2) = target (elementwise), truncating at zero.

    Returns 0 where ``target >= Q(0)``; otherwise the unique root.
    """
    target = np.atleast_1d(np.asarray(target, dtype=float))
    theta, var = dataset.effects, dataset.variances
    q0, _ = _q_parts(theta, var, 0.0)
    out = np.zeros(target.shape)
    idx = np.flatnonzero(target < q0)
    if idx.size:
        tgt = target[idx]
        upper = expand_upper(lambda t, i: _q_parts(theta, var, t)[0], tgt)

        def g(t, i):
            q, dq = _q_parts(theta, var, t)
            return tgt[i] - q, -dq

        out[idx], _ = solve_increasing(g, np.zeros(idx.size), upper, ftol=1e-3 * Q_TOL, x0=np.zeros(idx.size))
    return out


def estimate_tau2_pm(dataset: MetaDataset, level: Optional[float] = 0.95) -> Tau2Estimate:
    """Paule-Mandel estimate: the tau2 solving Q(tau2) = k - 1 (zero if Q(0) <= k - 1).

    With ``level`` set, the Q-profile interval and I^2 are attached.
    """
    value = float(tau2_from_q(dataset, dataset.k - 1)[0])
    ci = tau2_q_profile_ci(dataset, level) if level is not None else None
    return Tau2Estimate(value, "PM", ci, level, higgins_i2(dataset))


def _reml_loglik(theta, var, tau2):
    w = 1.0 / (var + tau2)
    sw = w.sum()
    mu = (w * theta).sum() / sw
    return -0.5 * (np.log(var + tau2).sum() + math.log(sw) + (w * (theta - mu) ** 2).sum())


def reml_loglik(dataset: MetaDataset, tau2: float) -> float:
    """Restricted log-likelihood of the normal random-effects model (up to a constant)."""
    return float(_reml_loglik(dataset.effects, dataset.variances, float(tau2)))


def reml_score(dataset: MetaDataset, tau2: float) -> float:
    """Derivative of :func:`reml_loglik` with respect to tau2."""
    return _reml_score_info(dataset.effects, dataset.variances, float(tau2))[0]


def _reml_score_info(theta, var, tau2):
    w = 1.0 / (var + tau2)
    sw = w.sum()
    mu = (w * theta).sum() / sw
    r = theta - mu
    sw2 = (w * w).sum()
    score = 0.5 * ((w * w * r * r).sum() - sw + sw2 / sw)
    info = 0.5 * (sw2 - 2 * (w**3).sum() / sw + (sw2 / sw) ** 2)
    return score, info


def _dl_start(theta, var):
    w = 1.0 / var
    sw = w.sum()
    mu = (w * theta).sum() / sw
    q = (w * (theta - mu) ** 2).sum()
    denom = sw - (w * w).sum() / sw
    return max(0.0, (q - (theta.size - 1)) / denom)


def estimate_tau2_reml(dataset: MetaDataset, tol: float = 1e-8, max_iter: int = 100) -> Tau2Estimate:
    """REML estimate of tau2 by Fisher scoring with step halving.

    Starts from the moment (DerSimonian-Laird) value truncated at zero.
    Returns 0 when the maximum lies on the boundary.
    """
    theta, var = dataset.effects, dataset.variances
    t = _dl_start(theta, var)
    ll = _reml_loglik(theta, var, t)
    for _ in range(max_iter):
        score, info = _reml_score_info(theta, var, t)
        if abs(score) < tol or (t == 0.0 and score <= 0):
            return Tau2Estimate(float(t), "REML", i2=higgins_i2(dataset))
        new = max(0.0, t + score / info)
        new_ll = _reml_loglik(theta, var, new)
        halvings = 0
        while new_ll < ll and halvings < 50:
            new = 0.5 * (t + new)
            new_ll = _reml_loglik(theta, var, new)
            halvings += 1
        if new == t:
            # no representable improvement; stationary to machine precision
            return Tau2Estimate(float(t), "REML", i2=higgins_i2(dataset))
        t, ll = new, new_ll
    raise ConvergenceError(f"REML did not converge in {max_iter} iterations", last_iterate=t)


def tau2_q_profile_ci(dataset: MetaDataset, level: float = 0.95) -> tuple[float, float]:
    """Q-profile confidence interval for tau2.

    The lower limit solves Q = chi2_{k-1} quantile at (1 + level)/2, the upper
    at (1 - level)/2; each is truncated at 0.
    """
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    df = dataset.k - 1
    hi_target = stats.chi2.ppf(0.5 + level / 2, df)
    lo_target = stats.chi2.ppf(0.5 - level / 2, df)
    lower, upper = tau2_from_q(dataset, [hi_target, lo_target])
    return float(lower), float(upper)


def higgins_i2(dataset: MetaDataset) -> float:
    """Higgins' I^2 in percent."""
    q0 = generalized_q(dataset, 0.0)
    if q0 <= 0:
        return 0.0
    return max(0.0, (q0 - (dataset.k - 1)) / q0) * 100.0


def ivw_mean(dataset: MetaDataset, tau2: float = 0.0) -> tuple[float, float]:
    """Inverse-variance weighted mean and its standard error ``sqrt(1 / sum w)``."""
    w = 1.0 / (dataset.variances + tau2)
    sw = w.sum()
    return float((w * dataset.effects).sum() / sw), math.sqrt(1.0 / sw)


def ivw_mean_hksj(dataset: MetaDataset, tau2: float, level: float = 0.95) -> MeanEstimate:
    """IVW mean with the Hartung-Knapp-Sidik-Jonkman standard error and t_{k-1} interval."""
    if tau2 < 0:
        raise ValueError("tau2 must be >= 0")
    k = dataset.k
    if k < 2:
        raise DataError("HKSJ needs k >= 2")
    w = 1.0 / (dataset.variances + tau2)
    sw = w.sum()
    mu = float((w * dataset.effects).sum() / sw)
    se_hksj = math.sqrt(float((w * (dataset.effects - mu) ** 2).sum()) / ((k - 1) * sw))
    half = stats.t.ppf(0.5 + level / 2, k - 1) * se_hksj
    return MeanEstimate(mu, math.sqrt(1.0 / sw), se_hksj, (float(mu - half), float(mu + half)), k - 1, level)


def sample_tau2(dataset: MetaDataset, rng: np.random.Generator, size=None):
    """Draw tau2 from its confidence distribution implied by the generalised Q.

    W ~ chi2_{k-1}; returns 0 when W >= Q(0), otherwise the root of Q(tau2) = W.
    Returns a float when ``size`` is None, else an array.
    """
    w = rng.chisquare(dataset.k - 1, size=size)
    out = tau2_from_q(dataset, w)
    return float(out[0]) if size is None else out.reshape(np.shape(w))


def tau2_cd_cdf(dataset: MetaDataset, tau2) -> np.ndarray:
    """CDF of the tau2 confidence distribution: 1 - F_chi2(Q(tau2))."""
    return stats.chi2.sf(generalized_q(dataset, tau2), dataset.k - 1)
