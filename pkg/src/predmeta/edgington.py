"""Edgington's combined p-value function as a confidence distribution for the
average effect, conditional on a between-study variance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, ndtr

from ._roots import solve_increasing
from .data import MetaDataset, Study
from .exceptions import NumericalError

IH_EXACT_MAX_K = 15
QUANTILE_TOL = 1e-9
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def study_p_value(study: Study, mu, tau2: float = 0.0):
    """One-sided p-value function of a single study, increasing in ``mu``."""
    return ndtr((np.asarray(mu, dtype=float) - study.effect) / math.sqrt(tau2 + study.variance))


def _ih_coefficients(k, power):
    # (-1)^j / (j! (k-j)!) * k! / power!  ==  (-1)^j C(k, j) / power!
    j = np.arange(k + 1)
    logc = gammaln(k + 1) - gammaln(j + 1) - gammaln(k - j + 1) - gammaln(power + 1)
    return np.where(j % 2 == 0, 1.0, -1.0) * np.exp(logc)


def _ih_sum(t, k, power):
    """Compensated sum_j coef_j * (t - j)_+^power for 0 <= t <= k/2."""
    coef = _ih_coefficients(k, power)
    total = np.zeros_like(t)
    comp = np.zeros_like(t)
    for j in range(k // 2 + 1):
        pos = t > j
        if not pos.any():
            break
        term = np.where(pos, coef[j] * np.where(pos, t - j, 0.0) ** power, 0.0)
        # Neumaier summation
        s = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - s) + term, (term - s) + total)
        total = s
    return total + comp


def _neumaier_add(total, comp, term):
    s = total + term
    comp += np.where(np.abs(total) >= np.abs(term), (total - s) + term, (term - s) + total)
    return s


def _ih_cdf_pdf_exact(s, k):
    """Exact Irwin-Hall CDF and density in one pass (shared powers)."""
    upper = s > 0.5 * k
    t = np.clip(np.where(upper, k - s, s), 0.0, 0.5 * k)
    coef = _ih_coefficients(k, k - 1)  # density coefficients; CDF term = density term * d / k
    cdf, cdf_c = np.zeros_like(t), np.zeros_like(t)
    pdf, pdf_c = np.zeros_like(t), np.zeros_like(t)
    for j in range(k // 2 + 1):
        d = np.maximum(t - j, 0.0)
        if not d.any():
            break
        term = coef[j] * d ** (k - 1)
        pdf = _neumaier_add(pdf, pdf_c, term)
        cdf = _neumaier_add(cdf, cdf_c, term * d / k)
    lower_cdf = cdf + cdf_c
    inside = (s > 0) & (s < k)
    f = np.clip(np.where(upper, 1.0 - lower_cdf, lower_cdf), 0.0, 1.0)
    dens = np.where(inside, np.maximum(pdf + pdf_c, 0.0), 0.0)
    return f, dens


def irwin_hall_cdf(s, k: int, exact_max_k: int = IH_EXACT_MAX_K):
    """P(U_1 + ... + U_k <= s) for independent standard uniforms.

    Exact alternating sum for ``k <= exact_max_k`` (evaluated on the lower
    half and reflected), normal approximation N(k/2, k/12) above.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, dtype=float)
    if k > exact_max_k:
        out = ndtr((s - 0.5 * k) / math.sqrt(k / 12.0))
    else:
        upper = s > 0.5 * k
        t = np.clip(np.where(upper, k - s, s), 0.0, 0.5 * k)
        lower_tail = _ih_sum(t, k, k)
        out = np.where(upper, 1.0 - lower_tail, lower_tail)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def irwin_hall_pdf(s, k: int, exact_max_k: int = IH_EXACT_MAX_K):
    """Density of the Irwin-Hall distribution (same branch rule as the CDF)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(s, dtype=float)
    if k > exact_max_k:
        sd = math.sqrt(k / 12.0)
        out = np.exp(-0.5 * ((s - 0.5 * k) / sd) ** 2) * _INV_SQRT_2PI / sd
    else:
        inside = (s > 0) & (s < k)
        t = np.clip(np.where(s > 0.5 * k, k - s, s), 0.0, 0.5 * k)
        out = np.where(inside, np.maximum(_ih_sum(t, k, k - 1), 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def _cdf_and_pdf(theta, sd, mu):
    """Combined CDF/density for mu of shape (n,) and sd of shape (k,) or (n, k)."""
    z = (mu[:, None] - theta) / sd
    k = theta.size
    s = ndtr(z).sum(-1)
    ds = (np.exp(-0.5 * z * z) * _INV_SQRT_2PI / sd).sum(-1)
    if k <= IH_EXACT_MAX_K:
        f, dens = _ih_cdf_pdf_exact(s, k)
        return f, dens * ds
    return irwin_hall_cdf(s, k), irwin_hall_pdf(s, k) * ds


# Upper bound on C at theta.min() - 10 max(sd): every p-value is below Phi(-10).
_PHI_M10 = float(ndtr(-10.0))


def _tail_bound(k):
    return float(irwin_hall_cdf(min(k * _PHI_M10, 0.5 * k), k))


_GUESS_Q = np.concatenate(([1e-7, 1e-5, 1e-3], np.linspace(0.005, 0.995, 61), [1 - 1e-3, 1 - 1e-5, 1 - 1e-7]))


def _guess_fixed(theta, var, tau2, q):
    xs = quantile_batch(theta, var, tau2, _GUESS_Q, guess=False)
    return np.interp(q, _GUESS_Q, xs)


def _initial_guess(theta, var, tau2, q):
    """Starting points from interpolated quantile grids (tau2 nodes x probabilities)."""
    if tau2.ndim == 0:
        return _guess_fixed(theta, var, tau2, q)
    nodes = np.unique(np.quantile(tau2, np.linspace(0, 1, 17)))
    if nodes.size == 1:
        return _guess_fixed(theta, var, nodes[0], q)
    n_q = _GUESS_Q.size
    # all node grids in one vectorised solve
    flat = quantile_batch(theta, var, np.repeat(nodes, n_q), np.tile(_GUESS_Q, nodes.size), guess=False)
    grids = flat.reshape(nodes.size, n_q)
    j = np.clip(np.searchsorted(nodes, tau2, side="right") - 1, 0, nodes.size - 2)
    frac = np.clip((tau2 - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)
    x0 = np.empty(q.size)
    for jj in np.unique(j):
        m = j == jj
        a = np.interp(q[m], _GUESS_Q, grids[jj])
        b = np.interp(q[m], _GUESS_Q, grids[jj + 1])
        x0[m] = a + frac[m] * (b - a)
    return x0


def quantile_batch(theta, var, tau2, q, tol=QUANTILE_TOL, guess=True):
    """Invert the combined CDF for many probabilities at once.

    ``tau2`` is a scalar or an array matching ``q`` (one conditioning value
    per probability). Returns mu with |C(mu | tau2) - q| < ``tol``.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile probabilities must lie in (0, 1)")
    tau2 = np.asarray(tau2, dtype=float)
    per_draw = tau2.ndim > 0
    sd = np.sqrt(var + (tau2[:, None] if per_draw else tau2))
    spread = 10.0 * (sd.max(-1) if per_draw else sd.max())
    lo = np.broadcast_to(theta.min() - spread, q.shape).astype(float)
    hi = np.broadcast_to(theta.max() + spread, q.shape).astype(float)

    def sd_of(idx):
        return sd[idx] if per_draw else sd

    # widen brackets until they straddle q; skipped when the 10-sd bracket provably does
    bound = _tail_bound(theta.size)
    need_check = bool(np.any(q <= bound) or np.any(q >= 1.0 - bound))
    for _ in range(64 if need_check else 0):
        f_lo = _cdf_and_pdf(theta, sd_of(np.arange(q.size)), lo)[0]
        f_hi = _cdf_and_pdf(theta, sd_of(np.arange(q.size)), hi)[0]
        bad_lo, bad_hi = f_lo > q, f_hi < q
        if not (bad_lo.any() or bad_hi.any()):
            break
        width = hi - lo
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
    else:
        if need_check:
            raise NumericalError("could not bracket confidence-distribution quantile")

    def g(x, idx):
        f, d = _cdf_and_pdf(theta, sd_of(idx), x)
        return f - q[idx], d

    x0 = _initial_guess(theta, var, tau2, q) if guess and q.size > 4 * _GUESS_Q.size else None
    x, resid = solve_increasing(g, lo, hi, ftol=1e-3 * tol, x0=x0)
    if np.any(np.abs(resid) >= tol):
        raise NumericalError("confidence-distribution quantile residual above tolerance")
    return x


@dataclass(frozen=True)
class EdgingtonCD:
    """Confidence distribution of the average effect given ``tau2``.

    The CDF is the Irwin-Hall CDF of the summed study p-value functions;
    ``tau2 = 0`` gives the fixed-effect version.
    """

    dataset: MetaDataset
    tau2: float = 0.0

    def __post_init__(self):
        if not self.tau2 >= 0:
            raise ValueError("tau2 must be >= 0")

    @property
    def k(self) -> int:
        return self.dataset.k

    @property
    def _sd(self):
        return np.sqrt(self.dataset.variances + self.tau2)

    def cdf(self, mu):
        mu = np.asarray(mu, dtype=float)
        f, _ = _cdf_and_pdf(self.dataset.effects, self._sd, np.atleast_1d(mu).ravel())
        return float(f[0]) if mu.ndim == 0 else f.reshape(mu.shape)

    def pdf(self, mu):
        mu = np.asarray(mu, dtype=float)
        _, d = _cdf_and_pdf(self.dataset.effects, self._sd, np.atleast_1d(mu).ravel())
        return float(d[0]) if mu.ndim == 0 else d.reshape(mu.shape)

    def quantile(self, q):
        q_arr = np.asarray(q, dtype=float)
        x = quantile_batch(self.dataset.effects, self.dataset.variances, self.tau2, q_arr.ravel())
        return float(x[0]) if q_arr.ndim == 0 else x.reshape(q_arr.shape)

    def median(self) -> float:
        return self.quantile(0.5)

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        lo, hi = self.quantile([0.5 - level / 2, 0.5 + level / 2])
        return float(lo), float(hi)

    def two_sided_p(self, mu0):
        """Two-sided p-value ``2 min(C, 1 - C)`` at ``mu0``."""
        c = np.asarray(self.cdf(mu0))
        p = np.clip(2.0 * np.minimum(c, 1.0 - c), 0.0, 1.0)
        return float(p) if p.ndim == 0 else p

    def support(self, eps: float = 1e-10) -> tuple[float, float]:
        lo, hi = self.quantile([eps, 1 - eps])
        return float(lo), float(hi)

    def moments(self) -> dict:
        """Mean, standard deviation and Fisher skewness by quadrature."""
        a, b = self.support(1e-12)
        m = [
            integrate.quad(lambda x, p=p: x**p * self.pdf(x), a, b, limit=200, epsabs=1e-12)[0]
            for p in (0, 1, 2, 3)
        ]
        mean = m[1] / m[0]
        var = m[2] / m[0] - mean**2
        third = m[3] / m[0] - 3 * mean * var - mean**3
        return {"mean": mean, "sd": math.sqrt(var), "skewness": third / var**1.5}

    def grid(self, n: int = 512, eps: float = 1e-4) -> dict:
        """Evenly spaced (mu, cdf, pdf) grid covering the central ``1 - 2 eps`` mass."""
        a, b = self.support(eps)
        mu = np.linspace(a, b, n)
        f, d = _cdf_and_pdf(self.dataset.effects, self._sd, mu)
        return {"mu": mu, "cdf": f, "pdf": d}


def cd_cdf(cd: EdgingtonCD, mu):
    return cd.cdf(mu)


def cd_density(cd: EdgingtonCD, mu):
    return cd.pdf(mu)


def cd_quantile(cd: EdgingtonCD, q):
    return cd.quantile(q)


def cd_two_sided_p(cd: EdgingtonCD, mu0):
    return cd.two_sided_p(mu0)
