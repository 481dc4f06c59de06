"""Vectorised bracketed root finding for monotone functions.

Every element keeps its own bracket. A Newton step is taken when it stays
inside the bracket, otherwise the bracket is bisected, so convergence is
guaranteed for continuous increasing functions.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NumericalError

BRACKET_CAP = 2.0**60


def solve_increasing(fun, lo, hi, ftol, maxiter=200, x0=None):
    """Find x in [lo, hi] with |g(x)| <= ftol for an increasing g.

    ``fun(x, idx)`` must return ``(g, dg)`` evaluated at ``x`` for the
    elements ``idx`` of the problem (``dg`` may be ``None`` to force
    bisection). The caller guarantees ``g(lo) <= 0 <= g(hi)`` elementwise.

    Elements whose bracket collapses to floating-point resolution are
    accepted as converged; the caller decides whether the residual is
    good enough.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float, copy=True), lo, hi)
    resid = np.full(x.shape, np.inf)
    active = np.arange(x.size)
    for _ in range(maxiter):
        if active.size == 0:
            break
        xa = x[active]
        g, dg = fun(xa, active)
        resid[active] = g
        below = g < 0
        lo[active] = np.where(below, xa, lo[active])
        hi[active] = np.where(below, hi[active], xa)
        la, ha = lo[active], hi[active]
        done = (np.abs(g) <= ftol) | (ha - la <= 4 * np.finfo(float).eps * np.maximum(np.abs(la), np.abs(ha)) + 1e-300)
        mid = 0.5 * (la + ha)
        if dg is None:
            step = mid
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                step = xa - g / dg
            bad = ~np.isfinite(step) | (step <= la) | (step >= ha)
            step = np.where(bad, mid, step)
        x[active] = np.where(done, xa, step)
        active = active[~done]
    if active.size:
        raise NumericalError(f"root finding did not converge for {active.size} element(s)")
    return x, resid


def expand_upper(fun_at, target, start=1.0, cap=BRACKET_CAP):
    """Smallest ``start * 2**j`` with ``fun_at(upper) < target`` (elementwise).

    ``fun_at`` is decreasing. Raises if the cap is hit.
    """
    target = np.asarray(target, dtype=float)
    upper = np.full(target.shape, float(start))
    todo = np.arange(target.size)
    while todo.size:
        vals = fun_at(upper[todo], todo)
        todo = todo[vals >= target[todo]]
        if todo.size == 0:
            break
        upper[todo] *= 2.0
        if np.any(upper[todo] > cap):
            raise NumericalError("upper bracket expansion exceeded 2**60")
    return upper
