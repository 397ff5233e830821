"""Dense two-phase simplex for  min sum(w)  s.t.  C w = b,  w >= 0.

The problems are tiny (5 or 9 rows, tens to a few hundred columns) and are
solved once per cloud point, so the tableau loops are compiled.  Bland's
rule is used in both phases.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import Infeasible, LpNumericalError

LP_TOL = 1e-10
FEAS_TOL = 1e-8
_PIVOT_EPS = 1e-9
_COST_EPS = 1e-11
_RHS_DUST = 1e-13

OPTIMAL, INFEASIBLE, BREAKDOWN = 0, 1, 2


@njit(cache=True)
def _pivot(t, r, e):
    rows, cols = t.shape
    inv = 1.0 / t[r, e]
    for j in range(cols):
        t[r, j] *= inv
    t[r, e] = 1.0
    for i in range(rows):
        if i == r:
            continue
        f = t[i, e]
        if f != 0.0:
            for j in range(cols):
                t[i, j] -= f * t[r, j]
            t[i, e] = 0.0


@njit(cache=True)
def _leaving_row(t, basis, active, e):
    m = t.shape[0] - 1
    rhs = t.shape[1] - 1
    r = -1
    best = np.inf
    for i in range(m):
        if not active[i] or t[i, e] <= _PIVOT_EPS:
            continue
        ratio = t[i, rhs] / t[i, e]
        if r < 0 or ratio < best - 1e-14:
            best = ratio
            r = i
        elif ratio <= best + 1e-14 and basis[i] < basis[r]:
            # Bland: among tied rows leave with the smallest variable index
            r = i
    return r


@njit(cache=True)
def _iterate(t, basis, active, ncols, max_iter):
    """Bland's rule pivoting on rows flagged ``active``; only the first
    ``ncols`` columns may enter.  Returns OPTIMAL or BREAKDOWN.

    A column with negative reduced cost but no usable pivot (all entries
    below the pivot threshold) is rounding noise in a bounded problem; it
    is passed over and the next candidate tried.
    """
    m = t.shape[0] - 1
    for _ in range(max_iter):
        e = -1
        r = -1
        for j in range(ncols):
            if t[m, j] < -_COST_EPS:
                r = _leaving_row(t, basis, active, j)
                if r >= 0:
                    e = j
                    break
        if e < 0:
            return OPTIMAL
        _pivot(t, r, e)
        basis[r] = e
        # Bland's rule only rules out cycling when degenerate ratios tie
        # exactly, so rounding dust in the right-hand side is flushed
        rhs = t.shape[1] - 1
        for i in range(m):
            if abs(t[i, rhs]) < _RHS_DUST:
                t[i, rhs] = 0.0
    return BREAKDOWN


@njit(cache=True)
def _two_phase(a, b, feas_tol):
    m, n = a.shape
    t = np.zeros((m + 1, n + m + 1))
    rhs = n + m
    for i in range(m):
        sign = -1.0 if b[i] < 0.0 else 1.0
        for j in range(n):
            t[i, j] = sign * a[i, j]
        t[i, n + i] = 1.0
        t[i, rhs] = sign * b[i]
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        basis[i] = n + i
    active = np.ones(m, dtype=np.bool_)
    # phase 1: minimise the sum of the artificials
    for j in range(n):
        s = 0.0
        for i in range(m):
            s += t[i, j]
        t[m, j] = -s
    s = 0.0
    for i in range(m):
        s += t[i, rhs]
    t[m, rhs] = -s
    max_iter = 50 * (n + m)
    x = np.zeros(n)
    if _iterate(t, basis, active, n, max_iter) != OPTIMAL:
        return BREAKDOWN, x, basis
    if -t[m, rhs] > feas_tol:
        return INFEASIBLE, x, basis
    # drive artificials out of the basis; rows that cannot pivot are redundant
    for i in range(m):
        if basis[i] < n:
            continue
        e = -1
        big = _PIVOT_EPS
        for j in range(n):
            if abs(t[i, j]) > big:
                big = abs(t[i, j])
                e = j
        if e >= 0:
            _pivot(t, i, e)
            basis[i] = e
        else:
            active[i] = False
    # phase 2: unit costs on the original columns
    for j in range(n + m + 1):
        t[m, j] = 0.0
    for j in range(n):
        t[m, j] = 1.0
    for i in range(m):
        if active[i] and basis[i] < n:
            for j in range(n + m + 1):
                t[m, j] -= t[i, j]
    if _iterate(t, basis, active, n, max_iter) != OPTIMAL:
        return BREAKDOWN, x, basis
    for i in range(m):
        if active[i] and basis[i] < n:
            x[basis[i]] = t[i, rhs]
    return OPTIMAL, x, basis


@njit(cache=True)
def _solve(c, b, lp_tol, feas_tol):
    """Scale, solve, polish and verify.  Status codes as in _two_phase, with
    BREAKDOWN also covering a residual or sign check failure."""
    m, n = c.shape
    x = np.zeros(n)
    keep = np.zeros(m, dtype=np.bool_)
    scale = np.zeros(m)
    for i in range(m):
        for j in range(n):
            scale[i] = max(scale[i], abs(c[i, j]))
        if scale[i] > 0.0:
            keep[i] = True
        elif b[i] != 0.0:
            return INFEASIBLE, x
    mk = int(np.sum(keep))
    a = np.empty((mk, n))
    bs = np.empty(mk)
    r = 0
    b_scale = 0.0
    for i in range(m):
        if keep[i]:
            for j in range(n):
                a[r, j] = c[i, j] / scale[i]
            bs[r] = b[i] / scale[i]
            b_scale = max(b_scale, abs(bs[r]))
            r += 1
    if b_scale == 0.0:
        return OPTIMAL, x
    bs /= b_scale
    status, xs, basis = _two_phase(a, bs, feas_tol)
    if status != OPTIMAL:
        return status, x
    # re-solve the final basis directly; the tableau accumulates rounding
    cols = np.empty(mk, dtype=np.int64)
    k = 0
    for i in range(mk):
        if basis[i] < n:
            cols[k] = basis[i]
            k += 1
    cols = np.sort(cols[:k])
    if k > 0:
        sub = np.empty((mk, k))
        for i in range(mk):
            for jj in range(k):
                sub[i, jj] = a[i, cols[jj]]
        if k == mk:
            sol = np.linalg.solve(sub, bs)
        else:
            sol = np.linalg.lstsq(sub, bs)[0]
        for jj in range(k):
            if sol[jj] < -1e-9:
                return BREAKDOWN, x
            x[cols[jj]] = max(sol[jj], 0.0) * b_scale
    resid = 0.0
    bmax = 0.0
    for i in range(m):
        acc = -b[i]
        for j in range(n):
            acc += c[i, j] * x[j]
        resid = max(resid, abs(acc))
        bmax = max(bmax, abs(b[i]))
    if resid > lp_tol * (1.0 + bmax):
        return BREAKDOWN, x
    return OPTIMAL, x


def simplex_min_sum(c, b, lp_tol: float = LP_TOL, feas_tol: float = FEAS_TOL) -> np.ndarray:
    """Basic optimal solution of  min sum(w), C w = b, w >= 0.

    Rows are scaled to unit max-norm and the right-hand side to unit size
    before solving, so the tolerances are relative.  Raises
    :class:`Infeasible` when phase 1 cannot reach zero, and
    :class:`LpNumericalError` when pivoting breaks down or the result
    misses the constraints by more than ``lp_tol``.
    """
    c = np.ascontiguousarray(c, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if c.ndim != 2 or b.shape != (c.shape[0],):
        raise ValueError("C must be (m, n) and b of length m")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
        raise LpNumericalError("non-finite constraint data")
    status, x = _solve(c, b, lp_tol, feas_tol)
    if status == INFEASIBLE:
        raise Infeasible("phase 1 optimum above the feasibility tolerance")
    if status == BREAKDOWN:
        raise LpNumericalError("simplex breakdown or constraint residual above tolerance")
    return x
