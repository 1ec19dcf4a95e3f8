"""Dense revised simplex for standard-form LPs with few rows.

    minimize c^T x  subject to  A x = b,  x >= 0

The moment problems have a handful of rows and a few thousand columns and
are highly degenerate (most right-hand sides are zero), which is where
interior point methods lose accuracy.  Here the basis matrix is at most
~20 x 20, so it is refactored from scratch at every pivot.  Dantzig pricing
switches to Bland's rule after a run of degenerate pivots; the ratio test
is Harris's two-pass rule.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg

from ..errors import ConvergenceError, ValidationError
from .ipm import LPResult

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-12
STALL = 50


def _iterate(A, b, c, basis, allowed, max_iter, opt_tol):
    """Primal simplex from a feasible basis; returns (basis, x_B, y, iterations)."""
    m, n = A.shape
    stalled = 0
    last = np.inf
    for it in range(1, max_iter + 1):
        lu = linalg.lu_factor(A[:, basis], check_finite=False)
        xB = np.maximum(linalg.lu_solve(lu, b, check_finite=False), 0.0)
        y = linalg.lu_solve(lu, c[basis], trans=1, check_finite=False)
        d = c - A.T @ y
        d[basis] = 0.0
        d[~allowed] = 0.0
        cand = np.flatnonzero(d < -opt_tol)
        if cand.size == 0:
            return basis, xB, y, it
        obj = float(c[basis] @ xB)
        stalled = stalled + 1 if obj >= last - 1e-15 * (1 + abs(obj)) else 0
        last = min(last, obj)
        j = int(cand[0]) if stalled > STALL else int(cand[np.argmin(d[cand])])
        u = linalg.lu_solve(lu, A[:, j], check_finite=False)
        pos = u > PIVOT_TOL * max(1.0, float(np.max(np.abs(u))))
        if not np.any(pos):
            raise ConvergenceError("LP is unbounded")
        # Harris: relax the bound slightly, then take the largest pivot
        theta_max = np.min((xB[pos] + FEAS_TOL) / u[pos])
        rows = np.flatnonzero(pos)
        ok = rows[xB[rows] / u[rows] <= theta_max]
        r = int(ok[np.argmax(u[ok])]) if stalled <= STALL else int(min(ok, key=lambda i: basis[i]))
        basis = basis.copy()
        basis[r] = j
    raise ConvergenceError(f"simplex did not finish in {max_iter} pivots")


def solve_lp_simplex(c, A, b, tol: float = 1e-11, max_iter: int = 20000) -> LPResult:
    """Two-phase revised simplex; returns a basic optimal solution."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValidationError("inconsistent LP dimensions")
    sign = np.where(b < 0, -1.0, 1.0)
    A1, b1 = A * sign[:, None], b * sign

    # phase I with one artificial per row
    Aa = np.hstack([A1, np.eye(m)])
    ca = np.r_[np.zeros(n), np.ones(m)]
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, dtype=bool)
    scale = 1.0 + float(np.max(np.abs(b1)))
    basis, xB, _, it1 = _iterate(Aa, b1, ca, basis, allowed, max_iter, tol)
    if float(ca[basis] @ xB) > 1e-9 * scale:
        raise ConvergenceError("LP is infeasible")

    # drive zero-level artificials out of the basis; drop redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        lu = linalg.lu_factor(Aa[:, basis], check_finite=False)
        row = linalg.lu_solve(lu, np.eye(m)[r], trans=1, check_finite=False) @ A1
        row[basis[basis < n]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > 1e-7:
            basis[r] = j
        else:
            keep[r] = False
    A2, b2 = A1[keep], b1[keep]
    basis = basis[keep]
    if np.any(basis >= n):
        raise ConvergenceError("could not remove artificial variables")

    allowed = np.ones(n, dtype=bool)
    basis, xB, y2, it2 = _iterate(A2, b2, c, basis, allowed, max_iter, tol * (1 + float(np.max(np.abs(c)))))
    x = np.zeros(n)
    x[basis] = xB
    y = np.zeros(m)
    y[keep] = y2
    y = y * sign
    s = c - A.T @ y
    pres = float(np.linalg.norm(A @ x - b) / (1 + np.linalg.norm(b)))
    dres = float(np.linalg.norm(np.minimum(s, 0.0)) / (1 + np.linalg.norm(c)))
    pobj = float(c @ x)
    gap = abs(pobj - float(b @ y)) / (1 + abs(pobj))
    return LPResult(x, y, np.maximum(s, 0.0), pobj, it1 + it2, pres, dres, gap)
