"""Dense primal-dual interior point method for small standard-form LPs.

    minimize c^T x  subject to  A x = b,  x >= 0

Mehrotra predictor-corrector on the normal equations.  The moment problems
here have a few dozen rows and a few thousand columns, so A D A^T is tiny
and every iteration is one small Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import ConvergenceError

GAMMA = 1e-4


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float


def _solve_normal(A, dvec, rhs):
    M = (A * dvec) @ A.T
    reg = 1e-14 * max(1.0, float(np.trace(M)) / M.shape[0])
    M[np.diag_indices_from(M)] += reg
    try:
        return linalg.cho_solve(linalg.cho_factor(M, lower=True, check_finite=False), rhs, check_finite=False)
    except linalg.LinAlgError:
        return linalg.lstsq(M, rhs, check_finite=False)[0]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_lp(c, A, b, tol: float = 1e-10, max_iter: int = 200, acceptable_tol: float = 1e-7) -> LPResult:
    """Solve the LP; raises ConvergenceError when tolerances are not met.

    Convergence requires relative primal and dual residuals and the relative
    duality gap all below ``tol``.  Near-duplicate columns make the last
    iterations ill-conditioned; if the method stalls, the best iterate is
    returned provided it meets ``acceptable_tol``.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape

    # Mehrotra's starting point
    AAt = A @ A.T
    x = A.T @ linalg.lstsq(AAt, b, check_finite=False)[0]
    y = linalg.lstsq(AAt, A @ c, check_finite=False)[0]
    s = c - A.T @ y
    x = x + max(-1.5 * x.min(), 0.0)
    s = s + max(-1.5 * s.min(), 0.0)
    xs = float(x @ s)
    x = x + 0.5 * xs / max(s.sum(), 1e-300) + 1e-8
    s = s + 0.5 * xs / max(x.sum(), 1e-300) + 1e-8

    bnorm, cnorm = 1.0 + np.linalg.norm(b), 1.0 + np.linalg.norm(c)
    best, best_err = None, np.inf
    for it in range(1, max_iter + 1):
        rp = b - A @ x
        rd = c - A.T @ y - s
        mu = float(x @ s) / n
        pobj, dobj = float(c @ x), float(b @ y)
        pres, dres = np.linalg.norm(rp) / bnorm, np.linalg.norm(rd) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        if pres < tol and dres < tol and gap < tol:
            return LPResult(x, y, s, pobj, it, float(pres), float(dres), float(gap))
        err = max(pres, dres, gap)
        if err < best_err:
            best_err = err
            best = LPResult(x.copy(), y.copy(), s.copy(), pobj, it, float(pres), float(dres), float(gap))
        if mu < 1e-30 or not (np.all(x > 0) and np.all(s > 0)):
            break  # numerically at the boundary, no further progress possible

        dvec = x / s

        def direction(rc):
            # S dx + X ds = rc,  A dx = rp,  A^T dy + ds = rd
            rhs = rp - A @ ((rc - x * rd) / s)
            dy = _solve_normal(A, dvec, rhs)
            ds = rd - A.T @ dy
            dx = (rc - x * ds) / s
            return dx, dy, ds

        dx_a, dy_a, ds_a = direction(-x * s)
        ap = _max_step(x, dx_a)
        ad = _max_step(s, ds_a)
        mu_aff = float((x + ap * dx_a) @ (s + ad * ds_a)) / n
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds = direction(-x * s - dx_a * ds_a + sigma * mu)
        eta = 0.9995
        ap = min(1.0, eta * _max_step(x, dx))
        ad = min(1.0, eta * _max_step(s, ds))
        # stay in a wide neighbourhood of the central path: pairs x_i s_i far
        # below the average stall the method on degenerate problems
        for _ in range(30):
            xn, sn = x + ap * dx, s + ad * ds
            mu_n = float(xn @ sn) / n
            if np.min(xn * sn) >= GAMMA * mu_n:
                break
            ap *= 0.8
            ad *= 0.8
        x = x + ap * dx
        y = y + ad * dy
        s = s + ad * ds
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
            break
    if best is not None and best_err < acceptable_tol:
        return best
    raise ConvergenceError(f"interior point method did not converge in {max_iter} iterations")
