"""Best uniform polynomial approximation A_p(L) of |x|^p on [-1, 1].

|x|^p is even, so the best approximant is even and it suffices to work on
[0, 1] with the basis T_{2k}(x), k = 0..L//2.  That system is Haar on
[0, 1] (T_{2k}(x) = T_k(2x^2 - 1)), so the optimum equioscillates on
L//2 + 2 points and the Remez exchange applies.

The coarse solution comes from an LP on a Chebyshev grid (HiGHS); Remez
then sharpens it to the continuous optimum, and the final error is checked
on a grid ten times finer than the LP grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import linprog, minimize_scalar

from ..errors import ConvergenceError, ValidationError
from .moments import default_grid_size, half_grid

VERIFY_TOL = 1e-9


@dataclass(frozen=True)
class PolyApproxResult:
    """Minimax error of |x|^p by degree-<=L polynomials.

    ``coefficients`` are Chebyshev coefficients in x (length L + 1, odd
    entries zero).  ``reference`` holds the alternation points in [0, 1].
    """

    degree: int
    error: float
    coefficients: np.ndarray
    p: float
    reference: np.ndarray
    alternations: int
    claimed_error: float

    def __call__(self, x):
        return cheb.chebval(np.asarray(x, dtype=float), self.coefficients)


def _basis(x: np.ndarray, K: int) -> np.ndarray:
    return cheb.chebvander(x, 2 * K)[:, ::2]


def _err(x, c, p):
    x = np.asarray(x, dtype=float)
    return x ** p - _basis(np.atleast_1d(x), c.size - 1) @ c


def _lp_start(p: float, K: int, x: np.ndarray) -> np.ndarray:
    """min h s.t. |x_i^p - sum c_k T_2k(x_i)| <= h on the grid."""
    B = _basis(x, K)
    f = x ** p
    n = K + 1
    A_ub = np.block([[B, -np.ones((x.size, 1))], [-B, -np.ones((x.size, 1))]])
    b_ub = np.concatenate([f, -f])
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * n + [(0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise ConvergenceError(f"approximation LP failed: {res.message}")
    return res.x[:n]


def _local_extrema(c: np.ndarray, p: float, grid: np.ndarray):
    """Signed extrema of the error, one per sign run, refined locally."""
    e = _err(grid, c, p)
    sgn = np.sign(e)
    sgn[sgn == 0] = 1
    cuts = np.flatnonzero(np.diff(sgn)) + 1
    pts, vals = [], []
    for run in np.split(np.arange(grid.size), cuts):
        i = run[np.argmax(np.abs(e[run]))]
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        best_x, best_e = grid[i], e[i]
        if 0 < i < grid.size - 1:
            s = 1.0 if e[i] > 0 else -1.0
            r = minimize_scalar(lambda t: -s * _err(t, c, p)[0], bounds=(lo, hi),
                                method="bounded", options={"xatol": 1e-15})
            if abs(_err(r.x, c, p)[0]) > abs(best_e):
                best_x, best_e = float(r.x), float(_err(r.x, c, p)[0])
        pts.append(best_x)
        vals.append(best_e)
    return np.array(pts), np.array(vals)


def _select(pts, vals, n):
    pts, vals = list(pts), list(vals)
    while len(pts) > n:
        # extra alternation points are trimmed from the weaker end
        if abs(vals[0]) < abs(vals[-1]):
            pts.pop(0), vals.pop(0)
        else:
            pts.pop(), vals.pop()
    return np.array(pts), np.array(vals)


def _remez(p: float, K: int, c: np.ndarray, grid: np.ndarray, max_iter: int = 60):
    n = K + 2
    c_best, ref_best, claim_best = c, None, math.inf
    for _ in range(max_iter):
        pts, vals = _local_extrema(c, p, grid)
        if pts.size < n:
            raise ConvergenceError("Remez: fewer alternation points than the degree requires")
        claim = float(np.max(np.abs(vals)))
        ref, rv = _select(pts, vals, n)
        lev = float(np.min(np.abs(rv)))
        if claim < claim_best:
            c_best, ref_best, claim_best = c, ref, claim
        if claim - lev <= 1e-14 * max(1.0, claim) + 1e-16:
            return c, ref, claim
        # solve for the levelled error on the new reference
        M = np.column_stack([_basis(ref, K), (-1.0) ** np.arange(n)])
        sol = np.linalg.solve(M, ref ** p)
        c = sol[:-1]
    if ref_best is None:
        raise ConvergenceError("Remez exchange did not converge")
    return c_best, ref_best, claim_best


def best_poly_approx(p: float, L: int, grid_size: int | None = None) -> PolyApproxResult:
    """A_p(L) = inf over degree-<=L polynomials f of sup_{|x|<=1} ||x|^p - f(x)|."""
    if not (math.isfinite(p) and p > 0):
        raise ValidationError("p must be a positive real")
    if int(L) != L or L < 0:
        raise ValidationError("L must be a non-negative integer")
    L = int(L)
    K = L // 2
    coeffs = np.zeros(L + 1)
    if float(p).is_integer() and int(p) % 2 == 0 and p <= L:
        # |x|^p is itself a polynomial of degree p <= L
        coeffs[: int(p) + 1] = cheb.poly2cheb(np.eye(int(p) + 1)[int(p)])
        return PolyApproxResult(L, 0.0, coeffs, float(p), np.array([]), 0, 0.0)

    grid_size = default_grid_size(L) if grid_size is None else int(grid_size)
    x_lp = half_grid(grid_size)
    c0 = _lp_start(p, K, x_lp)
    search = half_grid(max(4000, 40 * (K + 2)))
    c, ref, claim = _remez(p, K, c0, search)

    # verification on a grid ten times finer than the LP grid, plus the
    # reference points where the maximum is attained
    check = np.union1d(half_grid(10 * grid_size), ref)
    verified = float(np.max(np.abs(_err(check, c, p))))
    if abs(verified - claim) > VERIFY_TOL:
        raise ConvergenceError(f"verified error {verified!r} differs from claimed {claim!r}")
    e_ref = _err(ref, c, p)
    alt = 1 + int(np.sum(np.sign(e_ref[1:]) != np.sign(e_ref[:-1]))) if ref.size else 0
    coeffs[0:2 * K + 1:2] = c
    return PolyApproxResult(L, verified, coeffs, float(p), ref, alt, claim)
