"""Chi-squared bounds between Gaussian location mixtures.

For centered pi0 supported in [-R0, R0],

    chi2(P_pi1, P_pi0) <= exp(R0^2 / (2 sigma^2)) * sum_{j>=1} D_j^2 / (j! sigma^{2j})

with D_j = m_j(pi1) - m_j(pi0).  The series is summed exactly up to a cutoff
and the remainder is bounded by sum_{j>J} 4 x^j / j!, x = delta^2 / sigma^2,
which uses only |D_j| <= 2 delta^j.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from .moments import MixingPair

MAX_RATIO = 50.0
TAIL_TOL = 1e-12


def _tail_bound(x: float, J: int) -> float:
    """Upper bound on sum_{j>J} 4 x^j / j!, valid once J + 2 > x."""
    if x == 0:
        return 0.0
    r = x / (J + 2)
    if r >= 1:
        return math.inf
    return 4.0 * math.exp((J + 1) * math.log(x) - math.lgamma(J + 2)) / (1 - r)


def series_cutoff(x: float, tol: float = TAIL_TOL) -> int:
    J = max(1, int(math.ceil(x)) + 1)
    while _tail_bound(x, J) >= tol:
        J += 1
    return J


def chi2_one_dim_bound(pair: MixingPair, sigma: float) -> float:
    """Upper bound on chi2(P_pi1, P_pi0) for one coordinate X = v + sigma Z."""
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValidationError("sigma must be a positive real")
    v = pair.scaled_support
    w0, w1 = pair.w0, pair.w1
    if abs(math.fsum(w0 * v)) > 1e-10 * max(1.0, pair.delta):
        raise ValidationError("pi0 must be centered")
    delta = float(np.max(np.abs(v))) if v.size else 0.0
    if delta == 0 or np.array_equal(w0, w1):
        # every moment difference vanishes, so does the tail
        return 0.0
    x = delta ** 2 / sigma ** 2
    if x > MAX_RATIO:
        raise ValidationError(f"delta^2/sigma^2 = {x:.3g} exceeds {MAX_RATIO}; series bound refused")
    r0 = float(np.max(np.abs(v[w0 > 0]))) if np.any(w0 > 0) else 0.0
    J = series_cutoff(x)
    u = v / sigma
    dw = np.concatenate([w1, -w0])
    uu = np.concatenate([u, u])
    terms = []
    power = np.ones_like(uu)
    for j in range(1, J + 1):
        power = power * uu
        dj = math.fsum(dw * power)
        if dj != 0.0:
            terms.append(math.exp(2 * math.log(abs(dj)) - math.lgamma(j + 1)))
    total = math.fsum(terms) + _tail_bound(x, J)
    return math.exp(r0 ** 2 / (2 * sigma ** 2)) * total


def chi2_tensorize(chi2_one: float, d: int) -> float:
    """(1 + chi2_one)^d - 1; +inf when the result overflows."""
    if not (chi2_one >= 0):
        raise ValidationError("chi2_one must be non-negative")
    if int(d) != d or d < 1:
        raise ValidationError("d must be a positive integer")
    t = int(d) * math.log1p(chi2_one)
    if t > 709.0:
        return math.inf
    return math.expm1(t)


def worst_case_bound(t: float, L: int) -> float:
    """exp(t^2/2) * sum_{j>L} 4 t^{2j} / j!: one-coordinate bound for any
    pair on [-t sigma, t sigma] matching L moments."""
    x = t * t
    if x == 0:
        return 0.0
    J = max(series_cutoff(x), L + 1)
    terms = [4.0 * math.exp(j * math.log(x) - math.lgamma(j + 1)) for j in range(L + 1, J + 1)]
    return math.exp(x / 2) * (math.fsum(terms) + _tail_bound(x, J))


def feasible_delta(L: int, d: int, sigma: float, target_chi2: float, tol: float = 1e-12) -> float:
    """Largest delta (bisection on delta/sigma) whose worst-case bound
    tensorizes to at most ``target_chi2``."""
    if int(L) != L or L < 0 or int(d) != d or d < 1:
        raise ValidationError("L must be a non-negative integer and d a positive integer")
    if not (sigma > 0 and target_chi2 > 0):
        raise ValidationError("sigma and target_chi2 must be positive")

    def ok(t):
        return chi2_tensorize(worst_case_bound(t, int(L)), int(d)) <= target_chi2

    lo, hi = 1e-12, math.sqrt(MAX_RATIO)
    if not ok(lo):
        raise ValidationError("no feasible delta above 1e-12 sigma")
    if ok(hi):
        return hi * sigma
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo * sigma
