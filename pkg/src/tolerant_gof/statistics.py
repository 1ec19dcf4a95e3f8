"""Plug-in statistics for ||v||_p^p and their mean/variance envelopes.

Everything per coordinate is expressed in sigma units: with u = v_i / sigma,

    h(u) = E g_p(Z + u),   H(u) = Var g_p(Z + u),

where g_p(x) = |x|^p - sum_{j<k} C(p, 2j) mu_{p-2j} He_{2j}(x), k = floor(p/2)
(for p <= 2 only the j = 0 centering term is present).  Then
E T_p = sigma^p sum_i h(u_i) and Var T_p = sigma^{2p} sum_i H(u_i).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .errors import ValidationError

KINDS = ("plugin_lp", "debiased_lp", "chi2", "tv_plugin")
# lower mean constant for p < 2 is never larger than this
LOWER_CAP = 0.125


def _check_p(p: float) -> None:
    if not (math.isfinite(p) and p >= 1):
        raise ValidationError("p must be a finite real >= 1")


def _check_sigma(sigma: float) -> None:
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValidationError("sigma must be a positive finite real")


def _is_even(p: float) -> bool:
    return float(p).is_integer() and int(p) % 2 == 0


def hermite(j: int, x):
    """Probabilists' Hermite polynomial He_j(x) by the three-term recurrence."""
    if int(j) != j or j < 0:
        raise ValidationError("j must be a non-negative integer")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if j == 0:
        return prev if prev.ndim else float(prev)
    for i in range(1, int(j)):
        prev, cur = cur, x * cur - i * prev
    return cur if cur.ndim else float(cur)


def gaussian_abs_moment(p: float) -> float:
    """mu_p = E|Z|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)."""
    if p < 0:
        raise ValidationError("p must be >= 0")
    if float(p).is_integer() and p <= 100:
        q = int(p)
        if q % 2 == 0:
            return float(math.prod(range(1, q, 2)))
        m = q // 2
        return math.sqrt(2 / math.pi) * 2.0 ** m * math.factorial(m)
    return math.exp(0.5 * p * math.log(2.0) + math.lgamma(0.5 * (p + 1)) - 0.5 * math.log(math.pi))


def falling_binom(p: float, k: int) -> float:
    """p (p-1) ... (p-k+1) / k!, defined for real p."""
    out = 1.0
    for i in range(int(k)):
        out *= (p - i) / (i + 1)
    return out


def correction_coefficients(p: float) -> list[tuple[int, float]]:
    """(2j, C(p,2j) mu_{p-2j}) for j = 1..k-1, k = floor(p/2)."""
    k = int(math.floor(p / 2))
    return [(2 * j, falling_binom(p, 2 * j) * gaussian_abs_moment(p - 2 * j)) for j in range(1, k)]


def _power_sum(x: np.ndarray, p: float):
    a = np.abs(x) ** p
    if a.ndim == 1:
        return math.fsum(a)
    return a.sum(axis=-1)


def plugin_statistic(x, p: float, sigma: float):
    """sum |x_i|^p - d sigma^p mu_p.  ``x`` may be a (reps, d) batch."""
    _check_p(p)
    _check_sigma(sigma)
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return _power_sum(x, p) - d * sigma ** p * gaussian_abs_moment(p)


def debias_correction(x, p: float, sigma: float):
    """r_p(X); zero whenever floor(p/2) <= 1."""
    _check_p(p)
    _check_sigma(sigma)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    coeffs = correction_coefficients(p)
    if not coeffs:
        return out
    z = x / sigma
    # walk the recurrence once and pick up every even order we need
    wanted = dict(coeffs)
    top = max(wanted)
    prev, cur = np.ones_like(z), z.copy()
    for i in range(1, top):
        prev, cur = cur, z * cur - i * prev
        if i + 1 in wanted:
            s = cur.sum(axis=-1)
            out = out + wanted[i + 1] * sigma ** p * (float(s) if x.ndim == 1 else s)
    return out


def debiased_statistic(x, p: float, sigma: float):
    """T_p = plug-in minus r_p (identical to the plug-in when p <= 2)."""
    t = plugin_statistic(x, p, sigma)
    if p > 2:
        t = t - debias_correction(x, p, sigma)
    return t


def chi2_statistic(x, sigma: float):
    """||x||_2^2 - d sigma^2."""
    return plugin_statistic(x, 2.0, sigma)


def tv_plugin_statistic(counts, n: int, G):
    """V(F_hat, G) = 0.5 sum |counts_i / n - G_i|."""
    counts = np.asarray(counts, dtype=float)
    G = np.asarray(G, dtype=float)
    if counts.shape[-1] != G.shape[-1]:
        raise ValidationError("counts and G have different lengths")
    if np.any(np.abs(counts.sum(axis=-1) - n) > 0.5):
        raise ValidationError("counts must sum to n")
    return 0.5 * np.abs(counts / n - G).sum(axis=-1)


# ----------------------------------------------------------------------------
# per-coordinate curves in sigma units


def abs_moment_shifted(p: float, u):
    """E|Z + u|^p via the confluent hypergeometric closed form."""
    u = np.asarray(u, dtype=float)
    return gaussian_abs_moment(p) * special.hyp1f1(-0.5 * p, 0.5, -0.5 * u * u)


def mean_curve(p: float, u):
    """h(u) = E g_p(Z + u)."""
    u = np.asarray(u, dtype=float)
    if _is_even(p):
        return u ** int(p)
    out = abs_moment_shifted(p, u) - gaussian_abs_moment(p)
    for order, c in correction_coefficients(p):
        out = out - c * u ** order
    return out


def _g(p: float, x):
    out = np.abs(x) ** p - gaussian_abs_moment(p)
    for order, c in correction_coefficients(p):
        out = out - c * hermite(order, x)
    return out


def _gauss_expect(fn, u: float) -> float:
    pdf = lambda z: fn(z + u) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    pts = [-u] if -40 < -u < 40 else None
    val, _ = integrate.quad(pdf, -40, 40, points=pts, epsabs=0, epsrel=1e-12, limit=400)
    return val


def var_curve(p: float, u):
    """H(u) = Var g_p(Z + u)."""
    u = np.asarray(u, dtype=float)
    if _is_even(p):
        q = int(p)
        return sum(falling_binom(q, j) ** 2 * math.factorial(j) * u ** (2 * (q - j)) for j in range(1, q + 1))
    if p <= 2:
        return abs_moment_shifted(2 * p, u) - abs_moment_shifted(p, u) ** 2
    flat = np.atleast_1d(u).ravel()
    out = np.array([_gauss_expect(lambda x: _g(p, x) ** 2, float(ui)) for ui in flat]) - mean_curve(p, flat) ** 2
    return out.reshape(u.shape) if u.ndim else float(out[0])


# ----------------------------------------------------------------------------
# envelope constants

_U_GRID = np.logspace(-3, 3, 241)


def _refine(fn, grid: np.ndarray, vals: np.ndarray, maximize: bool) -> float:
    i = int(np.argmax(vals) if maximize else np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    sign = -1.0 if maximize else 1.0
    res = optimize.minimize_scalar(lambda t: sign * fn(math.exp(t)), bounds=(math.log(lo), math.log(hi)),
                                   method="bounded", options={"xatol": 1e-10})
    best = fn(math.exp(res.x))
    return max(best, vals[i]) if maximize else min(best, vals[i])


@dataclass(frozen=True)
class EnvelopeConstants:
    p: float
    c_lower: float
    c_upper: float
    c_var: float


@lru_cache(maxsize=None)
def envelope_constants(p: float) -> EnvelopeConstants:
    """Numerical constants used by :func:`envelope`, computed once per p.

    For p < 2, ``c_lower`` is min(1/8, C) where C comes from the per-coordinate
    bound h(u) >= C1 (|u|^p ^ u^2).  For p > 2, ``c_lower`` and ``c_var`` are
    min h(u)/|u|^p and max H(u)/(1 + |u|^{2(p-1)}) over a log grid with local
    refinement; ``c_upper`` is max h(u)/(|u|^p + u^{2k}) (unused for even p).
    """
    _check_p(p)
    if p == 2:
        return EnvelopeConstants(p, 1.0, 1.0, 1.0)
    if p < 2:
        ratio = lambda u: float(mean_curve(p, u)) / min(u ** p, u * u)
        vals = np.array([ratio(u) for u in _U_GRID])
        c1 = min(_refine(ratio, _U_GRID, vals, maximize=False), h2_half(p), 1.0)
        # p = 1: Jensen on the convex h gives the bound directly with C1;
        # 1 < p < 2 goes through the split into small and large coordinates.
        c = c1 if p == 1 else c1 * min(0.5, 4 ** (-1.0 / p))
        return EnvelopeConstants(p, min(LOWER_CAP, c), 1.0, float("nan"))
    if _is_even(p):
        q = int(p)
        ratio = lambda u: float(var_curve(q, u)) / (1 + u ** (2 * (q - 1)))
        vals = np.array([ratio(u) for u in _U_GRID])
        # limits: H(0) at the left end, p^2 at the right end
        c3 = max(_refine(ratio, _U_GRID, vals, maximize=True), float(var_curve(q, 0.0)), q * q)
        return EnvelopeConstants(p, 1.0, 1.0, c3)
    k2 = 2 * int(math.floor(p / 2))
    h = lambda u: float(mean_curve(p, u))
    lower = lambda u: h(u) / u ** p
    upper = lambda u: h(u) / (u ** p + u ** k2)
    var = lambda u: float(var_curve(p, u)) / (1 + u ** (2 * (p - 1)))
    lv = np.array([lower(u) for u in _U_GRID])
    uv = np.array([upper(u) for u in _U_GRID])
    vv = np.array([var(u) for u in _U_GRID])
    c1 = min(_refine(lower, _U_GRID, lv, maximize=False), 1.0)
    small_u_limit = falling_binom(p, k2) * gaussian_abs_moment(p - k2)
    c2 = max(_refine(upper, _U_GRID, uv, maximize=True), 1.0, small_u_limit)
    c3 = max(_refine(var, _U_GRID, vv, maximize=True), float(var_curve(p, 0.0)), p * p)
    # small relative margins absorb quadrature error in the curves themselves
    return EnvelopeConstants(p, c1 * (1 - 1e-6), c2 * (1 + 1e-6), c3 * (1 + 1e-6))


def h2_half(p: float) -> float:
    """h''(0) / 2, the small-u limit of h(u) / u^2 (1 <= p < 2)."""
    if p == 1:
        return 1 / math.sqrt(2 * math.pi)
    # E|Z|^{p-2} is finite for p > 1 even though p - 2 < 0
    m = math.exp(0.5 * (p - 2) * math.log(2.0) + math.lgamma(0.5 * (p - 1)) - 0.5 * math.log(math.pi))
    return 0.5 * p * (p - 1) * m


@dataclass(frozen=True)
class Envelope:
    mean_lower: float
    mean_upper: float
    var_upper: float
    bias_upper: float


@dataclass(frozen=True)
class StatisticReport:
    value: float
    mean_lower: float
    mean_upper: float
    var_upper: float
    bias_upper: float
    statistic_kind: str

    def __post_init__(self):
        if self.statistic_kind not in KINDS:
            raise ValidationError(f"unknown statistic kind {self.statistic_kind!r}")
        if not self.mean_lower <= self.mean_upper or not self.var_upper >= 0:
            raise ValidationError("envelope must satisfy mean_lower <= mean_upper and var_upper >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def envelope(p: float, sigma: float, d: int, norm_value: float) -> Envelope:
    """Bounds on E T_p and Var T_p over all v with ||v||_p = norm_value."""
    _check_p(p)
    _check_sigma(sigma)
    if int(d) != d or d < 1:
        raise ValidationError("d must be a positive integer")
    if not norm_value >= 0:
        raise ValidationError("norm_value must be >= 0")
    r, s = float(norm_value), float(sigma)
    rp = r ** p
    mu_p = gaussian_abs_moment(p)
    if p == 2:
        return Envelope(rp, rp, 2 * d * s ** 4 + 4 * r * r * s * s, 0.0)
    const = envelope_constants(p)
    if p < 2:
        lower = const.c_lower * min(s ** (p - 2) * d ** (1 - 2 / p) * r * r, rp)
        if p == 1:
            var = d * gaussian_abs_moment(2) * s * s
        else:
            var = 2 * p * (d * gaussian_abs_moment(2 * p) * s ** (2 * p)
                           + gaussian_abs_moment(2) * d ** (2 / p - 1) * r ** (2 * (p - 1)) * s * s)
        return Envelope(lower, rp, var, min(rp, d * s ** p * mu_p))
    var = const.c_var * (d * s ** (2 * p) + s * s * r ** (2 * (p - 1)))
    if _is_even(p):
        return Envelope(rp, rp, var, 0.0)
    k2 = 2 * int(math.floor(p / 2))
    lower = const.c_lower * rp
    upper = const.c_upper * (rp + d ** (1 - k2 / p) * s ** (p - k2) * r ** k2)
    return Envelope(lower, upper, var, max(rp - lower, upper - rp))


def statistic_value(x, p: float, sigma: float, kind: str = "debiased_lp"):
    if kind == "plugin_lp":
        return plugin_statistic(x, p, sigma)
    if kind == "debiased_lp":
        return debiased_statistic(x, p, sigma)
    if kind == "chi2":
        return chi2_statistic(x, sigma)
    raise ValidationError(f"statistic kind {kind!r} does not apply to Gaussian data")


def report(x, p: float, sigma: float, norm_value: float, kind: str = "debiased_lp") -> StatisticReport:
    """Realized statistic plus the envelope at a hypothesized norm value."""
    q = 2.0 if kind == "chi2" else p
    if kind == "plugin_lp" and p > 2 and correction_coefficients(p):
        raise ValidationError("envelopes for p > 3 describe the debiased statistic; use kind='debiased_lp'")
    env = envelope(q, sigma, np.asarray(x).shape[-1], norm_value)
    return StatisticReport(float(statistic_value(x, p, sigma, kind)), env.mean_lower, env.mean_upper,
                           env.var_upper, env.bias_upper, kind)
