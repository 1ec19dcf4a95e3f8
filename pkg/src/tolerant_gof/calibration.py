"""Threshold calibration: envelope bounds, Monte Carlo worst-case nulls,
estimation-based tests and the tolerant/equivalence flip."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import statistics as st
from .errors import ValidationError
from .models import HypothesisPair, RandomStream, norm_lp
from .montecarlo import map_blocks

CALIBRATIONS = ("cantelli_envelope", "mc_worst_case", "estimation_based")
ENVELOPE_BOUNDS = ("chebyshev", "cantelli")


@dataclass(frozen=True)
class TestSpec:
    """A calibrated test of ``hypothesis`` at level ``alpha``.

    ``envelope_bound`` picks the deviation inequality used by the envelope
    calibration: Chebyshev sqrt(var/alpha) (default) or the one-sided
    Cantelli sqrt((1-alpha)/alpha var).  ``null_candidates`` overrides the
    default extremal configurations for Monte Carlo calibration.
    """

    __test__ = False  # keep pytest from collecting this class

    hypothesis: HypothesisPair
    statistic_kind: str = "debiased_lp"
    alpha: float = 0.05
    beta: float = 0.1
    calibration: str = "cantelli_envelope"
    mc_reps: int = 2000
    null_candidates: tuple = ()
    envelope_bound: str = "chebyshev"
    phi: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 0 < self.beta < 1 - self.alpha:
            raise ValidationError("beta must lie in (0, 1 - alpha)")
        if self.calibration not in CALIBRATIONS:
            raise ValidationError(f"calibration must be one of {CALIBRATIONS}")
        if self.calibration == "mc_worst_case" and self.mc_reps < 100:
            raise ValidationError("mc_reps must be >= 100 for Monte Carlo calibration")
        if self.statistic_kind not in ("plugin_lp", "debiased_lp", "chi2"):
            raise ValidationError("statistic_kind must be plugin_lp, debiased_lp or chi2")
        if self.envelope_bound not in ENVELOPE_BOUNDS:
            raise ValidationError(f"envelope_bound must be one of {ENVELOPE_BOUNDS}")
        if self.phi is not None and not self.phi >= 0:
            raise ValidationError("phi must be >= 0")
        cands = tuple(np.asarray(c, dtype=float) for c in self.null_candidates)
        for c in cands:
            c.setflags(write=False)
        object.__setattr__(self, "null_candidates", cands)

    @property
    def p(self) -> float:
        return self.hypothesis.p


@dataclass(frozen=True)
class TestDecision:
    """``reject`` is value > threshold (tolerant) or value <= threshold (equivalence)."""

    __test__ = False

    reject: bool
    statistic_value: float
    threshold: float
    p_value_upper: Optional[float] = None
    direction: str = "tolerant"

    def __post_init__(self):
        expected = (self.statistic_value > self.threshold if self.direction == "tolerant"
                    else self.statistic_value <= self.threshold)
        if bool(self.reject) != bool(expected):
            raise ValidationError("decision inconsistent with statistic and threshold")

    def to_json(self) -> dict:
        out = asdict(self)
        out["value"] = out.pop("statistic_value")
        return out


def cantelli_quantile_bound(mean: float, variance: float, alpha: float) -> float:
    """Upper bound mean + sqrt((1-alpha)/alpha) sd on the (1-alpha) quantile."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if not variance >= 0:
        raise ValidationError("variance must be >= 0")
    return mean + math.sqrt((1 - alpha) / alpha * variance)


def _deviation(variance: float, alpha: float, bound: str) -> float:
    if bound == "cantelli":
        return math.sqrt((1 - alpha) / alpha * variance)
    return math.sqrt(variance / alpha)


def _statistic_norm_range(kind: str, p: float, d: int, r: float) -> tuple[float, float, float]:
    """(norm index the envelope is written in, smallest, largest such norm
    over ||v||_p = r)."""
    if kind != "chi2" or p == 2:
        return p, r, r
    # ||v||_2 between d^{min(0, 1/2-1/p)} r and d^{max(0, 1/2-1/p)} r
    e = 0.5 - 1.0 / p
    return 2.0, r * d ** min(0.0, e), r * d ** max(0.0, e)


def _envelope_for(kind: str, p: float, sigma: float, d: int, r: float, side: str) -> st.Envelope:
    q, lo, hi = _statistic_norm_range(kind, p, d, r)
    if kind == "plugin_lp" and st.correction_coefficients(p):
        raise ValidationError("envelope calibration of the uncorrected statistic is unavailable for p >= 4")
    return st.envelope(q, sigma, d, hi if side == "upper" else lo)


def chebyshev_threshold(hypothesis: HypothesisPair, p: float, sigma: float, d: int, alpha: float,
                        statistic_kind: str = "debiased_lp", bound: str = "chebyshev") -> float:
    """sup over the null ball of mean + sqrt(var / alpha), taken at eps0."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    env = _envelope_for(statistic_kind, p, sigma, d, hypothesis.eps0, "upper")
    return env.mean_upper + _deviation(env.var_upper, alpha, bound)


def lower_power_threshold(eps1: float, p: float, sigma: float, d: int, level: float,
                          statistic_kind: str = "debiased_lp", bound: str = "chebyshev") -> float:
    """inf over ||v||_p >= eps1 of mean_lower - deviation(var_upper, level).

    This is the equivalence-test threshold at level ``level`` and, with
    ``level = beta``, the t_inf of the Chebyshev power guarantee.
    """

    def f(r: float) -> float:
        env = _envelope_for(statistic_kind, p, sigma, d, r, "lower")
        env_hi = _envelope_for(statistic_kind, p, sigma, d, r, "upper")
        return env.mean_lower - _deviation(env_hi.var_upper, level, bound)

    base = f(eps1)
    # f grows like r^p eventually; scan a geometric range for a dip below f(eps1)
    scale = max(eps1, sigma * d ** (1.0 / p))
    grid = eps1 + scale * np.concatenate([[0.0], np.logspace(-4, 4, 161)])
    vals = np.array([f(r) for r in grid])
    i = int(np.argmin(vals))
    if i == 0:
        return min(base, float(vals.min()))
    lo, hi = grid[i - 1], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * scale})
    return float(min(vals.min(), f(res.x)))


def equivalence_threshold(hypothesis: HypothesisPair, p: float, sigma: float, d: int, alpha: float,
                          statistic_kind: str = "debiased_lp", bound: str = "chebyshev") -> float:
    return lower_power_threshold(hypothesis.eps1, p, sigma, d, alpha, statistic_kind, bound)


def default_null_candidates(p: float, d: int, radius: float) -> list[np.ndarray]:
    """Uniform spread, single spike and sqrt(d)-sparse vectors of l_p norm ``radius``."""
    if radius == 0:
        return [np.zeros(d)]
    spread = np.full(d, radius * d ** (-1.0 / p))
    spike = np.zeros(d)
    spike[0] = radius
    k = max(1, int(math.ceil(math.sqrt(d))))
    sparse = np.zeros(d)
    sparse[:k] = radius * k ** (-1.0 / p)
    out = [spread, spike]
    if 1 < k < d:
        out.append(sparse)
    return out


def _candidates(spec: TestSpec, d: int) -> list[np.ndarray]:
    h = spec.hypothesis
    radius = h.eps0 if h.direction == "tolerant" else h.eps1
    cands = list(spec.null_candidates) or default_null_candidates(spec.p, d, radius)
    if not cands:
        raise ValidationError("empty null candidate list")
    for c in cands:
        if c.size != d:
            raise ValidationError("null candidate has the wrong dimension")
        nv = norm_lp(c, spec.p)
        if h.direction == "tolerant" and nv > h.eps0 * (1 + 1e-12) + 1e-300:
            raise ValidationError(f"null candidate has ||v||_p = {nv} > eps0 = {h.eps0}")
        if h.direction == "equivalence" and nv < h.eps1 * (1 - 1e-12):
            raise ValidationError(f"null candidate has ||v||_p = {nv} < eps1 = {h.eps1}")
    return cands


def simulate_statistic(spec: TestSpec, v: np.ndarray, sigma: float, n_reps: int, rng: RandomStream) -> np.ndarray:
    """n_reps draws of the TestSpec statistic under N(v, sigma^2 I)."""
    v = np.asarray(v, dtype=float)

    def block(gen, rows):
        x = v + sigma * gen.standard_normal((rows, v.size))
        return st.statistic_value(x, spec.p, sigma, spec.statistic_kind)

    return map_blocks(rng, n_reps, block)


def mc_null_draws(spec: TestSpec, d: int, sigma: float, rng: RandomStream) -> list[np.ndarray]:
    return [simulate_statistic(spec, c, sigma, spec.mc_reps, rng.child("candidate", i))
            for i, c in enumerate(_candidates(spec, d))]


def mc_worst_case_threshold(spec: TestSpec, d: int, sigma: float, rng: RandomStream) -> float:
    """Max over null candidates of the empirical (1-alpha) quantile.

    The ``higher`` order statistic is used so that the empirical exceedance
    frequency never exceeds alpha.  In the equivalence direction this is the
    min over far candidates of the empirical alpha quantile.
    """
    draws = mc_null_draws(spec, d, sigma, rng)
    if spec.hypothesis.direction == "tolerant":
        return float(max(np.quantile(s, 1 - spec.alpha, method="higher") for s in draws))
    return float(min(np.quantile(s, spec.alpha, method="lower") for s in draws))


def estimation_based_test(statistic_value: float, eps0: float, phi: float, alpha: float) -> TestDecision:
    """Reject iff value > eps0 + sqrt(phi / alpha)."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if not phi >= 0:
        raise ValidationError("phi must be >= 0")
    t = eps0 + math.sqrt(phi / alpha)
    gap = statistic_value - eps0
    pv = 1.0 if gap <= 0 else (0.0 if phi == 0 else min(1.0, phi / gap ** 2))
    return TestDecision(bool(statistic_value > t), float(statistic_value), float(t), pv)


def phi_for_l1_plugin(sigma: float, d: int) -> float:
    """MSE bound (mu_1^2 + 1) sigma^2 d^2 for the centered l1 plug-in."""
    return (2 / math.pi + 1) * sigma * sigma * d * d


def flip_to_equivalence(spec: TestSpec) -> TestSpec:
    """Swap the null and alternative sides together with the two error levels."""
    h = spec.hypothesis
    new_dir = "equivalence" if h.direction == "tolerant" else "tolerant"
    return replace(spec, hypothesis=replace(h, direction=new_dir), alpha=spec.beta, beta=spec.alpha)


def threshold(spec: TestSpec, d: int, sigma: float, rng: Optional[RandomStream] = None) -> float:
    """Decision threshold of ``spec`` for data of dimension ``d``."""
    h = spec.hypothesis
    if spec.calibration == "mc_worst_case":
        if rng is None:
            raise ValidationError("Monte Carlo calibration needs a RandomStream")
        return mc_worst_case_threshold(spec, d, sigma, rng)
    if spec.calibration == "estimation_based":
        if h.direction != "tolerant":
            raise ValidationError("estimation-based calibration is defined for the tolerant direction")
        return h.eps0 + math.sqrt(_phi(spec, d, sigma) / spec.alpha)
    if h.direction == "tolerant":
        return chebyshev_threshold(h, spec.p, sigma, d, spec.alpha, spec.statistic_kind, spec.envelope_bound)
    return equivalence_threshold(h, spec.p, sigma, d, spec.alpha, spec.statistic_kind, spec.envelope_bound)


def _phi(spec: TestSpec, d: int, sigma: float) -> float:
    if spec.phi is not None:
        return spec.phi
    if spec.p == 1 and spec.statistic_kind in ("plugin_lp", "debiased_lp"):
        return phi_for_l1_plugin(sigma, d)
    raise ValidationError("estimation-based calibration needs phi unless p = 1")


def p_value_upper(spec: TestSpec, value: float, d: int, sigma: float) -> float:
    """Conservative p-value min(1, var / (value - mean)^2) from the envelope at the null boundary."""
    h = spec.hypothesis
    if spec.calibration == "estimation_based":
        gap = value - h.eps0
        phi = _phi(spec, d, sigma)
        return 1.0 if gap <= 0 else min(1.0, phi / gap ** 2) if phi > 0 else 0.0
    try:
        if h.direction == "tolerant":
            env = _envelope_for(spec.statistic_kind, spec.p, sigma, d, h.eps0, "upper")
            gap = value - env.mean_upper
            var = env.var_upper
        else:
            env = _envelope_for(spec.statistic_kind, spec.p, sigma, d, h.eps1, "lower")
            gap = env.mean_lower - value
            var = _envelope_for(spec.statistic_kind, spec.p, sigma, d, h.eps1, "upper").var_upper
    except ValidationError:
        return 1.0
    if gap <= 0:
        return 1.0
    return min(1.0, var / gap ** 2)


def run_test(spec: TestSpec, data, sigma: float, rng: Optional[RandomStream] = None) -> TestDecision:
    x = np.asarray(data, dtype=float)
    if x.ndim != 1:
        raise ValidationError("run_test expects a single observation vector")
    if not np.all(np.isfinite(x)):
        raise ValidationError("data must be finite")
    d = x.size
    value = float(st.statistic_value(x, spec.p, sigma, spec.statistic_kind))
    t = threshold(spec, d, sigma, rng)
    direction = spec.hypothesis.direction
    reject = value > t if direction == "tolerant" else value <= t
    if spec.calibration == "mc_worst_case":
        pv = None
    else:
        pv = p_value_upper(spec, value, d, sigma)
    return TestDecision(bool(reject), value, float(t), pv, direction)


# ----------------------------------------------------------------------------
# count data


def _distance(x: np.ndarray, ref: np.ndarray, norm) -> np.ndarray:
    diff = np.abs(x - ref)
    if norm == "tv":
        return 0.5 * diff.sum(axis=-1)
    p = float(norm)
    if math.isinf(p):
        return diff.max(axis=-1)
    return (diff ** p).sum(axis=-1) ** (1.0 / p)


def _check_norm(norm) -> None:
    if norm != "tv" and not (isinstance(norm, (int, float)) and norm >= 1):
        raise ValidationError("norm must be 'tv' or a real p >= 1")


@dataclass(frozen=True)
class MultinomialTolerantTest:
    """Reject H0: dist(F, G) <= eps0 when dist(F_hat, G) > eps0 + q.

    By the triangle inequality dist(F_hat, G) <= dist(F_hat, F) + eps0 under
    H0, so q only needs to bound the (1-alpha) quantile of dist(F_hat, F).
    It is the max of Monte Carlo quantiles at F = G and F = uniform, where
    the sampling deviation is largest.
    """

    __test__ = False

    G: np.ndarray
    n: int
    alpha: float = 0.05
    norm: object = "tv"
    mc_reps: int = 2000
    rng: RandomStream = field(default_factory=lambda: RandomStream(0, 0))

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n must be a positive integer")
        _check_norm(self.norm)
        if abs(math.fsum(G) - 1) > 1e-12 or np.any(G < 0):
            raise ValidationError("G must be a probability vector")

    def statistic(self, counts) -> np.ndarray:
        counts = np.asarray(counts, dtype=float)
        return _distance(counts / self.n, self.G, self.norm)

    @cached_property
    def deviation_quantile(self) -> float:
        d = self.G.size
        qs = []
        for i, F in enumerate((self.G, np.full(d, 1.0 / d))):
            sims = map_blocks(self.rng.child("multinomial", self.n, i), self.mc_reps,
                              lambda g, rows: _distance(g.multinomial(self.n, F, size=rows) / self.n, F, self.norm))
            qs.append(np.quantile(sims, 1 - self.alpha, method="higher"))
        return float(max(qs))

    def threshold(self, eps0: float) -> float:
        return eps0 + self.deviation_quantile

    def decide(self, counts, eps0: float) -> TestDecision:
        value = float(self.statistic(counts))
        t = self.threshold(eps0)
        return TestDecision(bool(value > t), value, t)


@dataclass(frozen=True)
class PoissonTolerantTest:
    """Same construction for X_i ~ Poi(m lam_i) with known intensity m."""

    __test__ = False

    lam0: np.ndarray
    m: float
    alpha: float = 0.05
    norm: object = "tv"
    mc_reps: int = 2000
    rng: RandomStream = field(default_factory=lambda: RandomStream(0, 0))

    def __post_init__(self):
        lam0 = np.asarray(self.lam0, dtype=float)
        lam0.setflags(write=False)
        object.__setattr__(self, "lam0", lam0)
        if not self.m > 0:
            raise ValidationError("intensity must be positive")
        _check_norm(self.norm)

    def statistic(self, counts) -> np.ndarray:
        return _distance(np.asarray(counts, dtype=float) / self.m, self.lam0, self.norm)

    @cached_property
    def deviation_quantile(self) -> float:
        d = self.lam0.size
        qs = []
        for i, lam in enumerate((self.lam0, np.full(d, 1.0 / d))):
            sims = map_blocks(self.rng.child("poisson", self.m, i), self.mc_reps,
                              lambda g, rows: _distance(g.poisson(self.m * lam, size=(rows, d)) / self.m, lam, self.norm))
            qs.append(np.quantile(sims, 1 - self.alpha, method="higher"))
        return float(max(qs))

    def threshold(self, eps0: float) -> float:
        return eps0 + self.deviation_quantile

    def decide(self, counts, eps0: float) -> TestDecision:
        value = float(self.statistic(counts))
        t = self.threshold(eps0)
        return TestDecision(bool(value > t), value, t)
