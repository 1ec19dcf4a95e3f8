"""Moving tests between models.

White noise on [0, 1] becomes a d-dimensional Gaussian sequence by binning
against phi_i = sqrt(d) 1_{I_i}; a density sample becomes a multinomial
histogram; Poissonization converts between fixed and Poisson sample sizes.
Bins are [(i-1)/d, i/d) with the last one closed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .calibration import MultinomialTolerantTest, PoissonTolerantTest, TestDecision, TestSpec, run_test
from .errors import ValidationError
from .models import FunctionSample, HypothesisPair, RandomStream

GL_NODES = 128


@dataclass(frozen=True)
class ReductionSpec:
    """Smoothness s and radius of the Besov ball, plus the constant in
    d = c * eps1^{-1/s}.  ``q`` is recorded only."""

    s: float
    L_radius: float = 1.0
    p: float = 1.0
    q: float = 2.0
    d_rule_constant: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValidationError("s must be positive")
        if not self.L_radius > 0:
            raise ValidationError("L_radius must be positive")
        if not self.p >= 1:
            raise ValidationError("p must be >= 1")
        if not (1 <= self.q <= math.inf):
            raise ValidationError("q must lie in [1, inf]")
        if not self.d_rule_constant > 0:
            raise ValidationError("d_rule_constant must be positive")


def choose_dimension(eps1: float, spec: ReductionSpec) -> int:
    if not eps1 > 0:
        raise ValidationError("eps1 must be positive")
    return max(1, int(round(spec.d_rule_constant * eps1 ** (-1.0 / spec.s))))


def bin_white_noise(path: FunctionSample, d: int) -> tuple[np.ndarray, float]:
    """X_i = sqrt(d) * (increments summed over bin i) ~ N(sqrt(d) int_{I_i} f, sigma^2)."""
    if path.kind != "white_noise_path":
        raise ValidationError("bin_white_noise needs a white-noise path")
    d = int(d)
    if d < 1 or path.m % d:
        raise ValidationError(f"path resolution m = {path.m} is not divisible by d = {d}")
    x = math.sqrt(d) * path.increments.reshape(d, -1).sum(axis=1)
    return x, float(path.sigma)


def simulate_white_noise(f: Callable, sigma: float, m: int, rng: RandomStream) -> FunctionSample:
    """Increments of dY = f dt + sigma dW on a uniform m-grid; the drift part
    uses the midpoint rule."""
    t = (np.arange(m) + 0.5) / m
    drift = np.asarray(f(t), dtype=float) / m
    noise = sigma * rng.generator().standard_normal(m) / math.sqrt(m)
    return FunctionSample.white_noise_path(drift + noise, sigma)


def histogram_density(samples: FunctionSample, d: int) -> np.ndarray:
    if samples.kind != "density_sample":
        raise ValidationError("histogram_density needs a density sample")
    d = int(d)
    if d < 1:
        raise ValidationError("d must be >= 1")
    idx = np.minimum((samples.observations * d).astype(np.int64), d - 1)
    return np.bincount(idx, minlength=d)


def bin_masses(d: int, cdf: Optional[Callable] = None, pdf: Optional[Callable] = None) -> np.ndarray:
    """Exact bin masses from a CDF, else 128-point Gauss-Legendre per bin."""
    edges = np.linspace(0.0, 1.0, d + 1)
    if cdf is not None:
        G = np.diff(np.asarray(cdf(edges), dtype=float))
    elif pdf is not None:
        xg, wg = np.polynomial.legendre.leggauss(GL_NODES)
        a, b = edges[:-1, None], edges[1:, None]
        pts = 0.5 * (b - a) * xg + 0.5 * (a + b)
        G = 0.5 * (b - a)[:, 0] * (np.asarray(pdf(pts), dtype=float) @ wg)
    else:
        raise ValidationError("need a cdf or a pdf for the reference density")
    if np.any(G < -1e-12):
        raise ValidationError("reference density has negative bin mass")
    G = np.clip(G, 0.0, None)
    return G / G.sum()


def white_noise_scale(d: int, p: float) -> float:
    """||v||_p = d^{1/p - 1/2} ||f||_p for f constant on the bins."""
    return d ** (1.0 / p - 0.5)


def density_scale(d: int, p: float) -> float:
    """||F - G||_p = d^{1/p - 1} ||f - g||_p for f - g constant on the bins."""
    return d ** (1.0 / p - 1.0)


def _dimension(d: Optional[int], hypothesis: HypothesisPair, spec: ReductionSpec) -> int:
    return int(d) if d is not None else choose_dimension(hypothesis.eps1, spec)


def transport_white_noise_test(path: FunctionSample, spec: ReductionSpec, hypothesis: HypothesisPair,
                               alpha: float = 0.05, d: Optional[int] = None,
                               rng: Optional[RandomStream] = None, **test_options) -> TestDecision:
    d = _dimension(d, hypothesis, spec)
    x, sigma = bin_white_noise(path, d)
    c = white_noise_scale(d, hypothesis.p)
    hyp = HypothesisPair(hypothesis.p, hypothesis.eps0 * c, hypothesis.eps1 * c, hypothesis.direction)
    return run_test(TestSpec(hyp, alpha=alpha, **test_options), x, sigma, rng)


def transport_density_test(samples: FunctionSample, spec: ReductionSpec, hypothesis: HypothesisPair,
                           alpha: float = 0.05, d: Optional[int] = None, cdf: Optional[Callable] = None,
                           pdf: Optional[Callable] = None, rng: Optional[RandomStream] = None,
                           mc_reps: int = 2000) -> TestDecision:
    """ell_p plug-in distance test on the histogram against the binned reference."""
    d = _dimension(d, hypothesis, spec)
    if cdf is None and pdf is None:
        pdf = samples.reference
    G = bin_masses(d, cdf=cdf, pdf=pdf)
    counts = histogram_density(samples, d)
    test = MultinomialTolerantTest(G, samples.n, alpha, norm=float(hypothesis.p), mc_reps=mc_reps,
                                   rng=rng or RandomStream(0, 0))
    return test.decide(counts, hypothesis.eps0 * density_scale(d, hypothesis.p))


# ---------------------------------------------------------------- Poissonization


def poissonized_counts(counts, n: int, rng: RandomStream) -> Optional[np.ndarray]:
    """Keep n' ~ Poi(n/2) of the n multinomial draws; None when n' > n."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != n:
        raise ValidationError("counts must sum to n")
    g = rng.generator()
    n_sub = int(g.poisson(n / 2))
    if n_sub > n:
        return None
    return g.multivariate_hypergeometric(counts, n_sub) if n_sub else np.zeros_like(counts)


@dataclass(frozen=True)
class PoissonizedTest:
    """Multinomial(n) data -> draw n' ~ Poi(n/2), keep n' of the n draws and
    hand their counts to a Poisson test at intensity n/2; accept if n' > n.

    The kept counts are exactly independent Poisson(n/2 F_i) given n' <= n.
    """

    __test__ = False

    poisson_test: PoissonTolerantTest
    n: int

    def __post_init__(self):
        if abs(self.poisson_test.m - self.n / 2) > 1e-12 * self.n:
            raise ValidationError("inner Poisson test must run at intensity n/2")

    def decide(self, counts, eps0: float, rng: RandomStream) -> TestDecision:
        sub = poissonized_counts(counts, self.n, rng)
        if sub is None:
            return TestDecision(False, math.nan, math.inf)
        return self.poisson_test.decide(sub, eps0)


@dataclass(frozen=True)
class DepoissonizedTest:
    """Poisson data X_i ~ Poi(n lam_i) -> K = sum X_i; run the size-K
    multinomial test when n/2 <= K <= 3n/2, else accept."""

    __test__ = False

    family: Callable[[int], MultinomialTolerantTest]
    n: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def test_for(self, k: int) -> MultinomialTolerantTest:
        if k not in self._cache:
            self._cache[k] = self.family(k)
        return self._cache[k]

    def decide(self, counts, eps0: float) -> TestDecision:
        counts = np.asarray(counts, dtype=np.int64)
        K = int(counts.sum())
        if not (self.n / 2 <= K <= 1.5 * self.n):
            return TestDecision(False, math.nan, math.inf)
        return self.test_for(K).decide(counts, eps0)


def poissonize_multinomial_test(poisson_test: PoissonTolerantTest, n: int) -> PoissonizedTest:
    return PoissonizedTest(poisson_test, int(n))


def depoissonize_poisson_test(family: Callable[[int], MultinomialTolerantTest], n: int) -> DepoissonizedTest:
    return DepoissonizedTest(family, int(n))


def poisson_tail_above(mean: float, k: int) -> float:
    """P(Poi(mean) > k)."""
    return float(special.pdtrc(k, mean))
