from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from tolerant_gof import reductions as red
from tolerant_gof.calibration import MultinomialTolerantTest, PoissonTolerantTest
from tolerant_gof.errors import ValidationError
from tolerant_gof.models import FunctionSample, HypothesisPair, RandomStream, norm_lp


def _noiseless_path(values, m):
    """Increments of a piecewise-constant drift with no noise (sigma is metadata)."""
    d = len(values)
    return FunctionSample.white_noise_path(np.repeat(np.asarray(values, float), m // d) / m, 1.0)


def test_constant_drift_bins_to_c_over_root_d():
    for d in (1, 4, 16):
        x, _ = red.bin_white_noise(_noiseless_path([2.5] * d, 64 * d), d)
        assert np.allclose(x, 2.5 / math.sqrt(d), rtol=1e-13)


def test_binning_requires_divisibility():
    with pytest.raises(ValidationError, match="divisible"):
        red.bin_white_noise(_noiseless_path([1.0] * 4, 64), 5)


def test_binning_is_linear():
    g = np.random.default_rng(0)
    a, b = g.standard_normal(256), g.standard_normal(256)
    xa, _ = red.bin_white_noise(FunctionSample.white_noise_path(a, 1.0), 8)
    xb, _ = red.bin_white_noise(FunctionSample.white_noise_path(b, 1.0), 8)
    xab, _ = red.bin_white_noise(FunctionSample.white_noise_path(a + b, 1.0), 8)
    assert np.allclose(xab, xa + xb, rtol=1e-12, atol=1e-14)


def test_binned_noise_is_standard_gaussian():
    d, reps = 8, 4000
    root = RandomStream(17, 0)
    X = np.array([red.bin_white_noise(red.simulate_white_noise(lambda t: 0 * t, 1.0, 64 * d, root.child(r)), d)[0]
                  for r in range(reps)])
    flat = X.ravel()
    n = flat.size
    assert abs(flat.mean()) <= 3 / math.sqrt(n)
    assert abs(flat.var() - 1) <= 3 * math.sqrt(2 / n)
    C = np.cov(X, rowvar=False)
    off = C[~np.eye(d, dtype=bool)]
    assert np.all(np.abs(off) <= 3 / math.sqrt(reps))


def test_binned_mean_is_bin_integral():
    d, m = 4, 256
    f = lambda t: np.sin(2 * np.pi * t) + 1
    x, _ = red.bin_white_noise(red.simulate_white_noise(f, 1e-12, m, RandomStream(1, 0)), d)
    edges = np.linspace(0, 1, d + 1)
    exact = math.sqrt(d) * np.array([(b - a) - (np.cos(2 * np.pi * b) - np.cos(2 * np.pi * a)) / (2 * np.pi)
                                     for a, b in zip(edges[:-1], edges[1:])])
    # midpoint rule on 64 sub-bins per bin
    assert np.allclose(x, exact, atol=1e-4)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_norm_bookkeeping_white_noise(p):
    g = np.random.default_rng(int(p * 10))
    for d in (1, 4, 32):
        vals = g.standard_normal(d)
        x, _ = red.bin_white_noise(_noiseless_path(vals, 64 * d), d)
        f_norm = (np.sum(np.abs(vals) ** p) / d) ** (1 / p)
        assert norm_lp(x, p) * d ** (0.5 - 1 / p) == pytest.approx(f_norm, rel=1e-12)
        assert norm_lp(x, p) == pytest.approx(red.white_noise_scale(d, p) * f_norm, rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_norm_bookkeeping_density(p):
    d = 8
    heights = np.array([0.5, 1.5, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0])
    pdf = lambda t: heights[np.minimum((np.asarray(t) * d).astype(int), d - 1)]
    F = red.bin_masses(d, pdf=pdf)
    G = np.full(d, 1 / d)
    assert np.allclose(F, heights / d, rtol=1e-13)
    f_minus_g = (np.sum(np.abs(heights - 1) ** p) / d) ** (1 / p)
    assert norm_lp(F - G, p) == pytest.approx(red.density_scale(d, p) * f_minus_g, rel=1e-12)


def test_bin_masses_cdf_and_pdf_agree():
    cdf = lambda t: t ** 3
    pdf = lambda t: 3 * t ** 2
    assert np.allclose(red.bin_masses(10, cdf=cdf), red.bin_masses(10, pdf=pdf), atol=1e-14)
    with pytest.raises(ValidationError):
        red.bin_masses(4)


def test_histogram_examples():
    assert red.histogram_density(FunctionSample.density_sample([0.1, 0.9]), 2).tolist() == [1, 1]
    assert red.histogram_density(FunctionSample.density_sample([0.3] * 5), 4).tolist() == [0, 5, 0, 0]
    assert red.histogram_density(FunctionSample.density_sample([1.0, 0.0, 0.5]), 2).tolist() == [1, 2]


def test_histogram_uniform_concentration():
    n, d = 10 ** 5, 10
    obs = RandomStream(4, 0).generator().uniform(size=n)
    counts = red.histogram_density(FunctionSample.density_sample(obs), d)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n / d) <= 3 * math.sqrt(n * 0.1 * 0.9))


def test_choose_dimension_examples():
    assert red.choose_dimension(1.0, red.ReductionSpec(1)) == 1
    assert red.choose_dimension(0.01, red.ReductionSpec(1)) == 100
    assert red.choose_dimension(0.01, red.ReductionSpec(2)) == 10
    with pytest.raises(ValidationError):
        red.ReductionSpec(0)


def test_choose_dimension_monotone():
    spec = red.ReductionSpec(0.7, d_rule_constant=3)
    ds = [red.choose_dimension(e, spec) for e in np.geomspace(1e-3, 10, 50)]
    assert all(b <= a for a, b in zip(ds, ds[1:]))


def test_transport_scale_factors():
    assert red.white_noise_scale(37, 2) == 1.0
    assert red.white_noise_scale(100, 1) == pytest.approx(10.0)
    assert red.density_scale(37, 1) == 1.0


def test_transport_white_noise_valid():
    spec = red.ReductionSpec(1.0)
    hyp = HypothesisPair(1, 0.0, 0.0)
    reps, alpha, d = 1000, 0.05, 16
    root = RandomStream(21, 0)
    rej = sum(red.transport_white_noise_test(red.simulate_white_noise(lambda t: 0 * t, 0.1, 64 * d, root.child(r)),
                                             spec, hyp, alpha, d=d).reject for r in range(reps))
    assert rej / reps <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)


def test_transport_white_noise_detects_signal():
    path = red.simulate_white_noise(lambda t: 3.0 + 0 * t, 0.1, 1024, RandomStream(2, 0))
    dec = red.transport_white_noise_test(path, red.ReductionSpec(1.0), HypothesisPair(1, 0.0, 3.0), d=16)
    assert dec.reject


def test_transport_density_uniform_accepts():
    reps, alpha, n = 200, 0.05, 500
    root = RandomStream(5, 0)
    hyp = HypothesisPair(1, 0.05, 0.05)
    rej = 0
    for r in range(reps):
        obs = root.child(r).generator().uniform(size=n)
        rej += red.transport_density_test(FunctionSample.density_sample(obs), red.ReductionSpec(1.0), hyp,
                                          alpha, d=8, cdf=lambda t: t, rng=RandomStream(1, 0), mc_reps=1000).reject
    assert rej / reps <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)


def test_transport_density_detects_concentration():
    n = 2000
    obs = RandomStream(6, 0).generator().uniform(size=n)
    # reference piles half its mass on the first bin; TV to uniform is about 0.44
    cdf = lambda t: np.where(t < 0.125, 4 * t, 0.5 + (t - 0.125) * 0.5 / 0.875)
    dec = red.transport_density_test(FunctionSample.density_sample(obs), red.ReductionSpec(1.0),
                                     HypothesisPair(1, 0.1, 0.4), d=8, cdf=cdf, mc_reps=1000)
    assert dec.reject


def test_poissonized_marginals():
    d, n, reps = 4, 40, 10 ** 5
    F = np.array([0.1, 0.2, 0.3, 0.4])
    g = RandomStream(31, 0)
    counts = g.child("data").generator().multinomial(n, F, size=reps)
    kept = []
    for r in range(reps):
        sub = red.poissonized_counts(counts[r], n, g.child(r))
        if sub is not None:
            kept.append(sub)
    kept = np.array(kept)
    for i in range(d):
        lam = n / 2 * F[i]
        obs = np.bincount(kept[:, i])
        k = np.arange(obs.size)
        # truncated Poisson given n' <= n; the truncation mass is below 1e-4 here
        pmf = stats.poisson.pmf(k, lam)
        top = max(2, int(np.searchsorted(np.cumsum(pmf), 1 - 5 / kept.shape[0])))
        o = np.r_[obs[:top], obs[top:].sum()]
        e = np.r_[pmf[:top], 1 - pmf[:top].sum()] * kept.shape[0]
        pv = stats.chisquare(o, e).pvalue
        assert pv > 1e-3, (i, pv)


def test_poissonized_overflow_branch_accepts():
    lam0 = np.full(2, 0.5)
    inner = PoissonTolerantTest(lam0, 0.5, 0.05, "tv", 200, RandomStream(0, 0))
    wrapper = red.poissonize_multinomial_test(inner, 1)
    seen = False
    for r in range(200):
        stream = RandomStream(3, r)
        if red.poissonized_counts([1, 0], 1, stream) is None:
            seen = True
            assert not wrapper.decide([1, 0], 0.0, stream).reject
    assert seen
    assert red.poisson_tail_above(0.5, 1) == pytest.approx(stats.poisson.sf(1, 0.5))


def test_poissonized_requires_half_intensity():
    with pytest.raises(ValidationError):
        red.poissonize_multinomial_test(PoissonTolerantTest(np.full(2, 0.5), 30.0), 100)


def test_depoissonized_outside_window_accepts():
    G = np.full(4, 0.25)
    calls = []

    def family(k):
        calls.append(k)
        return MultinomialTolerantTest(G, k, 0.05, "tv", 200, RandomStream(0, k))

    w = red.depoissonize_poisson_test(family, 100)
    assert not w.decide([10, 10, 10, 10], 0.0).reject
    assert not w.decide([100, 100, 0, 0], 0.0).reject
    assert calls == []
    a = w.decide([30, 30, 20, 20], 0.0)
    b = w.decide([30, 30, 20, 20], 0.0)
    assert a == b and calls == [100]
