"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
(printed in the terminal summary) before asserting."""

from __future__ import annotations

import copy
import json
import math
import subprocess
import sys
from pathlib import Path

import mpmath
import numpy as np
import pytest

from tolerant_gof import cli
from tolerant_gof.calibration import (MultinomialTolerantTest, PoissonTolerantTest, TestSpec,
                                      default_null_candidates)
from tolerant_gof.experiments import (bisect_critical_separation, calibrate, chi2_suboptimality_demo,
                                      default_test_family, loglog_slope, physics_demo, regime_map)
from tolerant_gof.lower_bounds.approx import best_poly_approx
from tolerant_gof.lower_bounds.certificate import assemble_certificate, two_point_pair
from tolerant_gof.lower_bounds.chi2 import chi2_one_dim_bound
from tolerant_gof.lower_bounds.moments import g_even, solve_Mp, solve_Mp_constrained
from tolerant_gof.models import HypothesisPair, RandomStream
from tolerant_gof.montecarlo import rate_and_stderr, standard_normal_matrix
from tolerant_gof.reductions import depoissonize_poisson_test, poissonize_multinomial_test

from test_lower_bounds import _chi2_quad, _random_pair

pytestmark = pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")

ROOT = RandomStream(20240611, 1000)
TESTS = Path(__file__).parent


def test_criterion_01_bernstein_constant(criterion):
    vals = {L: L * best_poly_approx(1, L).error for L in (16, 32, 64)}
    v = [vals[L] for L in (16, 32, 64)]
    in_range = all(0.25 <= x <= 0.32 for x in v)
    approaching = abs(v[2] - 0.2802) < abs(v[1] - 0.2802) < abs(v[0] - 0.2802)
    shrinking = abs(v[2] - v[1]) < abs(v[1] - v[0])
    ok = criterion(1, in_range and approaching and shrinking,
                   "L*A_1(L) = " + ", ".join(f"{x:.6f}" for x in v))
    assert ok


def test_criterion_02_duality(criterion):
    worst = 0.0
    for p in (1, 1.5, 3):
        for L in (4, 8, 16):
            worst = max(worst, abs(solve_Mp(p, L)[0] - 2 * best_poly_approx(p, L).error))
    assert criterion(2, worst <= 1e-5, f"max |M_p - 2A_p| = {worst:.2e}")


def test_criterion_03_even_p(criterion):
    g = g_even(4, 3)
    m44 = solve_Mp(4, 4)[0]
    m43 = solve_Mp(4, 3)[0]
    ok = g == 0.625 and m44 <= 1e-9 and g / (2 * math.e) <= m43 <= 2 * g
    assert criterion(3, ok, f"M_4(4) = {m44:.2e}, M_4(3) = {m43:.6f} in [{g / (2 * math.e):.4f}, {2 * g}]")


def test_criterion_04_constrained(criterion):
    rows = []
    for eps in (1 / 256, 1 / 128, 1 / 64):
        v = solve_Mp_constrained(1, eps, 32)[0]
        rows.append((eps, v, 0.1 * math.sqrt(eps / 32)))
    ok = all(v >= floor for _, v, floor in rows)
    assert criterion(4, ok, "; ".join(f"M_1({e:.5f}, 32) = {v:.4f} >= {f:.4f}" for e, v, f in rows))


def _leaves(obj, path=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, path + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, path + (i,))
    else:
        yield path


def _tampered(obj, path):
    out = copy.deepcopy(obj)
    node = out
    for k in path[:-1]:
        node = node[k]
    v = node[path[-1]]
    if isinstance(v, bool):
        node[path[-1]] = not v
    elif isinstance(v, int):
        node[path[-1]] = v + 1
    elif isinstance(v, float):
        node[path[-1]] = v * (1 + 1e-6) + 1e-9
    else:
        node[path[-1]] = "0" + str(v)[1:] if str(v)[:1] != "0" else "1" + str(v)[1:]
    return out


def test_criterion_05_certificate(criterion, tmp_path, capsys):
    d, alpha, beta = 4096, 0.05, 0.1
    c_alpha = 1 - alpha - beta
    eps = (2 * math.log(1 + c_alpha ** 2)) ** 0.25 * d ** 0.75
    cert = assemble_certificate(two_point_pair(eps, d), d, 1.0, alpha, beta, 1.0)
    obj = cert.to_json()
    # independent closed form: chi2 = cosh(r^2)^d - 1 for pi1 = (delta_r + delta_-r)/2
    with mpmath.workdps(50):
        r = mpmath.mpf(eps) / d
        exact = mpmath.cosh(r ** 2) ** d - 1
    path = tmp_path / "cert.json"
    path.write_text(json.dumps(obj))
    good = cli.main(["verify", str(path), "--seed", "0"]) == 0
    codes = []
    for leaf in _leaves(obj):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(_tampered(obj, leaf)))
        codes.append(cli.main(["verify", str(bad), "--seed", "0"]))
    capsys.readouterr()
    # the stored value is an upper bound (series tail allowance, amplified d-fold
    # by tensorization), so it must dominate the closed form and stay close to it
    chi2_ok = exact <= obj["chi2_upper"] <= c_alpha ** 2 and obj["chi2_upper"] - exact <= 1e-8 * exact
    ok = good and chi2_ok and all(c == 2 for c in codes)
    assert criterion(5, ok, f"chi2 = {obj['chi2_upper']:.8f} (closed form {mpmath.nstr(exact, 10)}) <= "
                            f"C_a^2 = {c_alpha ** 2:.4f}; {sum(c == 2 for c in codes)}/{len(codes)} tampered "
                            f"fields exit 2")


def test_criterion_06_chi2_vs_quadrature(criterion):
    worst = math.inf
    for seed in range(20):
        pair = _random_pair(seed)
        assert np.max(np.abs(pair.scaled_support)) <= 1
        worst = min(worst, chi2_one_dim_bound(pair, 1.0) - _chi2_quad(pair, 1.0))
    assert criterion(6, worst >= -1e-8, f"min (bound - quadrature) over 20 pairs = {worst:.2e}")


def test_criterion_07_validity(criterion):
    alpha, R = 0.05, 10_000
    limit = alpha + 3 * math.sqrt(alpha / R)
    worst, where = 0.0, None
    for p in (1, 2, 4):
        for d in (16, 256):
            for eps0 in (0.0, math.sqrt(d)):
                nulls = default_null_candidates(p, d, eps0)
                if eps0 > 0:
                    # a null that the Monte Carlo calibration never sees
                    half = np.zeros(d)
                    half[:d // 2] = eps0 * (d // 2) ** (-1.0 / p)
                    nulls.append(half)
                for cal in ("cantelli_envelope", "mc_worst_case"):
                    spec = TestSpec(HypothesisPair(p, eps0, eps0), calibration=cal, mc_reps=20_000)
                    test = calibrate(spec, d, 1.0, ROOT.child("c7-cal", p, d, eps0, cal))
                    Z = standard_normal_matrix(ROOT.child("c7-noise", p, d, eps0, cal), R, d)
                    for v in nulls:
                        rate = rate_and_stderr(test.reject(v + Z))[0]
                        if rate >= worst:
                            worst, where = rate, (p, d, eps0, cal)
    assert criterion(7, worst <= limit, f"max type-I = {worst:.4f} at {where} (limit {limit:.4f}, 24 cells)")


def test_criterion_08_free_tolerance_slopes(criterion):
    ds = (64, 256, 1024)
    out = {}
    for p, target in ((1, 0.75), (2, 0.25)):
        seps = [bisect_critical_separation(default_test_family(p), 0.0, d, 1.0, 0.05, 0.1, 2000,
                                           ROOT.child("c8", p, d)).critical_sep for d in ds]
        out[p] = (loglog_slope(ds, seps)[0], target)
    ok = all(abs(s - t) <= 0.1 for s, t in out.values())
    assert criterion(8, ok, "; ".join(f"p={p}: slope {s:.3f} (target {t} +- 0.1)" for p, (s, t) in out.items()))


def test_criterion_09_interpolation_slope(criterion):
    d = 1024
    grid = [2 * math.sqrt(d), 4 * math.sqrt(d), 8 * math.sqrt(d), d / 4]
    pts = regime_map(1, d, 1.0, 0.05, 0.1, grid, 2000, ROOT.child("c9"))
    slope = loglog_slope(grid, [q.empirical_critical_sep for q in pts])[0]
    seps = ", ".join(f"{q.empirical_critical_sep:.1f}" for q in pts)
    assert criterion(9, abs(slope - 0.5) <= 0.15, f"slope {slope:.3f} (target 0.5 +- 0.15); seps {seps}")


def test_criterion_10_chi2_suboptimality(criterion):
    rep = chi2_suboptimality_demo(4096, 1.0, 0.05, 0.1, 1000, ROOT.child("c10"), c_grid=(4, 8, 16))
    good = [r for r in rep["rows"] if r["c"] > 0 and r["plugin_power"] >= 0.9
            and r["chi2_valid_power_ceiling"] <= 0.2 and r["chi2_power"] <= 0.2]
    detail = "; ".join(f"c={r['c']:g}: plug-in {r['plugin_power']:.3f}, chi2 {r['chi2_power']:.3f}, "
                       f"chi2 ceiling {r['chi2_valid_power_ceiling']:.3f}" for r in rep["rows"])
    assert criterion(10, bool(good), detail)


def _shifted(G, tv):
    F = G.copy()
    F[0] += tv
    F[-1] -= tv
    return F


def _rate(decide, sampler, F, stream, R):
    g = stream.generator()
    return rate_and_stderr(np.array([decide(sampler(g, F), i) for i in range(R)]))


def test_criterion_11_poissonization(criterion):
    n, d, alpha, R, eps0 = 2000, 8, 0.05, 10_000, 0.05
    G = np.arange(1.0, d + 1)
    G /= G.sum()
    F0, F1 = _shifted(G, eps0), _shifted(G, eps0 + 0.03)
    slack = math.exp(-n / 8)
    checks = []

    inner = PoissonTolerantTest(G, n / 2, alpha, "tv", 4000, ROOT.child("c11-inner"))
    wrap = poissonize_multinomial_test(inner, n)
    ws = ROOT.child("c11-wrap")
    dep = depoissonize_poisson_test(lambda k: MultinomialTolerantTest(G, k, alpha, "tv", 2000,
                                                                      ROOT.child("c11-dep")), n)
    ref = MultinomialTolerantTest(G, n // 2, alpha, "tv", 4000, ROOT.child("c11-ref"))
    arms = {
        "poissonized": (lambda c, i, tag: wrap.decide(c, eps0, ws.child(tag, i)).reject,
                        lambda g, F: g.multinomial(n, F),
                        lambda c, i, tag: inner.decide(c, eps0).reject,
                        lambda g, F: g.poisson(n / 2 * F)),
        "depoissonized": (lambda c, i, tag: dep.decide(c, eps0).reject,
                          lambda g, F: g.poisson(n * F),
                          lambda c, i, tag: ref.decide(c, eps0).reject,
                          lambda g, F: g.multinomial(n // 2, F)),
    }
    for name, (wd, wsamp, rd, rsamp) in arms.items():
        t1w, se1w = _rate(lambda c, i: wd(c, i, "null"), wsamp, F0, ROOT.child("c11", name, "w0"), R)
        t1r, se1r = _rate(lambda c, i: rd(c, i, "null"), rsamp, F0, ROOT.child("c11", name, "r0"), R)
        pww, sepw = _rate(lambda c, i: wd(c, i, "alt"), wsamp, F1, ROOT.child("c11", name, "w1"), R)
        pwr, sepr = _rate(lambda c, i: rd(c, i, "alt"), rsamp, F1, ROOT.child("c11", name, "r1"), R)
        se_t1 = math.hypot(se1w, se1r)
        se_t2 = math.hypot(sepw, sepr)
        ok1 = abs(t1w - t1r) <= 3 * se_t1 and t1w <= alpha + 3 * se1w
        ok2 = (1 - pww) - (1 - pwr) <= slack + 3 * se_t2
        checks.append((ok1 and ok2, f"{name}: type-I {t1w:.4f} vs {t1r:.4f}, type-II {1 - pww:.4f} vs {1 - pwr:.4f}"))
    assert criterion(11, all(c for c, _ in checks), "; ".join(s for _, s in checks))


def test_criterion_12_tolerance_factor_coverage(criterion):
    n, d, alpha, R = 2000, 10, 0.05, 1000
    B = np.random.default_rng(0).dirichlet(np.ones(d))
    F = 0.8 * B + 0.2 / d
    D = 0.5 * float(np.abs(F - B).sum())
    test = MultinomialTolerantTest(B, n, alpha, "tv", 2000, ROOT.child("c12-cal"))
    g = ROOT.child("c12-data").generator()
    over, positive = 0, 0
    for _ in range(R):
        counts = g.multinomial(n, F)
        _, rep = physics_demo(counts, B, 0.0, alpha, n, d, test=test)
        over += rep["tolerance_factor"] > D
        positive += rep["tolerance_factor"] > 0
    se = math.sqrt(alpha * (1 - alpha) / R)
    rate = over / R
    assert criterion(12, rate <= alpha + 3 * se,
                     f"P(eps_* > V = {D:.4f}) = {rate:.4f} <= {alpha + 3 * se:.4f}; eps_* > 0 in {positive}/{R}")


UNIT_SUITE = [
    "test_statistics.py::test_hermite_orthogonality",
    "test_statistics.py::test_even_p_unbiased",
    "test_statistics.py::test_quartic_unbiased_at_point_seven",
    "test_lower_bounds.py::test_tensorize_examples",
    "test_lower_bounds.py::test_tensorize_exact",
    "test_reductions.py::test_norm_bookkeeping_white_noise",
    "test_reductions.py::test_norm_bookkeeping_density",
    "test_models.py::test_same_stream_same_draws",
    "test_models.py::test_child_streams_are_order_independent",
    "test_experiments.py::test_csv_byte_identical_and_precise",
    "test_cli.py::test_power_curve_csv_byte_identical",
    "test_cli.py::test_regime_map_csv_byte_identical",
]


def test_criterion_13_unit_property_suites(criterion):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(TESTS / t) for t in UNIT_SUITE]],
                          capture_output=True, text=True, cwd=TESTS.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    assert criterion(13, proc.returncode == 0, f"{len(UNIT_SUITE)} suites: {summary}")
