"""Monte Carlo experiments: error rates, empirical critical separation,
regime maps, the chi-squared suboptimality demo and tolerance factors.

Power curves reuse one noise matrix across alternatives (common random
numbers), which keeps bisection traces monotone up to noise in the
threshold only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import statistics as st
from .calibration import MultinomialTolerantTest, TestDecision, TestSpec, threshold
from .errors import BracketExhaustedError, ValidationError
from .models import HypothesisPair, RandomStream, norm_lp
from .montecarlo import rate_and_stderr, standard_normal_matrix

BISECTION_STEPS = 12
POWER_CSV_FIELDS = ("eps0", "eps1", "d", "sigma", "alpha", "n_reps", "type1", "power", "stderr", "seed")
REGIME_CSV_FIELDS = ("eps0", "critical_sep", "predicted", "label")


@dataclass(frozen=True)
class PowerCurveRow:
    eps0: float
    eps1: float
    d: int
    n_reps: int
    sigma: float
    alpha: float
    empirical_type1: float
    empirical_power: float
    mc_stderr: float
    seed: int

    def __post_init__(self):
        for name in ("empirical_type1", "empirical_power"):
            r = getattr(self, name)
            if not 0 <= r <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")

    def csv_row(self) -> dict:
        return {"eps0": self.eps0, "eps1": self.eps1, "d": self.d, "sigma": self.sigma, "alpha": self.alpha,
                "n_reps": self.n_reps, "type1": self.empirical_type1, "power": self.empirical_power,
                "stderr": self.mc_stderr, "seed": self.seed}


@dataclass(frozen=True)
class RegimePoint:
    eps0: float
    empirical_critical_sep: float
    predicted_rate: float
    regime_label: str

    def __post_init__(self):
        if not self.empirical_critical_sep > 0:
            raise ValidationError("empirical critical separation must be positive")
        if self.regime_label not in ("free", "interpolation", "functional_estimation"):
            raise ValidationError(f"unknown regime label {self.regime_label!r}")

    def csv_row(self) -> dict:
        return {"eps0": self.eps0, "critical_sep": self.empirical_critical_sep,
                "predicted": self.predicted_rate, "label": self.regime_label}


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def write_csv(rows, fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.csv_row().items()})
    return buf.getvalue()


# ---------------------------------------------------------------- error rates


@dataclass(frozen=True)
class CalibratedTest:
    """A TestSpec with its threshold fixed for dimension d and noise sigma."""

    __test__ = False

    spec: TestSpec
    d: int
    sigma: float
    threshold: float

    def reject(self, x: np.ndarray) -> np.ndarray:
        val = st.statistic_value(x, self.spec.p, self.sigma, self.spec.statistic_kind)
        if self.spec.hypothesis.direction == "tolerant":
            return np.asarray(val > self.threshold)
        return np.asarray(val <= self.threshold)


def calibrate(spec: TestSpec, d: int, sigma: float, rng: Optional[RandomStream] = None) -> CalibratedTest:
    return CalibratedTest(spec, int(d), float(sigma), float(threshold(spec, d, sigma, rng)))


def _as_batch_test(test, d, sigma, rng):
    if isinstance(test, CalibratedTest):
        return test.reject
    if isinstance(test, TestSpec):
        return calibrate(test, d, sigma, rng.child("calibration") if rng else None).reject
    if callable(test):
        return test
    raise ValidationError("test must be a TestSpec, a CalibratedTest or a batch callable")


def estimate_errors(test, generators: Sequence[tuple], n_reps: int, rng: RandomStream,
                    sigma: float = 1.0, p: Optional[float] = None) -> list[PowerCurveRow]:
    """Rejection rates under each (v_null, v_alt) pair of mean vectors.

    ``test`` is a TestSpec (calibrated here), a CalibratedTest, or any
    callable mapping an (n, d) batch to booleans.  Norms in the rows use
    ``p`` (default: the test's own p, else 2).  The stderr column is for the
    power estimate.
    """
    if n_reps < 100:
        raise ValidationError("n_reps must be >= 100")
    spec = test.spec if isinstance(test, CalibratedTest) else test if isinstance(test, TestSpec) else None
    p = p if p is not None else (spec.p if spec else 2.0)
    alpha = spec.alpha if spec else math.nan
    rows = []
    for k, (v0, v1) in enumerate(generators):
        v0, v1 = np.asarray(v0, dtype=float), np.asarray(v1, dtype=float)
        d = v0.size
        decide = _as_batch_test(test, d, sigma, rng)
        Z = standard_normal_matrix(rng.child("generator", k), n_reps, d)
        t1, _ = rate_and_stderr(decide(v0 + sigma * Z))
        pw, se = rate_and_stderr(decide(v1 + sigma * Z))
        rows.append(PowerCurveRow(norm_lp(v0, p), norm_lp(v1, p), d, int(n_reps), float(sigma), alpha,
                                  t1, pw, se, rng.master_seed))
    return rows


def alternative_shapes(p: float, d: int, radius: float) -> list[np.ndarray]:
    """Uniform spread and single spike with ||v||_p = radius."""
    spread = np.full(d, radius * d ** (-1.0 / p))
    spike = np.zeros(d)
    spike[0] = radius
    return [spread, spike]


def default_test_family(p: float, alpha: float = 0.05, beta: float = 0.1, **options) -> Callable[[float], TestSpec]:
    kind = options.pop("statistic_kind", "debiased_lp")

    def family(eps0: float) -> TestSpec:
        return TestSpec(HypothesisPair(p, eps0, eps0), statistic_kind=kind, alpha=alpha, beta=beta, **options)

    return family


@dataclass
class BisectionResult:
    critical_sep: float
    eps1: float
    lo: float
    hi: float
    trace: list = field(default_factory=list)
    monotone: bool = True

    def __float__(self):
        return self.critical_sep


def worst_power(decide, p: float, eps1: float, sigma: float, Z: np.ndarray) -> tuple[float, float]:
    """min over alternative shapes of the empirical power, with its stderr."""
    out = []
    for v in alternative_shapes(p, Z.shape[1], eps1):
        out.append(rate_and_stderr(decide(v + sigma * Z)))
    return min(out)


def bisect_critical_separation(test_family: Callable[[float], TestSpec], eps0: float, d: int, sigma: float,
                               alpha: float, beta: float, n_reps: int, rng: RandomStream,
                               hi: Optional[float] = None, steps: int = BISECTION_STEPS,
                               max_expand: int = 30) -> BisectionResult:
    """Smallest eps1 - eps0 with worst-shape empirical power >= 1 - beta.

    With ``hi`` given the bracket is [0, hi] and failing to reach the power
    target at ``hi`` is an error; otherwise ``hi`` doubles from a small start.
    """
    spec = test_family(eps0)
    if abs(spec.alpha - alpha) > 1e-15:
        raise ValidationError("test family alpha does not match")
    test = calibrate(spec, d, sigma, rng.child("calibration"))
    Z = standard_normal_matrix(rng.child("noise"), n_reps, d)
    p = spec.p
    target = 1 - beta
    trace = []

    def power_at(sep):
        pw, se = worst_power(test.reject, p, eps0 + sep, sigma, Z)
        trace.append((float(sep), pw, se))
        return pw

    if hi is not None:
        if not power_at(hi) >= target:
            raise BracketExhaustedError(f"power at separation {hi} stays below {target}")
    else:
        hi = sigma * max(1.0, d ** (1.0 / p)) * 0.25
        for _ in range(max_expand):
            if power_at(hi) >= target:
                break
            hi *= 2
        else:
            raise BracketExhaustedError("power target not reached while expanding the bracket")
    lo = 0.0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if power_at(mid) >= target:
            hi = mid
        else:
            lo = mid
    # monotone power check along the trace, allowing 2 stderr of noise
    srt = sorted(trace)
    monotone = all(b[1] >= a[1] - 2 * max(a[2], b[2], 1.0 / n_reps) for a, b in zip(srt, srt[1:]))
    sep = 0.5 * (lo + hi)
    return BisectionResult(sep, eps0 + sep, lo, hi, trace, monotone)


# ---------------------------------------------------------------- regimes


def regime_label(eps0: float, d: int, sigma: float) -> str:
    if eps0 < sigma * math.sqrt(d):
        return "free"
    if eps0 < sigma * d:
        return "interpolation"
    return "functional_estimation"


def predicted_rate(p: float, eps0: float, d: int, sigma: float) -> float:
    """Rate shape with unit constants (sigma = n^{-1/2}).

    p = 1: sigma d^{3/4}, sqrt(eps0 d sigma), sigma d by regime.  For p > 1
    only the free-regime shape sigma d^{1/(2p)} is provided; other regimes
    give nan.
    """
    label = regime_label(eps0, d, sigma)
    if p == 1:
        return {"free": sigma * d ** 0.75, "interpolation": math.sqrt(eps0 * d * sigma),
                "functional_estimation": sigma * d}[label]
    return sigma * d ** (1.0 / (2 * p)) if label == "free" else math.nan


def regime_map(p: float, d: int, sigma: float, alpha: float, beta: float, eps0_grid: Sequence[float],
               n_reps: int, rng: RandomStream, test_family: Optional[Callable] = None) -> list[RegimePoint]:
    grid = [float(e) for e in eps0_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValidationError("eps0_grid must be non-decreasing")
    fam = test_family or default_test_family(p, alpha, beta)
    seps = {}
    out = []
    for e0 in grid:
        # repeated grid values share one bisection (streams are keyed by value)
        if e0 not in seps:
            seps[e0] = bisect_critical_separation(fam, e0, d, sigma, alpha, beta, n_reps,
                                                  rng.child("eps0", e0)).critical_sep
        out.append(RegimePoint(e0, seps[e0], predicted_rate(p, e0, d, sigma), regime_label(e0, d, sigma)))
    return out


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log y on log x and the residual rms."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


# ---------------------------------------------------------------- chi-squared demo


def chi2_valid_power_ceiling(eps0: float, eps1: float, d: int, sigma: float, alpha: float) -> float:
    """Largest power any valid threshold on sum(X^2 - sigma^2) can have
    against the uniform l1 alternative of norm eps1.

    A valid threshold must exceed the (1-alpha) quantile under the spike
    null (eps0, 0, ..., 0), where the statistic is sigma^2 (chi2_d(nc) - d)
    with nc = eps0^2/sigma^2.  The alternative has nc = eps1^2/(d sigma^2).
    """
    q = stats.ncx2.ppf(1 - alpha, d, (eps0 / sigma) ** 2) if eps0 > 0 else stats.chi2.ppf(1 - alpha, d)
    nc1 = eps1 ** 2 / (d * sigma ** 2)
    return float(stats.ncx2.sf(q, d, nc1) if nc1 > 0 else stats.chi2.sf(q, d))


def chi2_suboptimality_demo(d: int, sigma: float, alpha: float, beta: float, n_reps: int, rng: RandomStream,
                            c_grid: Sequence[float] = (4, 8, 16), C: float = 4.0) -> dict:
    """Envelope-calibrated chi-squared vs l1 plug-in at eps0 = c sigma d^{1/4},
    eps1 = C sigma d^{3/4}, alternative (eps1/d) 1.  Includes the eps0 = 0
    control."""
    if d < 256:
        raise ValidationError("d must be >= 256")
    Z = standard_normal_matrix(rng.child("noise"), n_reps, d)
    eps1 = C * sigma * d ** 0.75
    alt = np.full(d, eps1 / d) + sigma * Z
    rows = []
    for c in [0.0] + [float(c) for c in c_grid]:
        eps0 = c * sigma * d ** 0.25
        hyp = HypothesisPair(1.0, eps0, eps1)
        chi = calibrate(TestSpec(hyp, statistic_kind="chi2", alpha=alpha, beta=beta), d, sigma)
        plug = calibrate(TestSpec(hyp, statistic_kind="debiased_lp", alpha=alpha, beta=beta), d, sigma)
        chi_pw, chi_se = rate_and_stderr(chi.reject(alt))
        pl_pw, pl_se = rate_and_stderr(plug.reject(alt))
        rows.append({
            "c": c, "eps0": eps0, "eps1": eps1,
            "chi2_threshold": chi.threshold, "chi2_power": chi_pw, "chi2_stderr": chi_se,
            "chi2_valid_power_ceiling": chi2_valid_power_ceiling(eps0, eps1, d, sigma, alpha),
            "plugin_threshold": plug.threshold, "plugin_power": pl_pw, "plugin_stderr": pl_se,
        })
    return {"d": d, "sigma": sigma, "alpha": alpha, "beta": beta, "C": C, "n_reps": n_reps, "rows": rows}


# ---------------------------------------------------------------- tolerance factor


@dataclass(frozen=True)
class ToleranceFactor:
    value: float
    censored: bool

    def __float__(self):
        return self.value


def tolerance_factor(data, test_family: Callable[[object, float], bool], alpha: float, bracket_hi: float,
                     rtol: float = 1e-4) -> ToleranceFactor:
    """sup{eps in [0, bracket_hi] : test_family(data, eps) rejects}.

    ``test_family(data, eps)`` returns the level-alpha decision at radius
    eps; it must reject on an initial segment of eps values.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if not bracket_hi > 0:
        raise ValidationError("bracket_hi must be positive")
    if not test_family(data, 0.0):
        return ToleranceFactor(0.0, False)
    if test_family(data, bracket_hi):
        return ToleranceFactor(float(bracket_hi), True)
    lo, hi = 0.0, float(bracket_hi)
    while hi - lo > rtol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if test_family(data, mid):
            lo = mid
        else:
            hi = mid
    return ToleranceFactor(lo, False)


def detectability_floor(n: int, d: int, r: float) -> float:
    """max(d^{1/4}/sqrt(n), d^{1/4} n^{-1/4} sqrt(r)), unit constants."""
    return max(d ** 0.25 / math.sqrt(n), d ** 0.25 * n ** -0.25 * math.sqrt(r))


def physics_demo(counts, reference, r: float, alpha: float, n: int, d: int,
                 rng: Optional[RandomStream] = None, mc_reps: int = 2000,
                 test: Optional[MultinomialTolerantTest] = None) -> tuple[TestDecision, dict]:
    """TV plug-in tolerant test of H0: TV(F, B_hat) <= r plus its tolerance factor."""
    counts = np.asarray(counts)
    reference = np.asarray(reference, dtype=float)
    if counts.size != d or reference.size != d:
        raise ValidationError("counts and reference must have length d")
    if int(counts.sum()) != n:
        raise ValidationError("counts must sum to n")
    if not r >= 0:
        raise ValidationError("r must be >= 0")
    test = test or MultinomialTolerantTest(reference, n, alpha, "tv", mc_reps, rng or RandomStream(0, 0))
    decision = test.decide(counts, r)
    tf = tolerance_factor(counts, lambda c, e: test.decide(c, e).reject, alpha, bracket_hi=1.0)
    floor = detectability_floor(n, d, r)
    report = {
        "decision": decision.to_json(), "r": r, "n": n, "d": d, "alpha": alpha,
        "tolerance_factor": tf.value, "tolerance_factor_censored": tf.censored,
        "tv_distance": float(test.statistic(counts)), "deviation_quantile": test.deviation_quantile,
        "predicted_floor": floor, "predicted_floor_r0": detectability_floor(n, d, 0.0),
        "no_power_loss_regime": bool(r <= 1 / math.sqrt(n)),
    }
    return decision, report
