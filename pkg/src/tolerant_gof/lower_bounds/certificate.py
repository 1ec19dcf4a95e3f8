"""Two fuzzy hypotheses lower-bound certificates.

For priors pi0^d, pi1^d on v in R^d with V0 = {||v||_p <= eps0} and
V1 = {||v||_p >= eps1}, every test satisfies

    type I + type II >= 1 - TV(P0, P1) - pi0^d(V0^c) - pi1^d(V1^c),

so no test reaches type I <= alpha and type II <= beta once the right side
exceeds alpha + beta.  We bound TV <= sqrt(chi2) / 2 and the escape
masses by Markov or Cantelli inequalities on ||v||_p^p, whose mean and
variance are exact sums over the product prior.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import mpmath
import numpy as np

from ..errors import CertificateError, ValidationError
from .chi2 import chi2_one_dim_bound, chi2_tensorize
from .moments import MixingPair

MATCH_RTOL = 1e-9


@dataclass(frozen=True)
class LowerBoundCertificate:
    pair: MixingPair
    d: int
    sigma: float
    p: float
    alpha: float
    beta: float
    chi2_value_upper: float
    mass0: float
    mass1: float
    eps0: float
    eps1: float
    target_risk_floor: float

    @property
    def c_alpha(self) -> float:
        return 1.0 - self.alpha - self.beta

    def payload(self) -> dict:
        return {
            "pair": self.pair.to_json(), "d": self.d, "sigma": self.sigma, "p": self.p,
            "alpha": self.alpha, "beta": self.beta, "chi2_upper": self.chi2_value_upper,
            "mass0": self.mass0, "mass1": self.mass1, "eps0": self.eps0, "eps1": self.eps1,
            "risk_floor": self.target_risk_floor,
        }

    def to_json(self) -> dict:
        out = self.payload()
        out["digest"] = _digest(out)
        return out


def _digest(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "digest"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _escape(E: float, V: float, eta: float, upper: bool):
    """Radius^p and retained mass for one side.

    Zero variance pins ||v||_p^p at E, so the mass is exactly 1.  Otherwise
    the mass is 1 - eta and the radius comes from Markov/Cantelli.
    """
    if V <= 0:
        return E, 1.0
    dev = math.sqrt(V * (1 - eta) / eta)
    if upper:
        r = E + dev
        if E > 0:
            r = min(r, E / eta)
        return r, 1.0 - eta
    return max(E - dev, 0.0), 1.0 - eta


def _side_moments(pair: MixingPair, w: np.ndarray, d: int, p: float):
    a = np.abs(pair.scaled_support) ** p
    m1 = math.fsum(w * a)
    # centered form, so equal |v|^p on the support gives exactly zero
    return d * m1, d * math.fsum(w * (a - m1) ** 2)


def _evaluate(pair: MixingPair, d: int, sigma: float, alpha: float, beta: float, p: float) -> dict:
    bad = pair.violations()
    if bad:
        raise CertificateError("pair invalid: " + "; ".join(bad))
    c_alpha = 1.0 - alpha - beta
    if not c_alpha > 0:
        raise ValidationError("alpha + beta must be below 1")
    eta = c_alpha / 4
    chi2 = chi2_tensorize(chi2_one_dim_bound(pair, sigma), d)
    E0, V0 = _side_moments(pair, pair.w0, d, p)
    E1, V1 = _side_moments(pair, pair.w1, d, p)
    r0, m0 = _escape(E0, V0, eta, upper=True)
    r1, m1 = _escape(E1, V1, eta, upper=False)
    tv = 0.5 * math.sqrt(chi2) if math.isfinite(chi2) else math.inf
    floor = 1.0 - tv - (1 - m0) - (1 - m1)
    return {"chi2": chi2, "mass0": m0, "mass1": m1, "eps0": r0 ** (1 / p), "eps1": r1 ** (1 / p),
            "floor": floor, "c_alpha": c_alpha}


def _conditions(v: dict, alpha: float, beta: float) -> list[str]:
    failed = []
    if not v["eps1"] > v["eps0"]:
        failed.append(f"mean-gap: eps1 = {v['eps1']:.6g} is not above eps0 = {v['eps0']:.6g}")
    if not math.isfinite(v["chi2"]) or v["chi2"] >= v["c_alpha"] ** 2:
        failed.append(f"chi2: bound {v['chi2']:.6g} is not below C_alpha^2 = {v['c_alpha'] ** 2:.6g}")
    if not v["floor"] > alpha + beta:
        failed.append(f"mass: risk floor {v['floor']:.6g} does not exceed alpha + beta = {alpha + beta:.6g}")
    return failed


def assemble_certificate(pair: MixingPair, d: int, sigma: float, alpha: float, beta: float, p: float) -> LowerBoundCertificate:
    """Certificate for ``pair`` (already scaled to [-delta, delta]); raises
    CertificateError naming every failed condition."""
    if int(d) != d or d < 1:
        raise ValidationError("d must be a positive integer")
    if not (0 < alpha < 1 and 0 < beta < 1 and sigma > 0 and p > 0):
        raise ValidationError("need 0 < alpha, beta < 1, sigma > 0, p > 0")
    v = _evaluate(pair, int(d), float(sigma), float(alpha), float(beta), float(p))
    failed = _conditions(v, alpha, beta)
    if failed:
        raise CertificateError("certificate refused: " + "; ".join(failed))
    cert = LowerBoundCertificate(pair, int(d), float(sigma), float(p), float(alpha), float(beta),
                                 v["chi2"], v["mass0"], v["mass1"], v["eps0"], v["eps1"], v["floor"])
    problems = verify_certificate(cert.to_json())
    if problems:
        raise CertificateError("certificate failed its own recheck: " + "; ".join(problems))
    return cert


def two_point_pair(eps: float, d: int, p: float = 1.0) -> MixingPair:
    """pi0 = delta_0, pi1 = (delta_{+r} + delta_{-r}) / 2 with r = eps / d^{1/p}."""
    r = eps / d ** (1.0 / p)
    return MixingPair([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5], 1, r, p)


# ---------------------------------------------------------------- recheck

def _mp_recompute(obj: dict) -> dict:
    """Independent high-precision evaluation of every stored quantity."""
    mp = mpmath.mp
    pair = obj["pair"]
    d, sigma, p = int(obj["d"]), mpmath.mpf(obj["sigma"]), mpmath.mpf(obj["p"])
    alpha, beta = mpmath.mpf(obj["alpha"]), mpmath.mpf(obj["beta"])
    v = [mpmath.mpf(pair["delta"]) * mpmath.mpf(s) for s in pair["support"]]
    w0 = [mpmath.mpf(w) for w in pair["w0"]]
    w1 = [mpmath.mpf(w) for w in pair["w1"]]
    out = {"problems": []}
    if any(w < 0 for w in w0 + w1):
        out["problems"].append("negative weight")
    for name, w in (("w0", w0), ("w1", w1)):
        if abs(mpmath.fsum(w) - 1) > 1e-10:
            out["problems"].append(f"{name} does not sum to 1")
    if any(abs(mpmath.mpf(s)) > 1 + mpmath.mpf(1e-12) for s in pair["support"]):
        out["problems"].append("support outside [-1, 1]")
    L = int(pair["L"])
    for l in range(1, L + 1):
        gap = mpmath.fsum(a * mpmath.mpf(s) ** l for a, s in zip(w1, pair["support"])) - \
            mpmath.fsum(a * mpmath.mpf(s) ** l for a, s in zip(w0, pair["support"]))
        if abs(gap) > 1e-8:
            out["problems"].append(f"moment {l} not matched")
            break
    if abs(mpmath.fsum(a * s for a, s in zip(w0, v))) > 1e-10 * max(1, abs(mpmath.mpf(pair["delta"]))):
        out["problems"].append("pi0 not centered")
    if out["problems"]:
        return out

    delta = max(abs(s) for s in v)
    x = delta ** 2 / sigma ** 2
    r0 = max([abs(s) for s, w in zip(v, w0) if w > 0], default=mpmath.mpf(0))
    total = mpmath.mpf(0)
    j = 0
    while True:
        j += 1
        dj = mpmath.fsum((a - b) * (s / sigma) ** j for a, b, s in zip(w1, w0, v))
        total += dj ** 2 / mpmath.factorial(j)
        if j > x + 1:
            tail = 4 * x ** (j + 1) / mpmath.factorial(j + 1) / (1 - x / (j + 2))
            if tail < mpmath.mpf("1e-12"):
                total += tail
                break
    chi2_one = mpmath.exp(r0 ** 2 / (2 * sigma ** 2)) * total if delta > 0 else mpmath.mpf(0)
    chi2 = mpmath.power(1 + chi2_one, d) - 1
    c_alpha = 1 - alpha - beta
    eta = c_alpha / 4

    def side(w, upper):
        a = [abs(s) ** p for s in v]
        m1 = mpmath.fsum(wi * ai for wi, ai in zip(w, a))
        E = d * m1
        V = d * mpmath.fsum(wi * (ai - m1) ** 2 for wi, ai in zip(w, a))
        if V == 0:
            return E, mpmath.mpf(1)
        dev = mpmath.sqrt(V * (1 - eta) / eta)
        if upper:
            r = E + dev
            if E > 0:
                r = min(r, E / eta)
            return r, 1 - eta
        return max(E - dev, 0), 1 - eta

    e0, m0 = side(w0, True)
    e1, m1 = side(w1, False)
    out.update(chi2=chi2, mass0=m0, mass1=m1, eps0=e0 ** (1 / p), eps1=e1 ** (1 / p),
               floor=1 - mpmath.sqrt(chi2) / 2 - (1 - m0) - (1 - m1), c_alpha=c_alpha)
    return out


def _close(stored, exact) -> bool:
    stored = mpmath.mpf(stored)
    return abs(stored - exact) <= MATCH_RTOL * max(abs(exact), mpmath.mpf(1e-300)) + mpmath.mpf(1e-15)


def verify_certificate(obj: dict) -> list[str]:
    """Recheck a serialized certificate; returns the failures (empty if sound)."""
    problems = []
    required = ["pair", "d", "sigma", "p", "alpha", "beta", "chi2_upper", "mass0", "mass1",
                "eps0", "eps1", "risk_floor", "digest"]
    missing = [k for k in required if k not in obj]
    if missing:
        return [f"missing fields: {', '.join(missing)}"]
    if obj["digest"] != _digest(obj):
        problems.append("digest does not match the certificate contents")
    try:
        with mpmath.workdps(50):
            ex = _mp_recompute(obj)
            if ex["problems"]:
                return problems + ex["problems"]
            for key, stored in (("chi2", "chi2_upper"), ("mass0", "mass0"), ("mass1", "mass1"),
                                ("eps0", "eps0"), ("eps1", "eps1"), ("floor", "risk_floor")):
                if not _close(obj[stored], ex[key]):
                    problems.append(f"{stored} = {obj[stored]!r} does not match recomputed {mpmath.nstr(ex[key], 17)}")
            alpha, beta = mpmath.mpf(obj["alpha"]), mpmath.mpf(obj["beta"])
            if not ex["eps1"] > ex["eps0"]:
                problems.append("mean-gap condition fails")
            if not ex["chi2"] < ex["c_alpha"] ** 2:
                problems.append("chi2 condition fails")
            if not ex["floor"] > alpha + beta:
                problems.append("risk floor does not exceed alpha + beta")
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        problems.append(f"malformed certificate: {exc}")
    return problems


def certificate_from_json(obj: dict) -> LowerBoundCertificate:
    problems = verify_certificate(obj)
    if problems:
        raise CertificateError("; ".join(problems))
    return LowerBoundCertificate(MixingPair.from_json(obj["pair"]), int(obj["d"]), obj["sigma"], obj["p"],
                                 obj["alpha"], obj["beta"], obj["chi2_upper"], obj["mass0"], obj["mass1"],
                                 obj["eps0"], obj["eps1"], obj["risk_floor"])
