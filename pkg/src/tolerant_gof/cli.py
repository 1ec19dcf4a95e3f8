"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 certificate verification
failure, 3 bracket or convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import secrets
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .calibration import MultinomialTolerantTest, TestSpec, run_test, threshold
from .errors import BracketExhaustedError, CertificateError, ConvergenceError, ValidationError
from .experiments import (POWER_CSV_FIELDS, REGIME_CSV_FIELDS, alternative_shapes, calibrate,
                          chi2_suboptimality_demo, estimate_errors, physics_demo, regime_map,
                          tolerance_factor, write_csv)
from .lower_bounds.approx import best_poly_approx
from .lower_bounds.certificate import assemble_certificate, two_point_pair, verify_certificate
from .lower_bounds.chi2 import feasible_delta
from .lower_bounds.moments import solve_Mp, solve_Mp_constrained
from .models import FunctionSample, HypothesisPair, RandomStream
from .reductions import ReductionSpec, choose_dimension, transport_density_test, transport_white_noise_test

SUBCOMMANDS = ("test", "calibrate", "lowerbound", "verify", "regime-map", "suboptimality",
               "tolerance-factor", "reduce", "physics-demo")
HELP_WIDTH = 100


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1 like every other validation error."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _load_vector(path: str, key: Optional[str] = None) -> np.ndarray:
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        for k in ([key] if key else []) + ["x", "data", "counts", "increments", "observations", "reference"]:
            if k in obj:
                obj = obj[k]
                break
        else:
            raise ValidationError(f"{path}: no vector field found")
    return np.asarray(obj, dtype=float)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, formatter_class=_formatter)
    common.add_argument("--seed", type=int, default=None, help="master seed (default: random, printed to stderr)")
    common.add_argument("--config", default=None, help="JSON file of defaults; explicit flags win")
    common.add_argument("--format", choices=("json", "csv"), default=None, help="output format")
    common.add_argument("--output", default=None, help="output file (default: stdout)")

    parser = _Parser(prog="tolerant-gof", formatter_class=_formatter,
                     description="Tolerant goodness-of-fit testing tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text, formatter_class=_formatter)

    def test_flags(p, data=True):
        p.add_argument("--p", type=float, default=1.0, help="norm index")
        p.add_argument("--d", type=int, default=None, help="dimension")
        p.add_argument("--sigma", type=float, default=1.0, help="noise level")
        p.add_argument("--eps0", type=float, default=0.0, help="null radius")
        p.add_argument("--eps1", type=float, default=None, help="alternative radius (default eps0)")
        p.add_argument("--alpha", type=float, default=0.05, help="level")
        p.add_argument("--beta", type=float, default=0.1, help="target type-II error")
        p.add_argument("--statistic", choices=("debiased_lp", "plugin_lp", "chi2"), default="debiased_lp")
        p.add_argument("--calibration", choices=("cantelli_envelope", "mc_worst_case", "estimation_based"),
                       default="cantelli_envelope")
        p.add_argument("--envelope-bound", choices=("chebyshev", "cantelli"), default="chebyshev")
        p.add_argument("--mc-reps", type=int, default=2000, help="Monte Carlo replications for calibration")
        p.add_argument("--direction", choices=("tolerant", "equivalence"), default="tolerant")
        if data:
            p.add_argument("--data", required=True, help="JSON observation vector")

    test_flags(add("test", "run a calibrated tolerant test on one observation vector"))
    p = add("calibrate", "print a threshold, or a power curve with --eps1-grid")
    test_flags(p, data=False)
    p.add_argument("--eps1-grid", type=_floats, default=None, help="comma-separated alternative radii")
    p.add_argument("--n-reps", type=int, default=2000, help="replications per power-curve point")

    p = add("lowerbound", "moment matching, polynomial approximation and certificates")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--L", type=int, default=8, help="number of matched moments")
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--eps", type=float, default=None, help="constrained problem radius in (0, 1)")
    p.add_argument("--approx", action="store_true", help="also report the best approximation error")
    p.add_argument("--certificate", action="store_true", help="assemble a lower-bound certificate")
    p.add_argument("--two-point", action="store_true", help="use the two-point free-tolerance pair")
    p.add_argument("--d", type=int, default=4096)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.1)

    p = add("verify", "recheck a certificate file")
    p.add_argument("certificate", help="certificate JSON")

    p = add("regime-map", "critical separation across eps0 (CSV)")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--eps0-grid", type=_floats, required=True, help="comma-separated eps0 values")
    p.add_argument("--n-reps", type=int, default=2000)

    p = add("suboptimality", "chi-squared versus plug-in power")
    p.add_argument("--d", type=int, default=4096)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--n-reps", type=int, default=1000)
    p.add_argument("--c-grid", type=_floats, default=[4.0, 8.0, 16.0])
    p.add_argument("--C", type=float, default=4.0, help="alternative constant")

    def count_flags(p):
        p.add_argument("--counts", required=True, help="JSON count vector")
        p.add_argument("--reference", required=True, help="JSON reference probability vector")
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--mc-reps", type=int, default=2000)

    p = add("tolerance-factor", "largest TV radius still rejected by multinomial counts")
    count_flags(p)
    p.add_argument("--hi", type=float, default=1.0, help="upper end of the search bracket")

    p = add("physics-demo", "TV tolerant test against an uncertain reference")
    count_flags(p)
    p.add_argument("--r", type=float, default=0.0, help="reference uncertainty radius")

    p = add("reduce", "transport a white-noise or density test to a finite model")
    p.add_argument("--model", choices=("white-noise", "density"), required=True)
    p.add_argument("--data", required=True, help="JSON increments (white noise) or observations (density)")
    p.add_argument("--sigma", type=float, default=1.0, help="white-noise level")
    p.add_argument("--reference", default=None, help="JSON bin masses of the reference (density; default uniform)")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--auto-d", action="store_true", help="choose d from eps1 and s")
    p.add_argument("--s", type=float, default=1.0, help="smoothness")
    p.add_argument("--d-constant", type=float, default=1.0, help="constant in d = c eps1^(-1/s)")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--eps0", type=float, default=0.0)
    p.add_argument("--eps1", type=float, default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc-reps", type=int, default=2000)
    return parser


def format_all_help() -> str:
    """Top-level help followed by every subcommand's help."""
    parser = build_parser()
    parts = [parser.format_help()]
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name in SUBCOMMANDS:
        parts.append(sub.choices[name].format_help())
    return "\n".join(parts)


def parse(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
        sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.subcommand]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = secrets.randbits(63)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args


def _spec(args) -> TestSpec:
    eps1 = args.eps0 if args.eps1 is None else args.eps1
    hyp = HypothesisPair(args.p, args.eps0, eps1, args.direction)
    return TestSpec(hyp, statistic_kind=args.statistic, alpha=args.alpha, beta=args.beta,
                    calibration=args.calibration, mc_reps=args.mc_reps, envelope_bound=args.envelope_bound)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _emit(args, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, default=_json_default) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_test(args, rng):
    x = _load_vector(args.data, "x")
    if args.d is not None and args.d != x.size:
        raise ValidationError(f"--d {args.d} does not match data length {x.size}")
    dec = run_test(_spec(args), x, args.sigma, rng.child("calibration"))
    _emit(args, dec.to_json())


def cmd_calibrate(args, rng):
    if args.d is None:
        raise ValidationError("--d is required")
    spec = _spec(args)
    if args.eps1_grid is None:
        t = threshold(spec, args.d, args.sigma, rng.child("calibration"))
        _emit(args, {"threshold": t, "d": args.d, "sigma": args.sigma, "alpha": args.alpha,
                     "eps0": args.eps0, "calibration": args.calibration, "statistic": args.statistic})
        return
    test = calibrate(spec, args.d, args.sigma, rng.child("calibration"))
    rows = []
    null = alternative_shapes(args.p, args.d, args.eps0)[1] if args.eps0 > 0 else np.zeros(args.d)
    for k, e1 in enumerate(args.eps1_grid):
        for shape in alternative_shapes(args.p, args.d, e1):
            rows.extend(estimate_errors(test, [(null, shape)], args.n_reps, rng.child("curve", k), args.sigma))
    if args.format == "json":
        _emit(args, [r.csv_row() for r in rows])
    else:
        _emit(args, write_csv(rows, POWER_CSV_FIELDS))


def _mp_payload(p, L, grid, eps):
    if eps is None:
        value, pair = solve_Mp(p, L, grid)
    else:
        value, pair = solve_Mp_constrained(p, eps, L, grid)
    return value, pair


def cmd_lowerbound(args, rng):
    out = {"p": args.p, "L": args.L}
    if args.certificate:
        if args.two_point:
            c_alpha = 1 - args.alpha - args.beta
            eps = (2 * math.log(1 + c_alpha ** 2)) ** 0.25 * args.sigma * args.d ** 0.75
            pair = two_point_pair(eps, args.d, args.p)
        else:
            c_alpha = 1 - args.alpha - args.beta
            delta = feasible_delta(args.L, args.d, args.sigma, 0.5 * c_alpha ** 2)
            _, pair = _mp_payload(args.p, args.L, args.grid_size, args.eps)
            pair = pair.scaled(delta)
        cert = assemble_certificate(pair, args.d, args.sigma, args.alpha, args.beta, args.p)
        _emit(args, cert.to_json())
        return
    value, pair = _mp_payload(args.p, args.L, args.grid_size, args.eps)
    out.update(value=value, pair=pair.to_json())
    if args.eps is not None:
        out["eps"] = args.eps
    if args.approx:
        res = best_poly_approx(args.p, args.L, args.grid_size)
        out["approx_error"] = res.error
        out["duality_gap"] = value - 2 * res.error if args.eps is None else None
    _emit(args, out)


def cmd_verify(args, rng):
    with open(args.certificate) as fh:
        obj = json.load(fh)
    problems = verify_certificate(obj) if isinstance(obj, dict) else ["certificate must be a JSON object"]
    _emit(args, {"valid": not problems, "problems": problems})
    if problems:
        raise CertificateError("; ".join(problems))


def cmd_regime_map(args, rng):
    pts = regime_map(args.p, args.d, args.sigma, args.alpha, args.beta, args.eps0_grid, args.n_reps, rng)
    if args.format == "json":
        _emit(args, [q.csv_row() for q in pts])
    else:
        _emit(args, write_csv(pts, REGIME_CSV_FIELDS))


def cmd_suboptimality(args, rng):
    rep = chi2_suboptimality_demo(args.d, args.sigma, args.alpha, args.beta, args.n_reps, rng,
                                  args.c_grid, args.C)
    _emit(args, rep)


def _counts_and_reference(args):
    counts = _load_vector(args.counts, "counts")
    ref = _load_vector(args.reference, "reference")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise ValidationError("counts must be non-negative integers")
    return counts.astype(np.int64), ref


def cmd_tolerance_factor(args, rng):
    counts, ref = _counts_and_reference(args)
    test = MultinomialTolerantTest(ref, int(counts.sum()), args.alpha, "tv", args.mc_reps, rng)
    tf = tolerance_factor(counts, lambda c, e: test.decide(c, e).reject, args.alpha, args.hi)
    _emit(args, {"tolerance_factor": tf.value, "censored": tf.censored, "alpha": args.alpha})


def cmd_physics_demo(args, rng):
    counts, ref = _counts_and_reference(args)
    _, report = physics_demo(counts, ref, args.r, args.alpha, int(counts.sum()), counts.size, rng, args.mc_reps)
    _emit(args, report)


def cmd_reduce(args, rng):
    eps1 = args.eps0 if args.eps1 is None else args.eps1
    hyp = HypothesisPair(args.p, args.eps0, eps1)
    spec = ReductionSpec(args.s, p=max(args.p, 1.0), d_rule_constant=args.d_constant)
    if args.auto_d:
        if not eps1 > 0:
            raise ValidationError("--auto-d needs eps1 > 0")
        d = choose_dimension(eps1, spec)
    elif args.d is not None:
        d = args.d
    else:
        raise ValidationError("give --d or --auto-d")
    data = _load_vector(args.data)
    if args.model == "white-noise":
        path = FunctionSample.white_noise_path(data, args.sigma)
        dec = transport_white_noise_test(path, spec, hyp, args.alpha, d, rng.child("calibration"))
    else:
        sample = FunctionSample.density_sample(data)
        if args.reference:
            masses = _load_vector(args.reference, "reference")
            if masses.size != d:
                raise ValidationError(f"reference has {masses.size} bins, d = {d}")
            cdf_vals = np.concatenate([[0.0], np.cumsum(masses)])
            cdf = lambda edges: cdf_vals  # noqa: E731 (edges are the d+1 uniform bin edges)
        else:
            cdf = lambda edges: edges  # noqa: E731
        dec = transport_density_test(sample, spec, hyp, args.alpha, d, cdf=cdf,
                                     rng=rng.child("calibration"), mc_reps=args.mc_reps)
    out = dec.to_json()
    out["d"] = d
    _emit(args, out)


COMMANDS = {
    "test": cmd_test, "calibrate": cmd_calibrate, "lowerbound": cmd_lowerbound, "verify": cmd_verify,
    "regime-map": cmd_regime_map, "suboptimality": cmd_suboptimality,
    "tolerance-factor": cmd_tolerance_factor, "reduce": cmd_reduce, "physics-demo": cmd_physics_demo,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse(argv)
        rng = RandomStream(args.seed % 2 ** 64, 0)
        COMMANDS[args.subcommand](args, rng)
    except CertificateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BracketExhaustedError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
