"""Tolerant goodness-of-fit testing: calibrated tests, lower-bound certificates
and a Monte Carlo experiment harness."""

__version__ = "0.1.0"
