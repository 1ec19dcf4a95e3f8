"""Exception types shared across the package.

The CLI maps these onto exit codes, so each one corresponds to a distinct
failure class rather than to a module.
"""


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class CertificateError(RuntimeError):
    """A lower-bound certificate failed construction or an independent recheck."""


class BracketExhaustedError(RuntimeError):
    """A bisection bracket does not contain the target crossing."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""
