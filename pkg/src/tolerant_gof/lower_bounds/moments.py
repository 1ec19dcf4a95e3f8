"""Moment-matching linear programs M_p(L) and M_p(eps, L).

Both problems are solved over symmetric distributions, which loses nothing
because |v|^p is even: symmetrizing a feasible pair keeps the even moments
matched and makes every odd moment vanish.  A symmetric law on [-1, 1] is a
law on the half grid [0, 1] (mass at +-x split evenly), and matching even
moments up to L means matching E T_{2j}(v) for 2j <= L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from ..errors import ValidationError
from .ipm import solve_lp
from .simplex import solve_lp_simplex

SOLVERS = {"simplex": solve_lp_simplex, "ipm": solve_lp}

WEIGHT_TOL = 1e-10
MOMENT_TOL = 1e-8
CENTER_TOL = 1e-10
ZERO_VALUE = 1e-12


@dataclass(frozen=True)
class MixingPair:
    """Two discrete laws pi0, pi1 on ``delta * support``."""

    support: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    L: int
    delta: float = 1.0
    p: float = 1.0
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arrs = [np.array(a, dtype=float).reshape(-1) for a in (self.support, self.w0, self.w1)]
        if not (arrs[0].size == arrs[1].size == arrs[2].size) or arrs[0].size == 0:
            raise ValidationError("support, w0 and w1 must be non-empty and of equal length")
        for a in arrs:
            if not np.all(np.isfinite(a)):
                raise ValidationError("MixingPair entries must be finite")
            a.setflags(write=False)
        object.__setattr__(self, "support", arrs[0])
        object.__setattr__(self, "w0", arrs[1])
        object.__setattr__(self, "w1", arrs[2])
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValidationError("delta must be a finite non-negative real")
        if int(self.L) != self.L or self.L < 0:
            raise ValidationError("L must be a non-negative integer")
        object.__setattr__(self, "L", int(self.L))

    @property
    def scaled_support(self) -> np.ndarray:
        return self.delta * self.support

    def moment_gaps(self, top: int | None = None) -> np.ndarray:
        """m_l(pi1) - m_l(pi0) for l = 1..top on the unscaled support."""
        top = self.L if top is None else top
        out = np.empty(top)
        for l in range(1, top + 1):
            xl = self.support ** l
            out[l - 1] = math.fsum(np.concatenate([self.w1 * xl, -self.w0 * xl]))
        return out

    def violations(self) -> list[str]:
        """Invariant failures (empty when the pair is valid)."""
        bad = []
        if np.any(self.w0 < 0) or np.any(self.w1 < 0):
            bad.append("negative weight")
        for name, w in (("w0", self.w0), ("w1", self.w1)):
            if abs(math.fsum(w) - 1) > WEIGHT_TOL:
                bad.append(f"{name} does not sum to 1")
            if abs(math.fsum(w * self.support)) > CENTER_TOL:
                bad.append(f"{name} is not centered")
        if np.any(np.abs(self.support) > 1 + 1e-12):
            bad.append("support outside [-1, 1]")
        if self.L and np.max(np.abs(self.moment_gaps())) > MOMENT_TOL:
            bad.append(f"moments 1..{self.L} are not matched")
        return bad

    def check(self) -> "MixingPair":
        bad = self.violations()
        if bad:
            raise ValidationError("invalid MixingPair: " + "; ".join(bad))
        return self

    def scaled(self, delta: float) -> "MixingPair":
        return MixingPair(self.support, self.w0, self.w1, self.L, float(delta), self.p, dict(self.notes))

    def to_json(self) -> dict:
        return {"support": self.support.tolist(), "w0": self.w0.tolist(), "w1": self.w1.tolist(),
                "L": self.L, "delta": self.delta, "p": self.p}

    @classmethod
    def from_json(cls, obj: dict) -> "MixingPair":
        return cls(obj["support"], obj["w0"], obj["w1"], obj["L"], obj["delta"], obj["p"])


def default_grid_size(L: int) -> int:
    return max(512, 16 * int(L))


def half_grid(grid_size: int) -> np.ndarray:
    """Non-negative half of a symmetric Chebyshev-extrema grid, sorted, with 0 and 1."""
    n = int(grid_size) | 1  # odd so that 0 is a node
    k = np.arange((n - 1) // 2, -1, -1)
    x = np.cos(np.pi * k / (n - 1))
    x[0] = 0.0
    return x


def _even_cheb_rows(x: np.ndarray, K: int) -> np.ndarray:
    """Rows T_{2j}(x), j = 1..K."""
    if K == 0:
        return np.zeros((0, x.size))
    V = cheb.chebvander(x, 2 * K)
    return V[:, 2:2 * K + 1:2].T


def _symmetric_pair(x: np.ndarray, w0: np.ndarray, w1: np.ndarray, L: int, p: float, notes: dict) -> MixingPair:
    keep = (w0 > 0) | (w1 > 0)
    x, w0, w1 = x[keep], w0[keep], w1[keep]
    pos = x > 0
    support = np.concatenate([-x[pos][::-1], x[~pos], x[pos]])
    W0 = np.concatenate([0.5 * w0[pos][::-1], w0[~pos], 0.5 * w0[pos]])
    W1 = np.concatenate([0.5 * w1[pos][::-1], w1[~pos], 0.5 * w1[pos]])
    return MixingPair(support, W0, W1, L, 1.0, p, notes)


def _polish(A: np.ndarray, b: np.ndarray, w: np.ndarray, active: np.ndarray, rounds: int = 10) -> np.ndarray:
    """Crossover: keep the active columns and re-solve the equalities there.

    Columns driven negative by the least-squares correction are dropped and
    the solve repeated.  Falls back to ``w`` if no clean solution appears.
    """
    idx = np.flatnonzero(active)
    for _ in range(rounds):
        if idx.size == 0:
            break
        trial = np.zeros_like(w)
        trial[idx] = w[idx]
        resid = b - A @ trial
        trial[idx] += np.linalg.lstsq(A[:, idx], resid, rcond=None)[0]
        if np.all(trial >= 0):
            if np.linalg.norm(b - A @ trial) < 1e-12 * (1 + np.linalg.norm(b)):
                return trial
            break
        idx = idx[trial[idx] > 0]
    return w


def _solve_half(p: float, L: int, x: np.ndarray, eps_p: float | None, method: str = "simplex"):
    """Solve the LP on half-grid nodes ``x``; returns (value, w0, w1)."""
    n = x.size
    K = L // 2
    f = x ** p
    T = _even_cheb_rows(x, K)
    rows = [np.concatenate([np.ones(n), np.zeros(n)]), np.concatenate([np.zeros(n), np.ones(n)])]
    rows += [np.concatenate([-T[j], T[j]]) for j in range(K)]
    b = [1.0, 1.0] + [0.0] * K
    if eps_p is None:
        c = np.concatenate([f, -f])
        A = np.array(rows)
    else:
        # E_{pi0} |v|^p + slack = eps^p
        rows = [np.concatenate([r, [0.0]]) for r in rows]
        rows.append(np.concatenate([f, np.zeros(n), [1.0]]))
        b.append(eps_p)
        c = np.concatenate([np.zeros(n), -f, [0.0]])
        A = np.array(rows)
    b = np.array(b)
    res = SOLVERS[method](c, A, b)
    # strict complementarity separates the optimal support from dust
    active = (res.x > res.s) & (res.x > 1e-9 * res.x.max())
    xs = _polish(A, b, res.x, active)
    w0, w1 = xs[:n], xs[n:2 * n]
    value = math.fsum(w1 * f) - (0.0 if eps_p is not None else math.fsum(w0 * f))
    return value, w0, w1


def _refined_nodes(x: np.ndarray, w0: np.ndarray, w1: np.ndarray, factor: int) -> np.ndarray:
    active = np.flatnonzero((w0 > 0) | (w1 > 0))
    extra = []
    for i in active:
        lo = x[max(i - 1, 0)]
        hi = x[min(i + 1, x.size - 1)]
        extra.append(np.linspace(lo, hi, 2 * factor + 1))
    out = np.unique(np.concatenate([x] + extra))
    # drop near-duplicates, which only make the LP ill-conditioned
    return out[np.r_[True, np.diff(out) > 1e-12]]


def _solve(p: float, L: int, grid_size: int, eps_p: float | None, refine: int, method: str):
    if method not in SOLVERS:
        raise ValidationError(f"unknown LP method {method!r}")
    if not (math.isfinite(p) and p > 0):
        raise ValidationError("p must be a positive real")
    if int(L) != L or L < 1:
        raise ValidationError("L must be a positive integer")
    if grid_size < 8 * L:
        raise ValidationError("grid_size must be >= 8 L")
    x = half_grid(grid_size)
    value, w0, w1 = _solve_half(p, L, x, eps_p, method)
    if eps_p is None and value <= ZERO_VALUE:
        # every feasible pair is optimal (e.g. even p <= L); the solver's
        # pick is arbitrary, so report the trivial pair pi0 = pi1 = delta_0
        one = np.array([1.0])
        return value, MixingPair([0.0], one, one, int(L), 1.0, float(p), {"degenerate": True})
    for _ in range(refine):
        # local refinement around active nodes; the grid only grows, so the
        # optimum can only increase toward the continuous value
        x = _refined_nodes(x, w0, w1, 8)
        value, w0, w1 = _solve_half(p, L, x, eps_p, method)
    notes = {"grid_nodes": int(x.size), "refinements": int(refine), "lp": method}
    return value, _symmetric_pair(x, w0, w1, int(L), float(p), notes)


def solve_Mp(p: float, L: int, grid_size: int | None = None, refine: int = 2, method: str = "simplex"):
    """max E_{pi1}|v|^p - E_{pi0}|v|^p over laws on [-1, 1] matching L moments.

    Returns ``(value, MixingPair)``.  ``refine`` rounds of local grid
    refinement around the active nodes follow the initial solve.  ``method``
    picks the LP solver ("simplex" or "ipm").
    """
    grid_size = default_grid_size(L) if grid_size is None else int(grid_size)
    return _solve(p, L, grid_size, None, refine, method)


def solve_Mp_constrained(p: float, eps: float, L: int, grid_size: int | None = None, refine: int = 2,
                         method: str = "simplex"):
    """max E_{pi1}|v|^p subject to E_{pi0}|v|^p <= eps^p and L matched moments."""
    if not (0 <= eps < 1):
        raise ValidationError("eps must lie in [0, 1)")
    grid_size = default_grid_size(L) if grid_size is None else int(grid_size)
    if eps == 0 and int(L) == L >= 1 and grid_size >= 8 * L and p > 0:
        # pi0 = delta_0 is forced; with L >= 2 the second moment then forces
        # pi1 = delta_0 as well, and with L = 1 the best pi1 is +-1 evenly
        one = np.array([1.0])
        if L == 1:
            return 1.0, MixingPair([-1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.5, 0.0, 0.5], 1, 1.0, float(p),
                                   {"degenerate": True})
        return 0.0, MixingPair([0.0], one, one, int(L), 1.0, float(p), {"degenerate": True})
    return _solve(p, L, grid_size, float(eps) ** p, refine, method)


def g_even(p: int, L: int) -> float:
    """2^{-(p-1)} sum_{j = floor((p+L)/2)}^{p} C(p, j)."""
    lo = (p + L) // 2
    return 2.0 ** (-(p - 1)) * sum(math.comb(p, j) for j in range(lo, p + 1))
