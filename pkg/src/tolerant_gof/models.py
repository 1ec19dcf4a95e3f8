"""Observation models, hypotheses and reproducible random streams."""

from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import ValidationError

SIMPLEX_TOL = 1e-12
_U64 = (1 << 64) - 1


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


def _check_probability_vector(name: str, vec: np.ndarray) -> None:
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(vec < 0) or np.any(vec > 1):
        raise ValidationError(f"{name} entries must lie in [0, 1]")
    if abs(math.fsum(vec) - 1.0) > SIMPLEX_TOL:
        raise ValidationError(f"{name} must sum to 1 within {SIMPLEX_TOL}")


@dataclass(frozen=True)
class GaussianSequenceSpec:
    """X ~ N(v, sigma^2 I_d).

    ``sigma = 0`` is accepted so that sampling can be golden-tested; every
    statistical routine refuses it.  ``sigma > 1`` only warns.
    """

    d: int
    sigma: float
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError("d must be a positive integer")
        object.__setattr__(self, "d", int(self.d))
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValidationError("sigma must be finite and non-negative")
        if self.sigma > 1:
            warnings.warn("sigma > 1 is outside the nominal range (0, 1]", stacklevel=3)
        v = np.zeros(self.d) if self.v is None else self.v
        v = _frozen(v)
        if v.size != self.d:
            raise ValidationError(f"v has {v.size} entries, expected d={self.d}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("v must be finite")
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class HypothesisPair:
    """H0: ||v||_p <= eps0 against H1: ||v||_p >= eps1.

    With ``direction="equivalence"`` the roles are swapped: the null is the
    far set ``||v||_p >= eps1``.
    """

    p: float
    eps0: float
    eps1: float
    direction: str = "tolerant"

    def __post_init__(self):
        for name in ("p", "eps0", "eps1"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.p < 1:
            raise ValidationError("p must be >= 1")
        if not 0 <= self.eps0 <= self.eps1:
            raise ValidationError("need 0 <= eps0 <= eps1")
        if self.direction not in ("tolerant", "equivalence"):
            raise ValidationError("direction must be 'tolerant' or 'equivalence'")


@dataclass(frozen=True)
class MultinomialSpec:
    n: int
    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        F, G = _frozen(self.F), _frozen(self.G)
        if F.size < 1 or F.size != G.size:
            raise ValidationError("F and G must be non-empty and of equal length")
        _check_probability_vector("F", F)
        _check_probability_vector("G", G)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)

    @property
    def d(self) -> int:
        return self.F.size


@dataclass(frozen=True)
class PoissonSequenceSpec:
    """X_i ~ Poi(n * lam_i) with rates normalized to the simplex."""

    n: float
    lam: np.ndarray
    lam0: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.n) and self.n > 0):
            raise ValidationError("n must be a positive real")
        lam, lam0 = _frozen(self.lam), _frozen(self.lam0)
        if lam.size < 1 or lam.size != lam0.size:
            raise ValidationError("lam and lam0 must be non-empty and of equal length")
        for name, vec in (("lam", lam), ("lam0", lam0)):
            if np.any(vec <= 0):
                raise ValidationError(f"{name} must be strictly positive")
            _check_probability_vector(name, vec)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "lam0", lam0)

    @property
    def d(self) -> int:
        return self.lam.size


@dataclass(frozen=True)
class FunctionSample:
    """Either a discretized white-noise path or an iid sample on [0, 1].

    Use :meth:`white_noise_path` or :meth:`density_sample` to build one.
    """

    kind: str
    increments: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    observations: Optional[np.ndarray] = None
    reference: Optional[Callable] = None

    def __post_init__(self):
        if self.kind == "white_noise_path":
            inc = _frozen(self.increments)
            if inc.size < 1:
                raise ValidationError("white-noise increments must have length m >= 1")
            if self.sigma is None or not self.sigma > 0:
                raise ValidationError("white-noise path needs sigma > 0")
            object.__setattr__(self, "increments", inc)
        elif self.kind == "density_sample":
            obs = _frozen(self.observations)
            if obs.size < 1:
                raise ValidationError("density sample is empty")
            if np.any(obs < 0) or np.any(obs > 1) or not np.all(np.isfinite(obs)):
                raise ValidationError("density observations must lie in [0, 1]")
            object.__setattr__(self, "observations", obs)
        else:
            raise ValidationError(f"unknown FunctionSample kind {self.kind!r}")

    @classmethod
    def white_noise_path(cls, increments, sigma: float) -> "FunctionSample":
        return cls("white_noise_path", increments=increments, sigma=float(sigma))

    @classmethod
    def density_sample(cls, observations, reference: Optional[Callable] = None) -> "FunctionSample":
        return cls("density_sample", observations=observations, reference=reference)

    @property
    def m(self) -> int:
        return self.increments.size

    @property
    def n_equiv(self) -> float:
        # sigma = n^{-1/2} identification
        return self.sigma ** -2

    @property
    def n(self) -> int:
        return self.observations.size


def stable_hash(*labels: Any) -> int:
    """64-bit hash of ``labels`` that does not depend on PYTHONHASHSEED."""
    h = hashlib.blake2b(repr(labels).encode(), digest_size=8)
    return struct.unpack("<Q", h.digest())[0]


@dataclass(frozen=True)
class RandomStream:
    """Counter-style stream: draws depend only on (master_seed, stream_index)."""

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_index"):
            val = getattr(self, name)
            if int(val) != val or not 0 <= val <= _U64:
                raise ValidationError(f"{name} must be a 64-bit unsigned integer")
            object.__setattr__(self, name, int(val))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *labels: Any) -> "RandomStream":
        return RandomStream(self.master_seed, stable_hash(self.stream_index, *labels))


def sample_gaussian_sequence(spec: GaussianSequenceSpec, rng: RandomStream, size: Optional[int] = None) -> np.ndarray:
    """Draw v + sigma * Z.  With ``size`` a (size, d) batch is returned."""
    shape = (spec.d,) if size is None else (int(size), spec.d)
    if spec.sigma == 0:
        return np.broadcast_to(spec.v, shape).copy()
    z = rng.generator().standard_normal(shape)
    return spec.v + spec.sigma * z


def sample_multinomial(spec: MultinomialSpec, rng: RandomStream, size: Optional[int] = None) -> np.ndarray:
    F = np.asarray(spec.F) / math.fsum(spec.F)
    return rng.generator().multinomial(spec.n, F, size=size)


def sample_poisson_sequence(spec: PoissonSequenceSpec, rng: RandomStream, size: Optional[int] = None) -> np.ndarray:
    shape = (spec.d,) if size is None else (int(size), spec.d)
    return rng.generator().poisson(spec.n * np.broadcast_to(spec.lam, shape))


def norm_lp(v, p: float) -> float:
    """(sum |v_i|^p)^(1/p); ``p = inf`` gives the max norm."""
    if not p >= 1:
        raise ValidationError("p must be >= 1")
    a = np.abs(np.asarray(v, dtype=float)).reshape(-1)
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    # rescale by the max entry so large p cannot overflow
    top = a.max()
    if top == 0:
        return 0.0
    return float(top * math.fsum((a / top) ** p) ** (1.0 / p))


def spec_from_json(obj: dict):
    """Build a model spec from its JSON form ({"model": ..., fields})."""
    obj = dict(obj)
    model = obj.pop("model", None)
    if model == "gaussian_sequence":
        return GaussianSequenceSpec(d=obj["d"], sigma=obj["sigma"], v=obj.get("v"))
    if model == "multinomial":
        return MultinomialSpec(n=obj["n"], F=obj["F"], G=obj["G"])
    if model == "poisson":
        return PoissonSequenceSpec(n=obj["n"], lam=obj["lambda"], lam0=obj["lambda0"])
    if model == "white_noise":
        return FunctionSample.white_noise_path(obj["increments"], obj["sigma"])
    if model == "density":
        return FunctionSample.density_sample(obj["observations"])
    raise ValidationError(f"unknown model {model!r}")


def spec_to_json(spec) -> dict:
    if isinstance(spec, GaussianSequenceSpec):
        return {"model": "gaussian_sequence", "d": spec.d, "sigma": spec.sigma, "v": spec.v.tolist()}
    if isinstance(spec, MultinomialSpec):
        return {"model": "multinomial", "n": spec.n, "F": spec.F.tolist(), "G": spec.G.tolist()}
    if isinstance(spec, PoissonSequenceSpec):
        return {"model": "poisson", "n": spec.n, "lambda": spec.lam.tolist(), "lambda0": spec.lam0.tolist()}
    if isinstance(spec, FunctionSample) and spec.kind == "white_noise_path":
        return {"model": "white_noise", "increments": spec.increments.tolist(), "sigma": spec.sigma}
    if isinstance(spec, FunctionSample):
        return {"model": "density", "observations": spec.observations.tolist()}
    raise ValidationError(f"cannot serialize {type(spec).__name__}")
