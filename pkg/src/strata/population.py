"""Joint law of (Y, S): group probabilities and per-group distributions.

Every distribution here has closed-form conditional moments, so the same
objects serve both as samplers and as the ground-truth oracle for the
Monte Carlo experiments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np

PROB_TOL = 1e-12


class PopulationError(ValueError):
    pass


# name -> builder(**params); the config parser resolves `kind` through this.
DISTRIBUTIONS: dict[str, Callable[..., "GroupDistribution"]] = {}


def register_distribution(name: str):
    def decorator(cls):
        cls.kind = name
        DISTRIBUTIONS[name] = cls.from_params
        return cls

    return decorator


def build_distribution(kind: str, **params) -> "GroupDistribution":
    try:
        builder = DISTRIBUTIONS[kind]
    except KeyError:
        raise PopulationError(
            f"unknown distribution kind {kind!r}; known: {sorted(DISTRIBUTIONS)}"
        ) from None
    return builder(**params)


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Return F with F @ F.T == cov; rank-deficient covariances are allowed."""
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, q = np.linalg.eigh(cov)
    scale = max(float(w.max()), 0.0)
    if w.min() < -1e-10 * max(scale, 1.0):
        raise PopulationError("covariance is not positive semi-definite")
    return q * np.sqrt(np.clip(w, 0.0, None))


class GroupDistribution:
    """Law of Y given S = s.

    Subclasses set ``mean`` and ``cov`` (the analytic moments) and implement
    ``sample(rng, size)`` returning a ``(size, dim)`` array.
    """

    kind: ClassVar[str]
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_params(cls, **params):
        return cls(**params)


@register_distribution("gaussian")
@dataclass(frozen=True, eq=False)
class Gaussian(GroupDistribution):
    mean: np.ndarray
    cov: np.ndarray
    _factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise PopulationError(
                f"gaussian covariance shape {cov.shape} does not match mean of length {mean.size}"
            )
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise PopulationError("gaussian covariance must be symmetric")
        cov = (cov + cov.T) / 2
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", _psd_factor(cov))

    def sample(self, rng, size):
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self._factor.T

    def params(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@register_distribution("uniform")
@dataclass(frozen=True, eq=False)
class UniformBox(GroupDistribution):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise PopulationError("uniform lo and hi must be vectors of equal length")
        if np.any(hi < lo):
            raise PopulationError("uniform requires lo <= hi in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def mean(self):
        return (self.lo + self.hi) / 2

    @property
    def cov(self):
        return np.diag((self.hi - self.lo) ** 2 / 12)

    def sample(self, rng, size):
        return self.lo + (self.hi - self.lo) * rng.random((size, self.lo.size))

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@register_distribution("exponential")
@dataclass(frozen=True, eq=False)
class ShiftedExponential(GroupDistribution):
    """One-dimensional ``offset + Exp(rate)``."""

    rate: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise PopulationError("exponential rate must be positive")
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def mean(self):
        return np.array([self.offset + 1 / self.rate])

    @property
    def cov(self):
        return np.array([[1 / self.rate**2]])

    def sample(self, rng, size):
        return self.offset + rng.exponential(1 / self.rate, (size, 1))

    def params(self):
        return {"rate": self.rate, "offset": self.offset}


@dataclass(frozen=True, eq=False)
class PopulationSpec:
    group_probs: np.ndarray
    groups: tuple[GroupDistribution, ...]

    def __post_init__(self):
        probs = np.atleast_1d(np.asarray(self.group_probs, dtype=float))
        groups = tuple(self.groups)
        if probs.ndim != 1 or probs.size == 0:
            raise PopulationError("group_probs must be a non-empty vector")
        if probs.size != len(groups):
            raise PopulationError(
                f"{probs.size} group probabilities but {len(groups)} group distributions"
            )
        if np.any(probs <= 0):
            raise PopulationError("group_probs must be strictly positive")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise PopulationError("group_probs must sum to 1")
        dims = {g.dim for g in groups}
        if len(dims) != 1:
            raise PopulationError(f"groups have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "group_probs", probs)
        object.__setattr__(self, "groups", groups)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def dim(self) -> int:
        return self.groups[0].dim


def true_mean(spec: PopulationSpec) -> np.ndarray:
    """E(Y) = sum_s P(S=s) E(Y | S=s)."""
    return sum(p * g.mean for p, g in zip(spec.group_probs, spec.groups))


def asymptotic_covariance(spec: PopulationSpec, fractions) -> np.ndarray:
    """Limit covariance of sqrt(n) (stratified mean - E(Y)).

    ``fractions[s]`` is the limit of N_n^s / n.  Each must lie in (0, 1),
    except that a single-group population takes ``fractions == [1]``.
    """
    f = np.atleast_1d(np.asarray(fractions, dtype=float))
    if f.shape != (spec.num_groups,):
        raise PopulationError(f"expected {spec.num_groups} fractions, got shape {f.shape}")
    if spec.num_groups == 1:
        if not 0 < f[0] <= 1:
            raise PopulationError("single-group fraction must lie in (0, 1]")
    elif np.any((f <= 0) | (f >= 1)):
        raise PopulationError("fractions must lie strictly inside (0, 1)")
    v = sum(p**2 / fs * g.cov for p, fs, g in zip(spec.group_probs, f, spec.groups))
    return (v + v.T) / 2


def sample_conditional(group: GroupDistribution, rng: np.random.Generator) -> np.ndarray:
    """One draw of Y given the group."""
    return group.sample(rng, 1)[0]
