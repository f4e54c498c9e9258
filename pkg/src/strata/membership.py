"""Membership sequences S_1..S_n, group sizes and per-group extraction.

Labels are 1-based (groups 1..num_groups) everywhere in the public API.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .population import PROB_TOL, PopulationSpec

KINDS = ("iid", "schedule", "incentivized")


class MembershipError(ValueError):
    pass


def _check_probs(probs, what):
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    if probs.ndim != 1 or probs.size == 0:
        raise MembershipError(f"{what} must be a non-empty vector")
    if np.any(probs <= 0):
        raise MembershipError(f"{what} must be strictly positive")
    if abs(probs.sum() - 1.0) > PROB_TOL:
        raise MembershipError(f"{what} must sum to 1")
    return probs


@dataclass(frozen=True, eq=False)
class MembershipProcess:
    """Generator of group labels.

    * ``iid``: every S_i drawn independently from ``probs``.
    * ``schedule``: ``pattern`` repeated; no randomness.
    * ``incentivized``: independent draws from ``base_probs`` up to index
      ``phase_start``, then from ``base_probs`` with ``boost_group`` scaled by
      ``boost_factor`` and renormalized.
    """

    kind: str
    num_groups: int
    probs: np.ndarray | None = None
    pattern: tuple[int, ...] | None = None
    base_probs: np.ndarray | None = None
    boost_group: int | None = None
    boost_factor: float | None = None
    phase_start: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MembershipError(f"unknown membership kind {self.kind!r}; known: {KINDS}")
        xi = int(self.num_groups)
        if xi < 1:
            raise MembershipError("num_groups must be positive")
        object.__setattr__(self, "num_groups", xi)
        if self.kind == "iid":
            probs = _check_probs(self.probs, "iid probs")
            if probs.size != xi:
                raise MembershipError(f"iid probs has {probs.size} entries, expected {xi}")
            object.__setattr__(self, "probs", probs)
        elif self.kind == "schedule":
            if self.pattern is None or len(self.pattern) == 0:
                raise MembershipError("schedule pattern must be non-empty")
            pattern = tuple(int(s) for s in self.pattern)
            if any(s < 1 or s > xi for s in pattern):
                raise MembershipError(f"schedule labels must lie in 1..{xi}")
            missing = set(range(1, xi + 1)) - set(pattern)
            if missing:
                raise MembershipError(f"schedule pattern never visits groups {sorted(missing)}")
            object.__setattr__(self, "pattern", pattern)
        else:
            base = _check_probs(self.base_probs, "incentivized base_probs")
            if base.size != xi:
                raise MembershipError(f"base_probs has {base.size} entries, expected {xi}")
            if self.boost_group is None or not 1 <= int(self.boost_group) <= xi:
                raise MembershipError(f"boost_group must lie in 1..{xi}")
            if self.boost_factor is None or not float(self.boost_factor) > 0:
                raise MembershipError("boost_factor must be positive")
            if self.phase_start is None or int(self.phase_start) < 0:
                raise MembershipError("phase_start must be a non-negative integer")
            object.__setattr__(self, "base_probs", base)
            object.__setattr__(self, "boost_group", int(self.boost_group))
            object.__setattr__(self, "boost_factor", float(self.boost_factor))
            object.__setattr__(self, "phase_start", int(self.phase_start))

    @classmethod
    def iid(cls, probs):
        probs = np.asarray(probs, dtype=float)
        return cls("iid", probs.size, probs=probs)

    @classmethod
    def schedule(cls, pattern, num_groups=None):
        pattern = tuple(pattern)
        return cls("schedule", num_groups or max(pattern), pattern=pattern)

    @classmethod
    def incentivized(cls, base_probs, boost_group, boost_factor, phase_start):
        base = np.asarray(base_probs, dtype=float)
        return cls(
            "incentivized",
            base.size,
            base_probs=base,
            boost_group=boost_group,
            boost_factor=boost_factor,
            phase_start=phase_start,
        )

    @property
    def boosted_probs(self) -> np.ndarray:
        p = self.base_probs.copy()
        p[self.boost_group - 1] *= self.boost_factor
        return p / p.sum()

    def limiting_fractions(self) -> np.ndarray:
        """Almost-sure limit of N_n^s / n."""
        if self.kind == "iid":
            return self.probs.copy()
        if self.kind == "schedule":
            return group_counts(self.pattern, self.num_groups) / len(self.pattern)
        return self.boosted_probs

    def params(self) -> dict:
        if self.kind == "iid":
            return {"probs": self.probs.tolist()}
        if self.kind == "schedule":
            return {"pattern": list(self.pattern)}
        return {
            "base_probs": self.base_probs.tolist(),
            "boost_group": self.boost_group,
            "boost_factor": self.boost_factor,
            "phase_start": self.phase_start,
        }


def _categorical(rng, probs, size):
    # inverse-cdf on one uniform per unit keeps every S_i an independent draw
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right") + 1


def generate_memberships(process: MembershipProcess, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise MembershipError("n must be at least 1")
    if process.kind == "schedule":
        reps = -(-n // len(process.pattern))
        return np.tile(np.asarray(process.pattern, dtype=np.int64), reps)[:n]
    if process.kind == "iid":
        return _categorical(rng, process.probs, n).astype(np.int64)
    head = min(n, process.phase_start)
    ss = np.empty(n, dtype=np.int64)
    ss[:head] = _categorical(rng, process.base_probs, head)
    ss[head:] = _categorical(rng, process.boosted_probs, n - head)
    return ss


def extraction_indices(ss, s: int) -> np.ndarray:
    """1-based positions i with S_i == s, increasing (the K_j^s)."""
    return np.flatnonzero(np.asarray(ss) == s) + 1


def group_counts(ss, num_groups: int) -> np.ndarray:
    ss = np.asarray(ss, dtype=np.int64)
    if ss.size and (ss.min() < 1 or ss.max() > num_groups):
        raise MembershipError(f"labels must lie in 1..{num_groups}")
    return np.bincount(ss, minlength=num_groups + 1)[1:]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    ys: np.ndarray  # (n, d)
    ss: np.ndarray  # (n,) labels in 1..num_groups
    counts: np.ndarray  # (num_groups,)

    @property
    def n(self) -> int:
        return self.ss.size

    @property
    def num_groups(self) -> int:
        return self.counts.size


@dataclass(frozen=True, eq=False)
class GroupView:
    group: int
    indices: np.ndarray  # 1-based K_1^s < K_2^s < ...
    values: np.ndarray  # (N_n^s, d), values[j] == ys[indices[j] - 1]

    def __len__(self):
        return self.indices.size


def draw_batch(spec: PopulationSpec, process: MembershipProcess, n: int, rng: np.random.Generator) -> SampleBatch:
    """Draw S_1..S_n, then each Y_i from the law of its group.

    Within a group the draws are iid and exchangeable, so filling all
    positions of group s from one vectorised call gives the same joint law
    as drawing unit by unit.
    """
    if process.num_groups != spec.num_groups:
        raise MembershipError(
            f"process has {process.num_groups} groups, population has {spec.num_groups}"
        )
    ss = generate_memberships(process, n, rng)
    counts = group_counts(ss, spec.num_groups)
    ys = np.empty((n, spec.dim))
    for s, group in enumerate(spec.groups, start=1):
        if counts[s - 1]:
            ys[ss == s] = group.sample(rng, int(counts[s - 1]))
    return SampleBatch(ys=ys, ss=ss, counts=counts)


def extract_group(batch: SampleBatch, s: int) -> GroupView:
    if not 1 <= s <= batch.num_groups:
        raise MembershipError(f"group label {s} outside 1..{batch.num_groups}")
    idx = extraction_indices(batch.ss, s)
    return GroupView(group=s, indices=idx, values=batch.ys[idx - 1])
