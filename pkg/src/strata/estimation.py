"""Stratified mean and covariance estimators, Wald statistic and chi-square region."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .membership import SampleBatch, extract_group
from .population import PopulationSpec

WEIGHT_KINDS = ("empirical", "known", "perturbed")
PERTURB_EXPONENT = -0.75
PIVOT_TOL = 1e-12


class EstimationError(ValueError):
    pass


class InsufficientGroupSize(EstimationError):
    pass


class EmptyGroup(InsufficientGroupSize):
    pass


class SingularCovariance(EstimationError):
    pass


class DimensionError(EstimationError):
    pass


@dataclass(frozen=True)
class WeightScheme:
    """How the group weights lambda_n^s are formed.

    ``empirical`` uses N_n^s / n, ``known`` uses P(S=s), and ``perturbed``
    uses P(S=s) + n**-0.75 * U_s with U_s ~ Uniform(-1, 1), renormalized.
    """

    kind: str = "empirical"

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise EstimationError(f"unknown weight scheme {self.kind!r}; known: {WEIGHT_KINDS}")


@dataclass(frozen=True, eq=False)
class EstimateReport:
    n: int
    counts: np.ndarray  # (xi,)
    weights: np.ndarray  # (xi,)
    group_means: np.ndarray  # (xi, d)
    group_covs: np.ndarray  # (xi, d, d)
    stratified_mean: np.ndarray  # (d,)

    @property
    def dim(self) -> int:
        return self.stratified_mean.size

    def to_dict(self) -> dict:
        return {
            "n": int(self.n),
            "counts": self.counts.tolist(),
            "weights": self.weights.tolist(),
            "group_means": self.group_means.tolist(),
            "group_covs": self.group_covs.tolist(),
            "stratified_mean": self.stratified_mean.tolist(),
        }


def _as_rows(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionError("values must be a list of d-vectors")
    return x


def group_mean(values) -> np.ndarray:
    x = _as_rows(values)
    if x.shape[0] == 0:
        raise EmptyGroup("group mean of an empty sample")
    return x.mean(axis=0)


def group_covariance(values) -> np.ndarray:
    """Unbiased sample covariance (divisor m - 1), centred in a first pass."""
    x = _as_rows(values)
    m = x.shape[0]
    if m < 2:
        raise InsufficientGroupSize(f"covariance needs at least 2 observations, got {m}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (m - 1)
    return (cov + cov.T) / 2


def compute_weights(scheme: WeightScheme, counts, n: int, spec: PopulationSpec, rng=None) -> np.ndarray:
    counts = np.asarray(counts)
    if n < 1:
        raise EstimationError("n must be at least 1")
    if counts.sum() != n:
        raise EstimationError(f"counts sum to {counts.sum()}, expected n={n}")
    if scheme.kind == "empirical":
        return counts / n
    if scheme.kind == "known":
        return spec.group_probs.copy()
    if rng is None:
        raise EstimationError("perturbed weights need a random generator")
    u = rng.uniform(-1.0, 1.0, spec.num_groups)
    raw = np.clip(spec.group_probs + n**PERTURB_EXPONENT * u, 0.0, None)
    total = raw.sum()
    if total == 0:
        return spec.group_probs.copy()
    return raw / total


def stratified_mean(group_means, weights) -> np.ndarray:
    means = np.asarray(group_means, dtype=float)
    w = np.asarray(weights, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    if means.shape[0] != w.size:
        raise DimensionError(f"{means.shape[0]} group means but {w.size} weights")
    return w @ means


def estimate(batch: SampleBatch, scheme: WeightScheme, spec: PopulationSpec, rng=None) -> EstimateReport:
    """All per-group and pooled estimates for one batch.

    Raises InsufficientGroupSize (or its subclass EmptyGroup) when a group
    has fewer than two observations.
    """
    views = [extract_group(batch, s) for s in range(1, batch.num_groups + 1)]
    for v in views:
        if len(v) == 0:
            raise EmptyGroup(f"group {v.group} has no observations")
    means = np.array([group_mean(v.values) for v in views])
    covs = np.array([group_covariance(v.values) for v in views])
    weights = compute_weights(scheme, batch.counts, batch.n, spec, rng)
    return EstimateReport(
        n=batch.n,
        counts=batch.counts.copy(),
        weights=weights,
        group_means=means,
        group_covs=covs,
        stratified_mean=stratified_mean(means, weights),
    )


def wald_matrix(report: EstimateReport) -> np.ndarray:
    """sum_s n * lambda_s**2 / N_s * Sigma_hat_s, the variance estimate of sqrt(n) * mean."""
    counts = report.counts
    if np.any(counts < 2):
        raise InsufficientGroupSize(f"every group needs >= 2 observations, counts={counts.tolist()}")
    scale = report.n * report.weights**2 / counts
    return np.einsum("s,sij->ij", scale, report.group_covs)


def _cholesky(m: np.ndarray) -> np.ndarray:
    top = float(np.max(np.diag(m))) if m.size else 0.0
    if not top > 0:
        raise SingularCovariance("pooled covariance is zero")
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularCovariance("pooled covariance is not positive definite") from None
    if np.min(np.diag(chol)) ** 2 <= PIVOT_TOL * top:
        raise SingularCovariance("pooled covariance is numerically singular")
    return chol


def wald_statistic(report: EstimateReport, target) -> float:
    target = np.atleast_1d(np.asarray(target, dtype=float))
    if target.shape != report.stratified_mean.shape:
        raise DimensionError(f"target shape {target.shape} vs mean shape {report.stratified_mean.shape}")
    chol = _cholesky(wald_matrix(report))
    z = np.linalg.solve(chol, report.stratified_mean - target)
    return float(report.n * (z @ z))


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0:
        return 0.0
    if x < a + 1:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def regularized_gamma_q(a: float, x: float) -> float:
    if x <= 0:
        return 1.0
    if x < a + 1:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _gamma_series(a, x):
    term = total = 1.0 / a
    ap = a
    for _ in range(10_000):
        ap += 1
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x):
    # modified Lentz on the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1 - a
    c = 1 / tiny
    d = 1 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1 / d
        delta = d * c
        h *= delta
        if abs(delta - 1) < 1e-17:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi_square_cdf(q: float, d: int) -> float:
    return regularized_gamma_p(d / 2, q / 2)


def chi_square_pdf(q: float, d: int) -> float:
    if q <= 0:
        return 0.0 if d != 2 else 0.5
    k = d / 2
    return math.exp((k - 1) * math.log(q) - q / 2 - k * math.log(2) - math.lgamma(k))


def chi_square_quantile(p: float, d: int) -> float:
    """q with P(chi2_d < q) = p.

    Wilson-Hilferty start, then Newton steps on the regularized incomplete
    gamma, kept inside a bisection bracket.
    """
    if not 0 <= p < 1:
        raise EstimationError(f"probability must lie in [0, 1), got {p}")
    if int(d) != d or d < 1:
        raise EstimationError(f"degrees of freedom must be a positive integer, got {d}")
    if p == 0:
        return 0.0
    a = d / 2
    upper = p > 0.5

    def excess(q):
        # sign-consistent with cdf(q) - p; tail form keeps precision near p = 1
        if upper:
            return (1 - p) - regularized_gamma_q(a, q / 2)
        return regularized_gamma_p(a, q / 2) - p

    z = NormalDist().inv_cdf(p)
    c = 2 / (9 * d)
    q = d * (1 - c + z * math.sqrt(c)) ** 3
    if not q > 0:
        q = min(1.0, d)
    lo, hi = 0.0, max(2 * q, 1.0)
    while excess(hi) < 0:
        lo, hi = hi, 2 * hi
    for _ in range(100):
        f = excess(q)
        if f == 0:
            return q
        if f < 0:
            lo = max(lo, q)
        else:
            hi = min(hi, q)
        pdf = chi_square_pdf(q, d)
        step = f / pdf if pdf > 0 else math.inf
        nxt = q - step
        if not lo < nxt < hi:
            nxt = (lo + hi) / 2
        if abs(nxt - q) <= 1e-15 * max(q, 1e-300) or hi - lo <= 1e-15 * hi:
            return nxt
        q = nxt
    return q


def region_contains(report: EstimateReport, target, alpha: float) -> bool:
    """True iff the Wald statistic at ``target`` is below the 1 - alpha chi-square quantile."""
    if not 0 < alpha < 1:
        raise EstimationError(f"alpha must lie in (0, 1), got {alpha}")
    return wald_statistic(report, target) < chi_square_quantile(1 - alpha, report.dim)
