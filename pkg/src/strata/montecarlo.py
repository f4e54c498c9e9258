"""Seeded replication engine for the coverage, consistency, CLT,
independence and random-index experiments.

Replication ``r`` at sample size ``n`` always draws from its own Philox
stream keyed on ``(base_seed, r, n)``, so results do not depend on the
number of workers or on scheduling order.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    InsufficientGroupSize,
    SingularCovariance,
    WeightScheme,
    chi_square_quantile,
    estimate,
    wald_statistic,
)
from .membership import MembershipProcess, draw_batch
from .population import PopulationSpec, asymptotic_covariance, true_mean

EXPERIMENTS = ("coverage", "consistency", "clt", "independence", "random_index")
THREADS_ENV = "STRATA_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: PopulationSpec
    process: MembershipProcess
    weight_scheme: WeightScheme
    n_grid: tuple[int, ...]
    replications: int
    alpha: float = 0.05
    base_seed: int = 0
    experiment: str = "coverage"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {EXPERIMENTS}")
        grid = tuple(int(n) for n in self.n_grid)
        if not grid:
            raise ConfigError("n_grid must be non-empty")
        if grid[0] < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("n_grid must be strictly increasing positive integers")
        if int(self.replications) < 1:
            raise ConfigError("replications must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        if self.process.num_groups != self.spec.num_groups:
            raise ConfigError("membership process and population disagree on the number of groups")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        object.__setattr__(self, "alpha", float(self.alpha))

    def replace(self, **changes) -> "ExperimentConfig":
        fields = dict(
            spec=self.spec,
            process=self.process,
            weight_scheme=self.weight_scheme,
            n_grid=self.n_grid,
            replications=self.replications,
            alpha=self.alpha,
            base_seed=self.base_seed,
            experiment=self.experiment,
        )
        fields.update(changes)
        return ExperimentConfig(**fields)


@dataclass
class ExperimentResult:
    """Per-n aggregates.

    ``rows`` holds one flat dict of scalars per n (the CSV table);
    ``details`` holds the matching structured diagnostics (matrices,
    per-group and per-statistic breakdowns).
    """

    experiment: str
    replications: int
    rows: list[dict] = field(default_factory=list)
    details: list[dict] = field(default_factory=list)

    def row(self, n: int) -> dict:
        for r in self.rows:
            if r["n"] == n:
                return r
        raise KeyError(n)

    def detail(self, n: int) -> dict:
        for d in self.details:
            if d["n"] == n:
                return d
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "replications": self.replications,
            "rows": self.rows,
            "details": self.details,
        }


def replication_rng(base_seed: int, r: int, n: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(base_seed), int(r), int(n)])
    return np.random.Generator(np.random.Philox(seq))


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _map_replications(fn, R: int, workers: int | None) -> list:
    """[fn(r) for r in range(R)], possibly on a thread pool; order is always r-order."""
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or R < 2:
        return [fn(r) for r in range(R)]
    chunks = np.array_split(np.arange(R), min(workers, R))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: [fn(int(r)) for r in idx], chunks)
        return [rec for part in parts for rec in part]


def rate_stderr(p: float | None, r_eff: int) -> float | None:
    if p is None or r_eff == 0:
        return None
    return math.sqrt(p * (1 - p) / r_eff)


def _estimate_or_reason(config, n, r):
    rng = replication_rng(config.base_seed, r, n)
    batch = draw_batch(config.spec, config.process, n, rng)
    try:
        report = estimate(batch, config.weight_scheme, config.spec, rng)
    except InsufficientGroupSize:
        return batch, None, "small_group"
    return batch, report, None


def _coverage_record(config, n, r, target):
    _, report, reason = _estimate_or_reason(config, n, r)
    if reason:
        return reason, math.nan
    try:
        return None, wald_statistic(report, target)
    except SingularCovariance:
        return "singular", math.nan


def coverage_statistics(config: ExperimentConfig, workers=None) -> dict[int, tuple[np.ndarray, list]]:
    """Wald statistics at E(Y) for every replication: {n: (stats, discard_reasons)}.

    Discarded replications carry NaN and a reason string.
    """
    target = true_mean(config.spec)
    out = {}
    for n in config.n_grid:
        recs = _map_replications(lambda r: _coverage_record(config, n, r, target), config.replications, workers)
        out[n] = (np.array([s for _, s in recs]), [why for why, _ in recs])
    return out


def _coverage_rows(n, stats, reasons, alpha, d):
    q = chi_square_quantile(1 - alpha, d)
    kept = stats[~np.isnan(stats)]
    r_eff = kept.size
    cov = float(np.mean(kept < q)) if r_eff else None
    row = {
        "n": n,
        "coverage": cov,
        "mc_stderr": rate_stderr(cov, r_eff),
        "discarded": len(stats) - r_eff,
        "r_effective": r_eff,
        "discarded_small_group": reasons.count("small_group"),
        "discarded_singular": reasons.count("singular"),
        "quantile": q,
        "mean_statistic": float(kept.mean()) if r_eff else None,
    }
    return row


def run_coverage(config: ExperimentConfig, workers=None) -> ExperimentResult:
    res = ExperimentResult("coverage", config.replications)
    d = config.spec.dim
    for n, (stats, reasons) in coverage_statistics(config, workers).items():
        row = _coverage_rows(n, stats, reasons, config.alpha, d)
        res.rows.append(row)
        res.details.append({"n": n, "alpha": config.alpha, "dim": d, "target": true_mean(config.spec).tolist()})
    return res


def _error_record(config, n, r, target):
    _, report, reason = _estimate_or_reason(config, n, r)
    if reason:
        return None
    return report.stratified_mean - target


def _collect_errors(config, n, workers):
    target = true_mean(config.spec)
    recs = _map_replications(lambda r: _error_record(config, n, r, target), config.replications, workers)
    errs = np.array([e for e in recs if e is not None]).reshape(-1, config.spec.dim)
    return errs, len(recs) - errs.shape[0]


def _asymptotic_cov(config):
    return asymptotic_covariance(config.spec, config.process.limiting_fractions())


def run_consistency(config: ExperimentConfig, workers=None) -> ExperimentResult:
    res = ExperimentResult("consistency", config.replications)
    v = _asymptotic_cov(config)
    prev = None
    for n in config.n_grid:
        errs, discarded = _collect_errors(config, n, workers)
        norms = np.linalg.norm(errs, axis=1)
        r_eff = norms.size
        mean_err = float(norms.mean()) if r_eff else None
        row = {
            "n": n,
            "mean_error_norm": mean_err,
            "mc_stderr": float(norms.std(ddof=1) / math.sqrt(r_eff)) if r_eff > 1 else None,
            "discarded": discarded,
            "r_effective": r_eff,
            "error_bound": 5 * math.sqrt(float(np.trace(v)) / n),
            "decreasing": None if prev is None or mean_err is None else bool(mean_err < prev),
        }
        prev = mean_err
        res.rows.append(row)
        res.details.append({"n": n, "max_error_norm": float(norms.max()) if r_eff else None})
    return res


def _moments(z: np.ndarray):
    """Per-coordinate standardized skewness and kurtosis (not excess)."""
    c = z - z.mean(axis=0)
    m2 = (c**2).mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = (c**3).mean(axis=0) / m2**1.5
        kurt = (c**4).mean(axis=0) / m2**2
    return skew, kurt


def run_clt(config: ExperimentConfig, workers=None) -> ExperimentResult:
    res = ExperimentResult("clt", config.replications)
    v = _asymptotic_cov(config)
    for n in config.n_grid:
        errs, discarded = _collect_errors(config, n, workers)
        z = math.sqrt(n) * errs
        r_eff = z.shape[0]
        if r_eff < 2:
            res.rows.append({"n": n, "discarded": discarded, "r_effective": r_eff})
            res.details.append({"n": n})
            continue
        emp = np.atleast_2d(np.cov(z, rowvar=False))
        skew, kurt = _moments(z)
        # normal-theory standard error of each sample covariance entry
        diag = np.diag(v)
        cov_se = np.sqrt((np.outer(diag, diag) + v**2) / (r_eff - 1))
        res.rows.append(
            {
                "n": n,
                "discarded": discarded,
                "r_effective": r_eff,
                "frobenius_distance": float(np.linalg.norm(emp - v)),
                "max_abs_skewness": float(np.max(np.abs(skew))),
                "max_abs_excess_kurtosis": float(np.max(np.abs(kurt - 3))),
                "empirical_trace": float(np.trace(emp)),
                "asymptotic_trace": float(np.trace(v)),
            }
        )
        res.details.append(
            {
                "n": n,
                "empirical_mean": z.mean(axis=0).tolist(),
                "empirical_covariance": emp.tolist(),
                "asymptotic_covariance": v.tolist(),
                "covariance_stderr": cov_se.tolist(),
                "skewness": skew.tolist(),
                "kurtosis": kurt.tolist(),
            }
        )
    return res


def _corr(x, y):
    """Pearson correlation; (0.0, False) when either side has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return 0.0, False
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = xc @ xc, yc @ yc
    if sxx == 0 or syy == 0:
        return 0.0, False
    return float(xc @ yc / math.sqrt(sxx * syy)), True


FIRST_J = 3


def _independence_record(config, n, r):
    rng = replication_rng(config.base_seed, r, n)
    batch = draw_batch(config.spec, config.process, n, rng)
    firsts = []
    for s in range(1, batch.num_groups + 1):
        firsts.append(batch.ys[batch.ss == s][:FIRST_J])
    return batch.counts, firsts


def run_independence(config: ExperimentConfig, workers=None) -> ExperimentResult:
    """Correlations between group sizes and extracted values, across replications."""
    res = ExperimentResult("independence", config.replications)
    spec = config.spec
    xi = spec.num_groups
    R = config.replications
    for n in config.n_grid:
        recs = _map_replications(lambda r: _independence_record(config, n, r), R, workers)
        counts = np.array([c for c, _ in recs])
        correlations = []

        def add(name, pairs):
            kept = [(a, b) for a, b in pairs if a is not None and b is not None]
            xs = [a for a, _ in kept]
            ys = [b for _, b in kept]
            rho, defined = _corr(xs, ys)
            correlations.append(
                {"name": name, "value": rho, "defined": defined, "r_effective": len(kept), "discarded": R - len(kept)}
            )

        def y(rec, s, j):
            vals = rec[1][s - 1]
            return vals[j - 1, 0] if vals.shape[0] >= j else None

        for s in range(1, xi + 1):
            add(f"corr(N^{s}, Y^{s}_(1))", [(c[s - 1], y(rec, s, 1)) for c, rec in zip(counts, recs)])
            add(f"corr(Y^{s}_(1), Y^{s}_(2))", [(y(rec, s, 1), y(rec, s, 2)) for rec in recs])
        for s in range(1, xi + 1):
            for t in range(s + 1, xi + 1):
                add(f"corr(Y^{s}_(1), Y^{t}_(1))", [(y(rec, s, 1), y(rec, t, 1)) for rec in recs])

        moments = []
        for s, group in enumerate(spec.groups, start=1):
            for j in range(1, FIRST_J + 1):
                vals = np.array([rec[1][s - 1][j - 1] for rec in recs if rec[1][s - 1].shape[0] >= j])
                m = vals.shape[0]
                if m < 2:
                    moments.append({"group": s, "j": j, "r_effective": m, "discarded": R - m})
                    continue
                mean = vals.mean(axis=0)
                se = np.sqrt(np.diag(group.cov) / m)
                with np.errstate(divide="ignore", invalid="ignore"):
                    z = np.where(se > 0, (mean - group.mean) / se, np.where(mean == group.mean, 0.0, np.inf))
                moments.append(
                    {
                        "group": s,
                        "j": j,
                        "r_effective": m,
                        "discarded": R - m,
                        "mean": mean.tolist(),
                        "analytic_mean": group.mean.tolist(),
                        "mean_z": z.tolist(),
                        "covariance": np.atleast_2d(np.cov(vals, rowvar=False)).tolist(),
                        "analytic_covariance": group.cov.tolist(),
                    }
                )

        defined = [c["value"] for c in correlations if c["defined"]]
        zs = [abs(v) for m in moments for v in m.get("mean_z", [])]
        res.rows.append(
            {
                "n": n,
                "discarded": max(c["discarded"] for c in correlations),
                "max_abs_correlation": max(map(abs, defined)) if defined else 0.0,
                "correlation_bound": 4 / math.sqrt(R),
                "max_abs_mean_z": max(zs) if zs else None,
            }
        )
        res.details.append({"n": n, "correlations": correlations, "moments": moments})
    return res


def _random_index_record(config, r):
    n_max = config.n_grid[-1]
    rng = replication_rng(config.base_seed, r, n_max)
    batch = draw_batch(config.spec, config.process, n_max, rng)
    grid = np.asarray(config.n_grid)
    out = []
    for s, group in enumerate(config.spec.groups, start=1):
        vals = batch.ys[batch.ss == s]
        running = np.cumsum(vals, axis=0) / np.arange(1, vals.shape[0] + 1)[:, None]
        # N_n^s for each n in the grid, from the prefix of the single sequence
        sizes = np.cumsum(batch.ss == s)[grid - 1]
        errs = np.full(grid.size, np.nan)
        ok = sizes > 0
        errs[ok] = np.linalg.norm(running[sizes[ok] - 1] - group.mean, axis=1)
        n_last = int(sizes[-1])
        scaled = math.sqrt(n_last) * (running[n_last - 1] - group.mean) if n_last else None
        out.append((sizes, errs, scaled))
    return out


def run_random_index(config: ExperimentConfig, workers=None) -> ExperimentResult:
    """X_m = running mean of group s, indexed by the random group size N_n^s.

    Each replication is one sequence of length max(n_grid); every grid point
    reads N_n^s and X_{N_n^s} from its prefix.
    """
    res = ExperimentResult("random_index", config.replications)
    spec = config.spec
    grid = config.n_grid
    recs = _map_replications(lambda r: _random_index_record(config, r), config.replications, workers)
    for k, n in enumerate(grid):
        row = {"n": n}
        det = {"n": n, "groups": []}
        discarded = 0
        for s in range(1, spec.num_groups + 1):
            errs = np.array([rec[s - 1][1] for rec in recs])  # (R, len(grid))
            tail = errs[:, k:]
            ok = ~np.isnan(tail).any(axis=1)
            discarded = max(discarded, int((~ok).sum()))
            tail_sup = tail[ok].max(axis=1) if ok.any() else np.array([])
            row[f"tail_sup_error_g{s}"] = float(tail_sup.mean()) if tail_sup.size else None
            det["groups"].append(
                {
                    "group": s,
                    "mean_tail_sup_error": row[f"tail_sup_error_g{s}"],
                    "max_tail_sup_error": float(tail_sup.max()) if tail_sup.size else None,
                    "mean_group_size": float(np.mean([rec[s - 1][0][k] for rec in recs])),
                }
            )
        row["discarded"] = discarded
        res.rows.append(row)
        res.details.append(det)

    last = res.details[-1]
    for s, group in enumerate(spec.groups, start=1):
        scaled = np.array([rec[s - 1][2] for rec in recs if rec[s - 1][2] is not None]).reshape(-1, spec.dim)
        m = scaled.shape[0]
        info = last["groups"][s - 1]
        info["scaled_r_effective"] = m
        info["scaled_discarded"] = config.replications - m
        if m >= 2:
            info["scaled_mean"] = scaled.mean(axis=0).tolist()
            info["scaled_covariance"] = np.atleast_2d(np.cov(scaled, rowvar=False)).tolist()
            info["analytic_covariance"] = group.cov.tolist()
    return res


RUNNERS = {
    "coverage": run_coverage,
    "consistency": run_consistency,
    "clt": run_clt,
    "independence": run_independence,
    "random_index": run_random_index,
}


def run_experiment(config: ExperimentConfig, workers=None) -> ExperimentResult:
    return RUNNERS[config.experiment](config, workers)
