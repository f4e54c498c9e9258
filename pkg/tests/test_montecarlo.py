import itertools

import numpy as np
import pytest

from strata.estimation import WeightScheme, chi_square_quantile
from strata.membership import MembershipProcess
from strata.montecarlo import (
    ConfigError,
    ExperimentConfig,
    coverage_statistics,
    rate_stderr,
    replication_rng,
    run_clt,
    run_consistency,
    run_coverage,
    run_experiment,
    run_independence,
    run_random_index,
)
from strata.population import Gaussian, PopulationSpec, UniformBox


def config(spec, process, weights="empirical", n_grid=(200,), R=200, experiment="coverage", alpha=0.05, seed=1):
    return ExperimentConfig(spec, process, WeightScheme(weights), n_grid, R, alpha, seed, experiment)


@pytest.fixture
def degenerate_spec():
    return PopulationSpec([0.5, 0.5], [Gaussian([0.0], [[0.0]]), Gaussian([1.0], [[0.0]])])


def test_config_validation(bivariate_spec):
    proc = MembershipProcess.iid([0.5, 0.5])
    for bad in (dict(n_grid=()), dict(n_grid=(10, 10)), dict(R=0), dict(alpha=1.0), dict(seed=-1), dict(experiment="power")):
        with pytest.raises(ConfigError):
            config(bivariate_spec, proc, **bad)
    with pytest.raises(ConfigError):
        config(bivariate_spec, MembershipProcess.iid([0.2, 0.3, 0.5]))


def test_streams_are_distinct():
    firsts = set()
    for base, r, n in itertools.product([0, 1, 2**63], range(50), [10, 11, 2000]):
        firsts.add(replication_rng(base, r, n).integers(0, 2**63))
    assert len(firsts) == 3 * 50 * 3


def test_stream_is_reproducible():
    a = replication_rng(5, 3, 100).random(4)
    b = replication_rng(5, 3, 100).random(4)
    assert a.tobytes() == b.tobytes()


def test_rate_stderr():
    assert rate_stderr(0.95, 2000) == pytest.approx(np.sqrt(0.95 * 0.05 / 2000))
    assert rate_stderr(None, 0) is None


def test_coverage_degenerate_groups_all_singular(degenerate_spec):
    res = run_coverage(config(degenerate_spec, MembershipProcess.schedule([1, 2]), "known", R=50), workers=1)
    row = res.rows[0]
    assert row["discarded"] == row["discarded_singular"] == 50
    assert row["coverage"] is None and row["r_effective"] == 0


def test_coverage_discards_small_groups(bivariate_spec):
    cfg = config(bivariate_spec, MembershipProcess.iid([0.5, 0.5]), n_grid=(3, 400), R=300)
    res = run_coverage(cfg, workers=1)
    small, large = res.rows
    assert small["discarded_small_group"] > 0
    assert small["discarded"] + small["r_effective"] == 300
    assert large["discarded"] == 0
    assert 0 <= large["coverage"] <= 1
    assert large["mc_stderr"] == pytest.approx(rate_stderr(large["coverage"], 300))


def test_coverage_nested_in_alpha(bivariate_spec):
    cfg = config(bivariate_spec, MembershipProcess.schedule([1, 2]), "known", n_grid=(50, 300), R=400)
    stats = coverage_statistics(cfg, workers=1)
    for n, (s, _) in stats.items():
        rates = [np.mean(s < chi_square_quantile(1 - a, 2)) for a in (0.01, 0.05, 0.10)]
        assert rates[0] >= rates[1] >= rates[2]
    via_runner = [run_coverage(cfg.replace(alpha=a), workers=1).rows[-1]["coverage"] for a in (0.01, 0.05, 0.10)]
    assert via_runner[0] >= via_runner[1] >= via_runner[2]


def test_results_bit_identical_and_worker_independent(mixed_spec):
    proc = MembershipProcess.incentivized([0.2, 0.3, 0.5], 1, 3.0, 20)
    for experiment in ("coverage", "consistency", "clt", "independence", "random_index"):
        cfg = config(mixed_spec, proc, "perturbed", n_grid=(60, 120), R=64, experiment=experiment)
        serial = run_experiment(cfg, workers=1).to_dict()
        again = run_experiment(cfg, workers=1).to_dict()
        parallel = run_experiment(cfg, workers=4).to_dict()
        assert repr(serial) == repr(again) == repr(parallel)


def test_consistency_degenerate_is_exact(degenerate_spec):
    res = run_consistency(
        config(degenerate_spec, MembershipProcess.schedule([1, 2]), "known", (10, 100), R=20, experiment="consistency"),
        workers=1,
    )
    assert [r["mean_error_norm"] for r in res.rows] == [0.0, 0.0]


@pytest.mark.parametrize("weights", ["empirical", "perturbed", "known"])
def test_consistency_error_shrinks(weights):
    spec = PopulationSpec([0.4, 0.6], [Gaussian([0.0], [[1.0]]), Gaussian([3.0], [[2.0]])])
    cfg = config(spec, MembershipProcess.iid([0.4, 0.6]), weights, (100, 1000, 10000), R=150, experiment="consistency")
    res = run_consistency(cfg, workers=1)
    errs = [r["mean_error_norm"] for r in res.rows]
    assert errs[0] > errs[1] > errs[2]
    assert res.rows[-1]["decreasing"] is True
    assert errs[-1] < res.rows[-1]["error_bound"]


def test_clt_single_group_matches_group_covariance():
    cov = np.array([[1.0, 0.4], [0.4, 0.5]])
    spec = PopulationSpec([1.0], [Gaussian([2.0, -1.0], cov)])
    res = run_clt(config(spec, MembershipProcess.iid([1.0]), n_grid=(100,), R=2000, experiment="clt"), workers=1)
    det = res.details[0]
    emp = np.array(det["empirical_covariance"])
    se = np.array(det["covariance_stderr"])
    np.testing.assert_allclose(det["asymptotic_covariance"], cov)
    assert np.all(np.abs(emp - cov) < 4 * se)


def test_clt_schedule_fractions_enter_variance():
    spec = PopulationSpec([0.5, 0.5], [Gaussian([0.0], [[1.0]]), Gaussian([4.0], [[1.0]])])
    proc = MembershipProcess.schedule([1, 1, 1, 2])
    res = run_clt(config(spec, proc, "known", n_grid=(400,), R=1500, experiment="clt"), workers=1)
    v = 0.25 / 0.75 + 0.25 / 0.25
    assert res.rows[0]["asymptotic_trace"] == pytest.approx(v)
    assert abs(res.rows[0]["empirical_trace"] - v) < 4 * np.sqrt(2 / 1500) * v


def test_independence_schedule_sizes_undefined(bivariate_spec):
    res = run_independence(
        config(bivariate_spec, MembershipProcess.schedule([1, 2]), n_grid=(20,), R=100, experiment="independence"),
        workers=1,
    )
    by_name = {c["name"]: c for c in res.details[0]["correlations"]}
    for s in (1, 2):
        c = by_name[f"corr(N^{s}, Y^{s}_(1))"]
        assert c["defined"] is False and c["value"] == 0.0


def test_independence_iid_mirrors():
    spec = PopulationSpec([0.3, 0.7], [Gaussian([1.0], [[2.0]]), UniformBox([0.0], [6.0])])
    R = 1500
    res = run_independence(
        config(spec, MembershipProcess.iid([0.3, 0.7]), n_grid=(100,), R=R, experiment="independence"), workers=1
    )
    det = res.details[0]
    for c in det["correlations"]:
        assert c["defined"] and abs(c["value"]) < 4 / np.sqrt(R)
    second = [m for m in det["moments"] if m["j"] == 2]
    for m in second:
        assert max(abs(z) for z in m["mean_z"]) < 4


def test_independence_per_statistic_discards():
    spec = PopulationSpec([0.1, 0.9], [Gaussian([0.0], [[1.0]]), Gaussian([0.0], [[1.0]])])
    res = run_independence(
        config(spec, MembershipProcess.iid([0.1, 0.9]), n_grid=(10,), R=300, experiment="independence"), workers=1
    )
    moments = {(m["group"], m["j"]): m for m in res.details[0]["moments"]}
    assert moments[(1, 3)]["discarded"] > moments[(1, 1)]["discarded"] > 0
    assert moments[(2, 1)]["discarded"] == 0


def test_random_index_degenerate_is_exact(degenerate_spec):
    res = run_random_index(
        config(degenerate_spec, MembershipProcess.iid([0.5, 0.5]), n_grid=(20, 50), R=30, experiment="random_index"),
        workers=1,
    )
    last = res.details[-1]
    for g in last["groups"]:
        assert g["max_tail_sup_error"] == 0.0
        assert g["scaled_mean"] == [0.0]


@pytest.mark.parametrize("process", [MembershipProcess.iid([0.5, 0.5]), MembershipProcess.schedule([1, 2])])
def test_random_index_normal_limit(process):
    spec = PopulationSpec([0.5, 0.5], [Gaussian([1.0], [[2.0]]), Gaussian([-1.0], [[0.5]])])
    R = 1500
    res = run_random_index(config(spec, process, n_grid=(50, 200, 800), R=R, experiment="random_index"), workers=1)
    tails = [r["tail_sup_error_g1"] for r in res.rows]
    assert tails[0] > tails[1] > tails[2]
    for g, var in zip(res.details[-1]["groups"], (2.0, 0.5)):
        assert abs(g["scaled_mean"][0]) < 4 * np.sqrt(var / R)
        assert abs(g["scaled_covariance"][0][0] - var) < 4 * np.sqrt(2 / R) * var


def test_empirical_weights_miss_between_group_variance(bivariate_spec):
    # N_n^s / n - P(S=s) is of order n^-1/2, so sqrt(n)(mean - EY) picks up the
    # between-group variance B that the Wald matrix never sees.  The limit of
    # the statistic is then sum_i lambda_i chi2_1 with lambda = eig(W^-1 (W + B)).
    spec = bivariate_spec
    p = spec.group_probs
    mu = np.array([g.mean for g in spec.groups])
    within = sum(ps * g.cov for ps, g in zip(p, spec.groups))
    centred = mu - p @ mu
    between = (p[:, None, None] * centred[:, :, None] * centred[:, None, :]).sum(axis=0)
    lam = np.linalg.eigvals(np.linalg.solve(within, within + between)).real
    chi = np.random.default_rng(0).chisquare(1, size=(4_000_000, 2))
    predicted = np.mean(chi @ lam < chi_square_quantile(0.95, 2))

    R = 2000
    cfg = config(spec, MembershipProcess.iid([0.5, 0.5]), "empirical", n_grid=(2000,), R=R, seed=4)
    observed = run_coverage(cfg, workers=1).rows[0]["coverage"]
    assert predicted < 0.93
    assert abs(observed - predicted) < 4 * np.sqrt(predicted * (1 - predicted) / R)

    known = run_coverage(cfg.replace(weight_scheme=WeightScheme("known")), workers=1).rows[0]["coverage"]
    assert abs(known - 0.95) < 0.02
