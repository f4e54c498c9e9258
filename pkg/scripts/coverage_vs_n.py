"""Coverage of the 95% Wald region as n grows, for each membership scenario.

Known and perturbed weights approach 0.95; empirical weights with iid
membership converge to a lower value whenever the group means differ,
because N_n^s / n only tracks P(S=s) to order n^-1/2.

    python scripts/coverage_vs_n.py [--replications 1000]
"""
import argparse

from strata.config import parse_config
from strata.montecarlo import run_coverage

from run_all import ROOT

SCENARIOS = [
    "coverage_iid_empirical.cfg",
    "coverage_schedule_known.cfg",
    "coverage_incentivized_perturbed.cfg",
]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--replications", type=int, default=1000)
    parser.add_argument("--n-grid", type=int, nargs="+", default=[20, 50, 200, 1000, 4000])
    args = parser.parse_args()

    print(f"{'scenario':40s} " + " ".join(f"{n:>8d}" for n in args.n_grid))
    for name in SCENARIOS:
        cfg = parse_config(ROOT / "configs" / name).replace(
            n_grid=tuple(args.n_grid), replications=args.replications
        )
        rows = run_coverage(cfg).rows
        cells = [f"{r['coverage']:8.4f}" if r["coverage"] is not None else f"{'-':>8s}" for r in rows]
        print(f"{name.removesuffix('.cfg'):40s} " + " ".join(cells))


if __name__ == "__main__":
    main()
