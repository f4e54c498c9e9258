"""Run every config in configs/ through the CLI and print the per-n tables.

    python scripts/run_all.py [--out results/] [--workers N]
"""
import argparse
import sys
import time
from pathlib import Path

from strata.cli import run
from strata.config import parse_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(ROOT / "results"))
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    status = 0
    for path in sorted((ROOT / "configs").glob("*.cfg")):
        cfg = parse_config(path)
        out = Path(args.out) / path.stem
        t0 = time.perf_counter()
        code = run(cfg, out, workers=args.workers)
        status |= code
        print(f"== {path.stem} ({cfg.experiment}, R={cfg.replications}) {time.perf_counter() - t0:.1f}s")
        if code == 0:
            print((out / "result.csv").read_text())
    return status


if __name__ == "__main__":
    sys.exit(main())
