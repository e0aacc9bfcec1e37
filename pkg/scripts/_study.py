"""Shared command-line wrapper for the Monte Carlo study scripts."""

from __future__ import annotations

import argparse
import sys
import time

from dynlate.montecarlo import ExperimentConfig, run_mc


def main(description: str, defaults: dict, out: str, argv=None) -> int:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--n", type=int, default=defaults.get("n", 5000))
    parser.add_argument("--replications", type=int, default=defaults.get("replications", 100))
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0, help="base seed")
    parser.add_argument("--out", default=out, help="CSV path; a JSON sidecar is written next to it")
    args = parser.parse_args(argv)
    cfg = ExperimentConfig(
        **{**defaults, "n": args.n, "replications": args.replications, "workers": args.workers, "base_seed": args.seed}
    )
    t0 = time.perf_counter()

    def progress(done, total):
        print(f"replication {done}/{total} ({time.perf_counter() - t0:.0f}s)", file=sys.stderr)

    summary = run_mc(cfg, progress=progress)
    summary.write(args.out)
    print(summary.csv_text(), end="")
    print(f"wrote {args.out} in {time.perf_counter() - t0:.0f}s", file=sys.stderr)
    return 0
