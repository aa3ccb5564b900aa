"""Sweep the similarity threshold and watch the reuse/accuracy trade-off.

Loose thresholds reuse more tasks but return more near-miss results;
strict thresholds only reuse exact repeats. Server busy time falls as
reuse rises.

Usage: python3 demos/06_threshold_sweep.py [--profile NAME]
"""

import argparse
import tempfile
from pathlib import Path

from edgereuse import builtin_profiles, load_experiment, sweep_thresholds, write_sweep_csv
from edgereuse.cli import write_bundle


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--profile", default="mnist-like",
                        choices=sorted(builtin_profiles()))
    parser.add_argument("--tasks", type=int, default=600)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    out = Path(tempfile.mkdtemp(prefix="edgereuse-sweep-"))
    import dataclasses
    profile = dataclasses.replace(builtin_profiles()[args.profile], tasks=args.tasks)
    write_bundle(profile, args.seed, out)
    config = load_experiment(out / "experiment.json")

    rows = sweep_thresholds(config, [0.6, 0.7, 0.8, 0.9])
    print(f"profile {args.profile}, {args.tasks} tasks, seed {args.seed}")
    print(f"{'threshold':>10} {'reuse %':>8} {'accuracy %':>11} {'server busy %':>14}")
    for row in rows:
        busy = 100 * row["report"].aggregates["busy_fraction"]
        acc = "-" if row["accuracy_pct"] is None else f"{row['accuracy_pct']:.2f}"
        print(f"{row['threshold']:>10} {row['reuse_pct']:>8.2f} {acc:>11} {busy:>14.2f}")

    write_sweep_csv(out / "sweep.csv", rows)
    print(f"\nwrote {out}/sweep.csv")


if __name__ == "__main__":
    main()
