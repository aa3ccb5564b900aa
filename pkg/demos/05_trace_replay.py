"""Replay a generated workload trace through the full topology and read
the per-layer completion-time table the run produces.

Usage: python3 demos/05_trace_replay.py [--out DIR]
"""

import argparse
import tempfile
from pathlib import Path

from edgereuse import builtin_profiles, load_experiment, run_experiment
from edgereuse.cli import write_bundle


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=None,
                        help="directory for the bundle and results (default: temp dir)")
    parser.add_argument("--tasks", type=int, default=600)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    out = args.out or Path(tempfile.mkdtemp(prefix="edgereuse-demo-"))
    out.mkdir(parents=True, exist_ok=True)

    import dataclasses
    profile = dataclasses.replace(builtin_profiles()["cctv-like"], tasks=args.tasks)
    stats = write_bundle(profile, args.seed, out)
    print(f"generated {stats['tasks']} tasks "
          f"({stats['unique_vectors']} unique inputs, "
          f"{stats['repeat_tasks']} repeats) in {out}")

    config = load_experiment(out / "experiment.json")
    report = run_experiment(config, event_log=True)
    report.write_per_task_csv(out / "per_task.csv")
    report.write_metrics_json(out / "metrics.json")
    report.write_events_csv(out / "events.csv")

    print(report.summary_line())
    print()
    print(f"{'reuse layer':>15} {'tasks':>6} {'mean completion':>16}")
    for layer, row in report.aggregates["per_layer"].items():
        mean = "-" if row["mean_completion_ms"] is None else f"{row['mean_completion_ms']:.2f} ms"
        print(f"{layer:>15} {row['count']:>6} {mean:>16}")
    print()
    for sid, srv in report.aggregates["servers"].items():
        print(f"server {sid}: executed {srv['executed_count']}, reused {srv['reused_count']}, "
              f"busy {100 * srv['busy_fraction']:.1f}%, stored {srv['stored_bytes']} bytes")
    print(f"outputs: {out}/per_task.csv, metrics.json, events.csv")


if __name__ == "__main__":
    main()
