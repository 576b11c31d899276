"""AMS by trajectory length when the dependency gap grows with length.

Every task reuses one extracted value per ``--spacing`` steps of length, and
all reuse happens just before submission, so longer tasks ask the agent to
carry more values over a longer distance. The script prints one row per
10-step length bucket and, with ``--plot``, saves a line chart.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from asmb.memory import HistoryMode
from asmb.policy import parse_policy_spec
from asmb.runner import RunConfig, run_suite
from asmb.synth import SynthConfig, generate_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--min-length", type=int, default=20)
    ap.add_argument("--max-length", type=int, default=59)
    ap.add_argument("--spacing", type=int, default=5, help="steps of length per carried value")
    ap.add_argument("--policy", default="forgetful:window=5")
    ap.add_argument("--csv", type=Path)
    ap.add_argument("--plot", type=Path, help="PNG output (needs matplotlib)")
    args = ap.parse_args()

    synth = SynthConfig(
        seed=args.seed,
        num_tasks=args.tasks,
        length_range=(args.min_length, args.max_length),
        chain_spacing=args.spacing,
    )
    tasks = generate_suite(synth)
    policy = parse_policy_spec(args.policy)
    _, report = run_suite(tasks, [(policy, m) for m in HistoryMode], RunConfig(seed=args.seed))

    modes = [m.value for m in HistoryMode]
    per_mode = {m: report.cells[f"{policy.name}|{m}"]["per_bucket"] for m in modes}
    buckets = list(per_mode[modes[0]])
    w = csv.writer(sys.stdout, lineterminator="\n")
    header = ["bucket", "tasks"] + [f"{m}_ams" for m in modes]
    rows = [[b, per_mode[modes[0]][b]["n"]] + [round(per_mode[m][b]["ams"], 2) for m in modes] for b in buckets]
    w.writerow(header)
    w.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            cw = csv.writer(f, lineterminator="\n")
            cw.writerow(header)
            cw.writerows(rows)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for i, m in enumerate(modes):
            ax.plot(buckets, [r[2 + i] for r in rows], marker="o", label=m)
        ax.set_xlabel("trajectory length (steps)")
        ax.set_ylabel("AMS")
        ax.set_title(policy.name)
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=150)


if __name__ == "__main__":
    main()
