"""History-mode ablation on the standard synthetic suite.

Runs every policy in ``--policy`` under raw, summary and ASM history and
prints AMS, TCR and average tokens per cell. With scripted policies the
run is deterministic and needs no network.

    python3 scripts/ablation.py --tasks 100 --seed 0
    python3 scripts/ablation.py --policy chat:model=my-model --tasks 20
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from asmb.cli import format_table
from asmb.memory import HistoryMode, RetrievalStrategy
from asmb.policy import parse_policy_spec
from asmb.runner import RunConfig, run_suite
from asmb.synth import SynthConfig, generate_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tasks", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--policy", action="append", help="default: oracle and forgetful:window=5")
    ap.add_argument("--strategy", default="all_active")
    ap.add_argument("--budget", type=int, default=4096)
    ap.add_argument("--concurrency", type=int, default=1)
    ap.add_argument("--json", type=Path, help="also write the suite report here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    tasks = generate_suite(SynthConfig(seed=args.seed, num_tasks=args.tasks))
    policies = [parse_policy_spec(s) for s in (args.policy or ["oracle", "forgetful:window=5"])]
    cells = [(p, m) for p in policies for m in HistoryMode]
    config = RunConfig(
        strategy=RetrievalStrategy.parse(args.strategy),
        budget=args.budget,
        seed=args.seed,
        concurrency=args.concurrency,
    )
    _, report = run_suite(tasks, cells, config)

    rows = []
    for key, c in report.cells.items():
        policy, mode = key.rsplit("|", 1)
        rows.append([policy, mode, c["ams"], c["tcr"], c["avg_tokens"]])
    print(format_table(["policy", "mode", "AMS", "TCR", "Avg Token"], rows), end="")
    if report.failures:
        print(f"{len(report.failures)} cells failed")
    if args.json:
        args.json.write_text(report.to_json())


if __name__ == "__main__":
    main()
