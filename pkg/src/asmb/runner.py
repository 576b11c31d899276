"""Teacher-forced replay of recorded trajectories through a policy.

At every step the policy sees the recorded UI state, whatever its earlier
predictions were, so a mistake never changes what comes next. The loop
always covers every step, which keeps AMS defined per step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .domain import Task
from .memory import (
    HistoryContext,
    HistoryMode,
    MemoryBank,
    MemoryEvent,
    RetrievalStrategy,
    render_asm_context,
    render_raw_context,
    render_summary_context,
    retrieve,
    scripted_summary,
    update,
)
from .metrics import build_report
from .policy import Policy, build_prompt
from .records import RunRecord, StepEntry

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 4096


@dataclass(frozen=True)
class RunConfig:
    mode: HistoryMode = HistoryMode.ASM
    strategy: RetrievalStrategy = field(default_factory=RetrievalStrategy)
    budget: int = DEFAULT_BUDGET
    seed: int = 0
    concurrency: int = 1
    # wall-clock timings make records non-reproducible; off for scripted runs
    record_timing: bool = False
    # raw-mode window for policies that do not set one; None = whole trace
    raw_window: Optional[int] = None
    tcr_scope: str = "closure"
    text_threshold: Optional[float] = None

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be > 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "strategy": self.strategy.label(),
            "budget": self.budget,
            "seed": self.seed,
            "concurrency": self.concurrency,
            "record_timing": self.record_timing,
            "raw_window": self.raw_window,
            "tcr_scope": self.tcr_scope,
            "text_threshold": self.text_threshold,
        }

    def config_hash(self) -> str:
        # concurrency does not influence results
        d = {k: v for k, v in self.to_dict().items() if k not in ("concurrency", "mode")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _outcome(events: list[MemoryEvent], step: int) -> Optional[str]:
    mine = [e for e in events if e.step_index == step and e.event != "status_change"]
    return mine[-1].event if mine else None


def run_task(task: Task, policy: Policy, config: RunConfig) -> RunRecord:
    mode = config.mode
    clock = time.perf_counter if config.record_timing else (lambda: 0.0)
    task_start = clock()
    bank = MemoryBank(task.id)
    events: list[MemoryEvent] = []
    errors: list[dict] = []
    entries: list[StepEntry] = []
    running_summary = ""
    model_summaries = bool(getattr(policy, "writes_summary", False))
    window = getattr(policy, "history_window", None)
    if window is None:
        window = config.raw_window

    for t, step in enumerate(task.steps):
        state = step.state
        ctx: HistoryContext
        if mode is HistoryMode.RAW:
            past = task.steps[:t] if window is None else task.steps[max(0, t - window) : t]
            ctx = render_raw_context(past, config.budget)
        elif mode is HistoryMode.SUMMARY:
            if not model_summaries:
                running_summary = scripted_summary(task.steps[:t], config.budget)
            ctx = render_summary_context(running_summary, config.budget)
        else:
            anchors = retrieve(bank, state, task.instruction, config.strategy)
            ctx = render_asm_context(anchors, config.budget, bank)

        bundle = build_prompt(mode, task.instruction, ctx, state)
        started = clock()
        decision, usage = policy.decide(bundle, task)
        elapsed = max(0.0, clock() - started)
        if decision.failure:
            errors.append({"step_index": t, "type": "decision_failure", "detail": decision.failure})

        if mode is HistoryMode.SUMMARY and model_summaries:
            if decision.summary_text is not None:
                running_summary = decision.summary_text
            elif t > 0:
                errors.append({"step_index": t, "type": "summary_carried_forward", "detail": ""})

        outcome = None
        if mode is HistoryMode.ASM:
            bank = update(bank, state, decision.action, decision.anchor_proposal, events)
            outcome = _outcome(events, state.step_index)
            for e in events:
                if e.step_index == state.step_index and e.event == "proposal_error":
                    errors.append({"step_index": t, "type": "proposal_error", "detail": e.detail})

        if not config.record_timing:
            usage = type(usage)(usage.prompt_tokens, usage.completion_tokens, 0.0, usage.estimated)
        entries.append(
            StepEntry(
                step_index=state.step_index,
                observed_state=state.screenshot_ref,
                predicted_action=decision.action,
                gt_action=step.action,
                context_token_estimate=ctx.token_estimate,
                usage=usage,
                wall_time=elapsed,
                anchor_outcome=outcome,
                decision_failure=decision.failure,
            )
        )

    return RunRecord(
        task_id=task.id,
        mode=mode.value,
        policy=policy.name,
        strategy=config.strategy.label(),
        steps=tuple(entries),
        wall_time=max(0.0, clock() - task_start),
        bank_snapshot=bank.snapshot() if mode is HistoryMode.ASM else None,
        memory_log=[e.to_dict() for e in events],
        errors=errors,
    )


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteReport:
    cells: dict[str, dict]
    failures: list[dict]

    def to_dict(self) -> dict:
        return {"cells": self.cells, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def cell_key(policy_name: str, mode: str) -> str:
    return f"{policy_name}|{mode}"


def run_suite(
    tasks: Sequence[Task],
    cells: Sequence[tuple[Policy, HistoryMode]],
    config: RunConfig,
    sink: Optional[Callable[[RunRecord], None]] = None,
) -> tuple[list[RunRecord], SuiteReport]:
    """Run every (task, policy, mode) cell; failures are quarantined, not raised.

    ``sink`` receives each record as soon as it completes (possibly from a
    worker thread), so callers can persist partial progress.
    """
    jobs = [(task, policy, mode) for policy, mode in cells for task in tasks]

    def work(job):
        task, policy, mode = job
        cfg = RunConfig(**{**config.__dict__, "mode": mode})
        try:
            record = run_task(task, policy, cfg)
        except Exception as e:  # quarantine: one bad cell never aborts the suite
            logger.exception("cell %s/%s/%s failed", task.id, policy.name, mode.value)
            return None, {"task_id": task.id, "policy": policy.name, "mode": mode.value, "error": repr(e)}
        # sink errors (disk full, permissions) are not cell failures; let them propagate
        if sink is not None:
            sink(record)
        return record, None

    if config.concurrency == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            results = list(pool.map(work, jobs))
    records = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    return records, summarize(records, tasks, config, failures)


def summarize(
    records: Sequence[RunRecord], tasks: Sequence[Task], config: RunConfig, failures: Sequence[dict] = ()
) -> SuiteReport:
    groups: dict[str, list[RunRecord]] = {}
    for r in records:
        groups.setdefault(cell_key(r.policy, r.mode), []).append(r)
    cells = {
        key: build_report(rs, tasks, config.tcr_scope, config.text_threshold).to_dict()
        for key, rs in sorted(groups.items())
    }
    return SuiteReport(cells, list(failures))
