"""Per-run records produced by the runner and consumed by the metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .domain import Action, _action_to_dict, _parse_action, _Reader


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0
    # True when token counts come from the local estimator
    estimated: bool = True

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time": self.wall_time,
            "estimated": self.estimated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Usage":
        return cls(d["prompt_tokens"], d["completion_tokens"], d["wall_time"], d["estimated"])


@dataclass(frozen=True)
class StepEntry:
    step_index: int
    observed_state: str
    predicted_action: Action
    gt_action: Action
    context_token_estimate: int
    usage: Usage
    wall_time: float = 0.0
    anchor_outcome: Optional[str] = None
    decision_failure: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "observed_state": self.observed_state,
            "predicted_action": _action_to_dict(self.predicted_action),
            "gt_action": _action_to_dict(self.gt_action),
            "context_token_estimate": self.context_token_estimate,
            "usage": self.usage.to_dict(),
            "wall_time": self.wall_time,
            "anchor_outcome": self.anchor_outcome,
            "decision_failure": self.decision_failure,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepEntry":
        r = _Reader(None)
        return cls(
            step_index=d["step_index"],
            observed_state=d["observed_state"],
            predicted_action=_parse_action(r, d["predicted_action"], "predicted_action"),
            gt_action=_parse_action(r, d["gt_action"], "gt_action"),
            context_token_estimate=d["context_token_estimate"],
            usage=Usage.from_dict(d["usage"]),
            wall_time=d["wall_time"],
            anchor_outcome=d.get("anchor_outcome"),
            decision_failure=d.get("decision_failure"),
        )


@dataclass(frozen=True)
class RunRecord:
    task_id: str
    mode: str
    policy: str
    steps: tuple[StepEntry, ...]
    strategy: str = "all_active"
    wall_time: float = 0.0
    bank_snapshot: Optional[list[dict]] = None
    memory_log: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    @property
    def predicted_actions(self) -> list[Action]:
        return [s.predicted_action for s in self.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "mode": self.mode,
            "policy": self.policy,
            "strategy": self.strategy,
            "wall_time": self.wall_time,
            "steps": [s.to_dict() for s in self.steps],
            "bank_snapshot": self.bank_snapshot,
            "memory_log": self.memory_log,
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            task_id=d["task_id"],
            mode=d["mode"],
            policy=d["policy"],
            strategy=d.get("strategy", "all_active"),
            wall_time=d.get("wall_time", 0.0),
            steps=tuple(StepEntry.from_dict(s) for s in d["steps"]),
            bank_snapshot=d.get("bank_snapshot"),
            memory_log=d.get("memory_log", []),
            errors=d.get("errors", []),
        )
