"""Step- and task-level metrics: AMS, ANLS, TCR and efficiency.

AMS scores each predicted action against the ground truth and averages over
steps. TCR checks each task's anchor predicates against the predicted action
sequence: a task succeeds when its FINISH anchor holds together with every
anchor it transitively depends on.
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Iterable, Optional, Sequence

from .domain import (
    COORD_MAX,
    Action,
    ActionKind,
    Anchor,
    AnchorPredicate,
    LinkRelation,
    PredicateKind,
    Task,
    UiElement,
    UiState,
    bbox_contains,
    swipe_direction,
)
from .records import RunRecord

TAP_THRESHOLD = 0.14
# threshold in grid units; compared on squared integers so the boundary is exact
_TAP_LIMIT_SQ = round(TAP_THRESHOLD * COORD_MAX) ** 2

_SWIPES = (ActionKind.SWIPE, ActionKind.SWIPE_TWO_POINTS)
_POINT_KINDS = (ActionKind.TAP, ActionKind.LONG_PRESS)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls(a: str, b: str) -> float:
    """1 - edit_distance / longer length; two empty strings score 1."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def _direction(a: Action):
    if a.kind is ActionKind.SWIPE:
        return a.direction
    return swipe_direction(a.x, a.y, a.x_end, a.y_end)


def action_match(
    pred: Action,
    gt: Action,
    gt_element: Optional[UiElement] = None,
    text_threshold: Optional[float] = None,
) -> float:
    if pred.kind in _SWIPES and gt.kind in _SWIPES:
        return 1.0 if _direction(pred) == _direction(gt) else 0.0
    if pred.kind is not gt.kind:
        return 0.0
    k = gt.kind
    if k in _POINT_KINDS:
        dx, dy = pred.x - gt.x, pred.y - gt.y
        if dx * dx + dy * dy <= _TAP_LIMIT_SQ:
            return 1.0
        if gt_element is not None and bbox_contains(gt_element.bbox, pred.x, pred.y):
            return 1.0
        return 0.0
    if k is ActionKind.INPUT_TEXT:
        score = anls(pred.value, gt.value)
        if text_threshold is not None:
            return 1.0 if score >= text_threshold else 0.0
        return score
    if k is ActionKind.OPEN_APP:
        return 1.0 if pred.value.strip().casefold() == gt.value.strip().casefold() else 0.0
    return 1.0


def target_element(state: UiState, gt: Action) -> Optional[UiElement]:
    """Smallest annotated element containing the ground-truth point, if any."""
    if gt.kind not in _POINT_KINDS or not state.elements:
        return None
    hits = [e for e in state.elements if bbox_contains(e.bbox, gt.x, gt.y)]
    if not hits:
        return None
    return min(hits, key=lambda e: (e.bbox[2] - e.bbox[0]) * (e.bbox[3] - e.bbox[1]))


def step_scores(record: RunRecord, task: Task, text_threshold: Optional[float] = None) -> list[float]:
    if len(record.steps) != len(task.steps):
        raise ValueError(
            f"record for {task.id} covers {len(record.steps)} steps, task has {len(task.steps)}"
        )
    return [
        action_match(e.predicted_action, s.action, target_element(s.state, s.action), text_threshold)
        for e, s in zip(record.steps, task.steps)
    ]


def ams(record: RunRecord, task: Task, text_threshold: Optional[float] = None) -> float:
    scores = step_scores(record, task, text_threshold)
    return 100.0 * sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# anchor predicates

_NUMBER = re.compile(r"\d+(?:[.,]\d+)*")


def _norm_text(s: str) -> str:
    return " ".join(s.casefold().split())


def _as_number(s: str) -> Optional[Decimal]:
    """Numeric value of strings like '42', '¥4,280', '#0815'; None otherwise."""
    core = s.strip()
    core = re.sub(r"^[^\w\d]+", "", core)  # currency / hash prefixes
    core = core.replace(",", "")
    if not re.fullmatch(r"\d+(?:\.\d+)?", core):
        return None
    try:
        return Decimal(core)
    except InvalidOperation:
        return None


def value_contains(haystack: str, needle: str) -> bool:
    num = _as_number(needle)
    if num is not None:
        for tok in _NUMBER.findall(haystack):
            try:
                if Decimal(tok.replace(",", "")) == num:
                    return True
            except InvalidOperation:
                continue
        return False
    return _norm_text(needle) in _norm_text(haystack)


def values_equal(a: str, b: str) -> bool:
    na, nb = _as_number(a), _as_number(b)
    if na is not None and nb is not None:
        return na == nb
    return _norm_text(a) == _norm_text(b)


class EvaluationError(ValueError):
    pass


def predicate_witness(
    pred: AnchorPredicate,
    actions: Sequence[Action],
    witness_of,
    after: int = -1,
) -> Optional[int]:
    """Earliest step index (> ``after``) at which ``pred`` holds, else None.

    ``witness_of(anchor_id)`` resolves the witness step of another anchor for
    ``ordered_after`` predicates.
    """
    n = len(actions)
    lo, hi = pred.step_range if pred.step_range is not None else (0, n - 1)
    if lo < 0 or hi >= n or lo > hi:
        raise EvaluationError(f"predicate step range {lo}-{hi} outside task of {n} steps")
    k = pred.kind
    if k is PredicateKind.ORDERED_AFTER:
        if pred.anchor_id is None or pred.then is None:
            raise EvaluationError("ordered_after needs anchor_id and then")
        first = witness_of(pred.anchor_id)
        if first is None:
            return None
        return predicate_witness(pred.then, actions, witness_of, after=max(after, first))

    if k is PredicateKind.VALUE_EQUALS_EVIDENCE:
        if pred.evidence is None or pred.evidence.extracted_value is None:
            raise EvaluationError("value_equals_evidence needs an evidence value")
        if not 0 <= pred.evidence.step_index < n:
            raise EvaluationError(f"evidence step {pred.evidence.step_index} missing")
    elif k is PredicateKind.ACTION_KIND_AT_STEP_RANGE:
        if pred.action_kind is None:
            raise EvaluationError("action_kind_at_step_range needs action_kind")
    elif pred.text is None:
        raise EvaluationError(f"{k.value} needs text")

    for t in range(max(lo, after + 1), hi + 1):
        a = actions[t]
        if k is PredicateKind.ACTION_KIND_AT_STEP_RANGE:
            ok = a.kind is pred.action_kind
        elif k is PredicateKind.VALUE_CONTAINS:
            ok = a.kind is ActionKind.INPUT_TEXT and value_contains(a.value, pred.text)
        elif k is PredicateKind.VALUE_EQUALS_EVIDENCE:
            ok = a.kind is ActionKind.INPUT_TEXT and values_equal(a.value, pred.evidence.extracted_value)
        else:  # reaches_step_with_app
            ok = a.kind is ActionKind.OPEN_APP and _norm_text(a.value) == _norm_text(pred.text)
        if ok:
            return t
    return None


class _Witnesses:
    """Memoized witness resolution over a task's anchors."""

    def __init__(self, task: Task, actions: Sequence[Action]):
        self.anchors = {a.id: a for a in task.anchors()}
        self.actions = actions
        self.cache: dict[str, Optional[int]] = {}
        self.active: set[str] = set()

    def __call__(self, anchor_id: str) -> Optional[int]:
        if anchor_id in self.cache:
            return self.cache[anchor_id]
        a = self.anchors.get(anchor_id)
        if a is None:
            raise EvaluationError(f"predicate references unknown anchor {anchor_id}")
        if a.predicate is None:
            raise EvaluationError(f"anchor {anchor_id} has no predicate")
        if anchor_id in self.active:
            raise EvaluationError(f"ordered_after cycle through {anchor_id}")
        self.active.add(anchor_id)
        w = predicate_witness(a.predicate, self.actions, self)
        self.active.discard(anchor_id)
        self.cache[anchor_id] = w
        return w


def check_anchor(anchor: Anchor, record: RunRecord, task: Task) -> bool:
    """Whether the predicted trajectory in ``record`` satisfies ``anchor``'s predicate."""
    if anchor.predicate is None:
        raise EvaluationError(f"anchor {anchor.id} has no predicate")
    return _Witnesses(task, record.predicted_actions)(anchor.id) is not None


_CLOSURE_RELATIONS = (LinkRelation.PREREQUISITE, LinkRelation.RESULT_OF, LinkRelation.ENABLES)


def finish_closure(task: Task) -> list[str]:
    """FINISH anchor plus every anchor reachable over prerequisite/result_of/enables."""
    by_id = {a.id: a for a in task.anchors()}
    out: list[str] = []
    stack = [task.final_anchor_id]
    while stack:
        aid = stack.pop()
        if aid in out:
            continue
        out.append(aid)
        for link in by_id[aid].links:
            if link.relation in _CLOSURE_RELATIONS:
                stack.append(link.source_anchor_id)
    return out


@dataclass
class TaskOutcome:
    task_id: str
    success: bool
    evaluable: bool
    anchors: dict[str, bool] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "evaluable": self.evaluable,
            "anchors": self.anchors,
            "error": self.error,
        }


def evaluate_task(task: Task, record: RunRecord, scope: str = "closure") -> TaskOutcome:
    if scope not in ("closure", "all"):
        raise ValueError(f"unknown TCR scope {scope!r}")
    ids = finish_closure(task) if scope == "closure" else [a.id for a in task.anchors()]
    by_id = {a.id: a for a in task.anchors()}
    if any(by_id[i].predicate is None for i in ids):
        return TaskOutcome(task.id, False, False, error="missing predicate")
    if len(record.steps) != len(task.steps):
        return TaskOutcome(task.id, False, False, error="record length mismatch")
    wit = _Witnesses(task, record.predicted_actions)
    results: dict[str, bool] = {}
    try:
        for aid in sorted(ids, key=lambda i: list(by_id).index(i)):
            results[aid] = wit(aid) is not None
    except EvaluationError as e:
        return TaskOutcome(task.id, False, False, error=f"evaluation_error: {e}")
    return TaskOutcome(task.id, all(results.values()), True, results)


def tcr(records: Iterable[RunRecord], tasks: Iterable[Task], scope: str = "closure") -> float:
    outcomes = [o for o in _outcomes(records, tasks, scope) if o.evaluable]
    if not outcomes:
        raise ValueError("no evaluable tasks")
    return 100.0 * sum(o.success for o in outcomes) / len(outcomes)


def _outcomes(records, tasks, scope) -> list[TaskOutcome]:
    by_id = {t.id: t for t in tasks}
    return [evaluate_task(by_id[r.task_id], r, scope) for r in records]


# ---------------------------------------------------------------------------
# efficiency


@dataclass(frozen=True)
class Efficiency:
    avg_tokens: float
    avg_time: float
    estimated_fraction: float
    steps: int


def efficiency(records: Iterable[RunRecord]) -> Efficiency:
    entries = [e for r in records for e in r.steps]
    if not entries:
        raise ValueError("no steps")
    return Efficiency(
        avg_tokens=statistics.fmean(e.usage.total_tokens for e in entries),
        avg_time=statistics.fmean(e.wall_time for e in entries),
        estimated_fraction=sum(e.usage.estimated for e in entries) / len(entries),
        steps=len(entries),
    )


# ---------------------------------------------------------------------------
# reports

BUCKET_WIDTH = 10


def length_bucket(n_steps: int) -> str:
    lo = (n_steps // BUCKET_WIDTH) * BUCKET_WIDTH
    return f"{lo}-{lo + BUCKET_WIDTH - 1}"


def _bucket_key(label: str) -> int:
    return int(label.split("-")[0])


@dataclass
class MetricReport:
    ams: float
    tcr: Optional[float]
    avg_tokens: float
    avg_time_seconds: float
    estimated_fraction: float
    n_tasks: int
    n_evaluable: int
    per_intent: dict[str, dict] = field(default_factory=dict)
    per_bucket: dict[str, dict] = field(default_factory=dict)
    tasks: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ams": self.ams,
            "tcr": self.tcr,
            "avg_tokens": self.avg_tokens,
            "avg_time_seconds": self.avg_time_seconds,
            "estimated_fraction": self.estimated_fraction,
            "n_tasks": self.n_tasks,
            "n_evaluable": self.n_evaluable,
            "per_intent": self.per_intent,
            "per_bucket": self.per_bucket,
            "tasks": self.tasks,
        }


def _group_scores(pairs, scope, text_threshold) -> dict:
    scores: list[float] = []
    outcomes = []
    for record, task in pairs:
        scores.extend(step_scores(record, task, text_threshold))
        outcomes.append(evaluate_task(task, record, scope))
    ev = [o for o in outcomes if o.evaluable]
    return {
        "ams": 100.0 * sum(scores) / len(scores) if scores else 0.0,
        "tcr": 100.0 * sum(o.success for o in ev) / len(ev) if ev else None,
        "n": len(pairs),
    }


def build_report(
    records: Sequence[RunRecord],
    tasks: Sequence[Task],
    scope: str = "closure",
    text_threshold: Optional[float] = None,
) -> MetricReport:
    """Aggregate a set of records: AMS pooled over steps, TCR over evaluable tasks."""
    by_id = {t.id: t for t in tasks}
    pairs = [(r, by_id[r.task_id]) for r in records]
    overall = _group_scores(pairs, scope, text_threshold)
    eff = efficiency(records)
    task_rows = []
    for r, t in pairs:
        o = evaluate_task(t, r, scope)
        row = o.to_dict()
        row["ams"] = ams(r, t, text_threshold)
        row["length"] = len(t)
        row["intent"] = t.intent.value
        task_rows.append(row)

    def grouped(key) -> dict[str, dict]:
        groups: dict[str, list] = {}
        for r, t in pairs:
            groups.setdefault(key(t), []).append((r, t))
        return {k: _group_scores(v, scope, text_threshold) for k, v in groups.items()}

    per_intent = dict(sorted(grouped(lambda t: t.intent.value).items()))
    per_bucket = dict(sorted(grouped(lambda t: length_bucket(len(t))).items(), key=lambda kv: _bucket_key(kv[0])))
    return MetricReport(
        ams=overall["ams"],
        tcr=overall["tcr"],
        avg_tokens=eff.avg_tokens,
        avg_time_seconds=eff.avg_time,
        estimated_fraction=eff.estimated_fraction,
        n_tasks=len(pairs),
        n_evaluable=sum(1 for row in task_rows if row["evaluable"]),
        per_intent=per_intent,
        per_bucket=per_bucket,
        tasks=task_rows,
    )
