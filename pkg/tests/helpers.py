"""Small builders shared by the test modules."""

from __future__ import annotations

from asmb.domain import (
    Action,
    ActionKind,
    Anchor,
    AnchorPredicate,
    AnchorType,
    CausalLink,
    EvidenceRef,
    Intent,
    LinkRelation,
    PredicateKind,
    Step,
    Task,
    UiElement,
    UiState,
)
from asmb.records import RunRecord, StepEntry, Usage

# filled by test_acceptance, printed by conftest's terminal summary
ACCEPTANCE: list[tuple[int, bool, str]] = []


def state(i: int, app: str = "Shop", elements=None) -> UiState:
    return UiState(i, f"shot-{i}", app, elements)


def tiny_task(task_id: str = "t1") -> Task:
    fin = Anchor(
        "f",
        AnchorType.FINISH,
        "task done",
        evidence=(EvidenceRef(0),),
        predicate=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (0, 0), action_kind=ActionKind.FINISH),
    )
    return Task(task_id, "finish", Intent.LOOKUP, ("Shop",), (Step(state(0), Action(ActionKind.FINISH), gt_anchors=(fin,)),), "f")


def copy_task(value: str = "42", gap: int = 4) -> Task:
    """Read a value at step 1, type it ``gap`` steps later, then finish.

    Anchors: d (DEPENDENCY, value_contains), e (SUBGOAL, value_equals_evidence,
    result_of d), s (SUBGOAL tap, ordered_after e), f (FINISH, prerequisite s).
    """
    n = gap + 4
    reuse = 1 + gap
    steps = []
    for i in range(n):
        anchors: tuple[Anchor, ...] = ()
        els = None
        if i == 0:
            act = Action(ActionKind.OPEN_APP, value="Shop")
        elif i == 1:
            els = (UiElement((100, 400, 900, 500), f"Price: {value}"),)
            act = Action(ActionKind.LONG_PRESS, 500, 450)
            anchors = (
                Anchor(
                    "d",
                    AnchorType.DEPENDENCY,
                    f"price {value} noted",
                    evidence=(EvidenceRef(1, (100, 400, 900, 500), value),),
                    predicate=AnchorPredicate(PredicateKind.VALUE_CONTAINS, (2, n - 2), text=value),
                ),
            )
        elif i == reuse:
            act = Action(ActionKind.INPUT_TEXT, value=value)
            anchors = (
                Anchor(
                    "e",
                    AnchorType.SUBGOAL,
                    f"entered {value}",
                    evidence=(EvidenceRef(i),),
                    links=(CausalLink("d", LinkRelation.RESULT_OF),),
                    predicate=AnchorPredicate(
                        PredicateKind.VALUE_EQUALS_EVIDENCE, (2, n - 2), evidence=EvidenceRef(1, None, value)
                    ),
                ),
            )
        elif i == n - 2:
            act = Action(ActionKind.TAP, 500, 900)
            anchors = (
                Anchor(
                    "s",
                    AnchorType.SUBGOAL,
                    "submitted",
                    evidence=(EvidenceRef(i),),
                    links=(CausalLink("e", LinkRelation.PREREQUISITE),),
                    predicate=AnchorPredicate(
                        PredicateKind.ORDERED_AFTER,
                        anchor_id="e",
                        then=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (2, n - 2), action_kind=ActionKind.TAP),
                    ),
                ),
            )
        elif i == n - 1:
            act = Action(ActionKind.FINISH)
            anchors = (
                Anchor(
                    "f",
                    AnchorType.FINISH,
                    "order placed",
                    evidence=(EvidenceRef(i),),
                    links=(CausalLink("s", LinkRelation.PREREQUISITE),),
                    predicate=AnchorPredicate(
                        PredicateKind.ACTION_KIND_AT_STEP_RANGE, (n - 1, n - 1), action_kind=ActionKind.FINISH
                    ),
                ),
            )
        else:
            act = Action(ActionKind.WAIT)
        steps.append(Step(state(i, elements=els), act, summary=f"step {i}", gt_anchors=anchors))
    return Task("copy", "copy the price", Intent.PURCHASE_ORDER, ("Shop",), tuple(steps), "f")


def record_from_actions(task: Task, actions, tokens=None, mode: str = "raw", policy: str = "test") -> RunRecord:
    tokens = tokens or [0] * len(actions)
    entries = tuple(
        StepEntry(
            step_index=i,
            observed_state=task.steps[i].state.screenshot_ref if i < len(task.steps) else "",
            predicted_action=a,
            gt_action=task.steps[i].action if i < len(task.steps) else a,
            context_token_estimate=0,
            usage=Usage(tok, 0, 0.0, True),
            wall_time=0.0,
        )
        for i, (a, tok) in enumerate(zip(actions, tokens))
    )
    return RunRecord(task_id=task.id, mode=mode, policy=policy, steps=entries)
