"""Data model for GUI tasks, actions, anchors and causal links.

Everything here is an immutable value. Coordinates are integers on a
0-1000 grid with the origin at the top-left corner; metric code divides
by 1000 to work in the unit square.

Tasks are stored one JSON object per line. ``serialize_task`` produces the
canonical line for a task and ``parse_task`` inverts it, validating the
structural invariants (closed enums, anchor DAG, FINISH anchor) on the way.
"""

from __future__ import annotations

import enum
import graphlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

COORD_MAX = 1000


class ActionKind(str, enum.Enum):
    OPEN_APP = "open_app"
    TAP = "tap"
    LONG_PRESS = "long_press"
    SWIPE = "swipe"
    INPUT_TEXT = "input_text"
    SWIPE_TWO_POINTS = "swipe_two_points"
    WAIT = "wait"
    CAPTURE_SCREEN = "capture_screen"
    HOME = "home"
    BACK = "back"
    FINISH = "finish"


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"

    def reversed(self) -> "Direction":
        return _OPPOSITE[self]


_OPPOSITE = {
    Direction.UP: Direction.DOWN,
    Direction.DOWN: Direction.UP,
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
}


class DistanceHint(str, enum.Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"


class Intent(str, enum.Enum):
    LOOKUP = "lookup"
    COMPARE_DECIDE = "compare_decide"
    PURCHASE_ORDER = "purchase_order"
    BOOKING = "booking"
    COMMUNICATE = "communicate"
    SHARE_RECOMMEND = "share_recommend"
    CREATE_CONTENT = "create_content"
    CONFIGURE_AUTHORIZE = "configure_authorize"


class AnchorType(str, enum.Enum):
    SUBGOAL = "SUBGOAL"
    STATE_CHANGE = "STATE_CHANGE"
    DEPENDENCY = "DEPENDENCY"
    EXCEPTION = "EXCEPTION"
    CONTEXT_INFO = "CONTEXT_INFO"
    FINISH = "FINISH"


class AnchorStatus(str, enum.Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"
    INVALIDATED = "invalidated"


class LinkRelation(str, enum.Enum):
    PREREQUISITE = "prerequisite"
    ENABLES = "enables"
    RESULT_OF = "result_of"
    BLOCKS = "blocks"


class PredicateKind(str, enum.Enum):
    ACTION_KIND_AT_STEP_RANGE = "action_kind_at_step_range"
    VALUE_CONTAINS = "value_contains"
    VALUE_EQUALS_EVIDENCE = "value_equals_evidence"
    REACHES_STEP_WITH_APP = "reaches_step_with_app"
    ORDERED_AFTER = "ordered_after"


BBox = tuple[int, int, int, int]


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    x: int = 0
    y: int = 0
    x_end: int = 0
    y_end: int = 0
    value: str = ""
    direction: Optional[Direction] = None
    distance_hint: Optional[DistanceHint] = None

    def describe(self) -> str:
        """Short human-readable rendering used in history digests."""
        k = self.kind
        if k in (ActionKind.TAP, ActionKind.LONG_PRESS):
            return f"{k.value}({self.x},{self.y})"
        if k is ActionKind.SWIPE_TWO_POINTS:
            return f"{k.value}({self.x},{self.y}->{self.x_end},{self.y_end})"
        if k is ActionKind.SWIPE:
            d = self.direction.value if self.direction else "?"
            return f"swipe({d})"
        if k in (ActionKind.INPUT_TEXT, ActionKind.OPEN_APP):
            return f'{k.value}("{self.value}")'
        return k.value


@dataclass(frozen=True)
class UiElement:
    bbox: BBox
    text: Optional[str] = None
    role: Optional[str] = None

    @property
    def center(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.bbox
        return (x0 + x1) // 2, (y0 + y1) // 2


@dataclass(frozen=True)
class UiState:
    step_index: int
    screenshot_ref: str
    app: str
    elements: Optional[tuple[UiElement, ...]] = None

    def element_texts(self) -> list[str]:
        return [e.text for e in (self.elements or ()) if e.text]


@dataclass(frozen=True)
class EvidenceRef:
    step_index: int
    element_bbox: Optional[BBox] = None
    extracted_value: Optional[str] = None


@dataclass(frozen=True)
class CausalLink:
    source_anchor_id: str
    relation: LinkRelation


@dataclass(frozen=True)
class AnchorPredicate:
    """Machine-checkable success condition attached to a ground-truth anchor.

    Which parameters are used depends on ``kind``:

    * ``action_kind_at_step_range``: ``action_kind`` and ``step_range``
    * ``value_contains``: ``text`` and ``step_range``
    * ``value_equals_evidence``: ``evidence`` and ``step_range``
    * ``reaches_step_with_app``: ``text`` (the app name) and ``step_range``
    * ``ordered_after``: ``anchor_id`` (must be witnessed first) and
      ``then`` (an inner predicate that must be witnessed strictly later)
    """

    kind: PredicateKind
    step_range: Optional[tuple[int, int]] = None
    text: Optional[str] = None
    action_kind: Optional[ActionKind] = None
    evidence: Optional[EvidenceRef] = None
    anchor_id: Optional[str] = None
    then: Optional["AnchorPredicate"] = None


@dataclass(frozen=True)
class Anchor:
    id: str
    type: AnchorType
    content: str
    description: str = ""
    evidence: tuple[EvidenceRef, ...] = ()
    links: tuple[CausalLink, ...] = ()
    status: AnchorStatus = AnchorStatus.ACTIVE
    predicate: Optional[AnchorPredicate] = None

    @property
    def created_step(self) -> int:
        """Step at which the anchor was grounded (latest evidence step)."""
        return max((e.step_index for e in self.evidence), default=-1)


@dataclass(frozen=True)
class Step:
    state: UiState
    action: Action
    reasoning: Optional[str] = None
    summary: Optional[str] = None
    gt_anchors: tuple[Anchor, ...] = ()


@dataclass(frozen=True)
class Task:
    id: str
    instruction: str
    intent: Intent
    apps: tuple[str, ...]
    steps: tuple[Step, ...]
    final_anchor_id: str

    def __len__(self) -> int:
        return len(self.steps)

    def anchors(self) -> list[Anchor]:
        return [a for s in self.steps for a in s.gt_anchors]

    def anchor_steps(self) -> dict[str, int]:
        """Map anchor id to the index of the step that carries it."""
        return {a.id: i for i, s in enumerate(self.steps) for a in s.gt_anchors}

    def anchor(self, anchor_id: str) -> Anchor:
        for a in self.anchors():
            if a.id == anchor_id:
                return a
        raise KeyError(anchor_id)


# ---------------------------------------------------------------------------
# validation and geometry


def _in_range(v: int) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= COORD_MAX


def validate_action(a: Action) -> list[str]:
    """Return every invariant violation of ``a``; an empty list means valid."""
    errors: list[str] = []
    if not isinstance(a.kind, ActionKind):
        return [f"unknown action kind: {a.kind!r}"]
    for name in ("x", "y", "x_end", "y_end"):
        if not _in_range(getattr(a, name)):
            errors.append(f"{name} out of range")
    k = a.kind
    uses_start = k in (ActionKind.TAP, ActionKind.LONG_PRESS, ActionKind.SWIPE_TWO_POINTS)
    uses_end = k is ActionKind.SWIPE_TWO_POINTS
    # swipe may carry its start point (pos1 in the action table)
    if not uses_start and k is not ActionKind.SWIPE and (a.x or a.y):
        errors.append("unused coordinates must be 0")
    if not uses_end and (a.x_end or a.y_end):
        errors.append("unused end coordinates must be 0")
    if uses_end and (a.x, a.y) == (a.x_end, a.y_end):
        errors.append("endpoints must differ")
    if k is ActionKind.SWIPE and a.direction is None:
        errors.append("swipe requires direction")
    if k is not ActionKind.SWIPE and (a.direction is not None or a.distance_hint is not None):
        errors.append("direction/distance only valid for swipe")
    if k in (ActionKind.INPUT_TEXT, ActionKind.OPEN_APP) and not a.value.strip():
        errors.append(f"{k.value} requires non-empty value")
    return errors


class DegenerateSwipeError(ValueError):
    pass


def swipe_direction(x: int, y: int, x_end: int, y_end: int) -> Direction:
    """Dominant-axis direction of a two-point swipe; ties go to the vertical axis."""
    dx, dy = x_end - x, y_end - y
    if dx == 0 and dy == 0:
        raise DegenerateSwipeError("degenerate swipe")
    if abs(dy) >= abs(dx):
        return Direction.UP if dy < 0 else Direction.DOWN
    return Direction.LEFT if dx < 0 else Direction.RIGHT


def normalized_distance(x0: int, y0: int, x1: int, y1: int) -> float:
    return math.hypot((x1 - x0) / COORD_MAX, (y1 - y0) / COORD_MAX)


def bbox_contains(bbox: BBox, x: int, y: int) -> bool:
    x0, y0, x1, y1 = bbox
    return x0 <= x <= x1 and y0 <= y <= y1


# ---------------------------------------------------------------------------
# (de)serialization


class TaskParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _enum_value(v: Any) -> Any:
    return v.value if isinstance(v, enum.Enum) else v


def _action_to_dict(a: Action) -> dict:
    return {
        "kind": a.kind.value,
        "x": a.x,
        "y": a.y,
        "x_end": a.x_end,
        "y_end": a.y_end,
        "value": a.value,
        "direction": _enum_value(a.direction),
        "distance_hint": _enum_value(a.distance_hint),
    }


def _evidence_to_dict(e: EvidenceRef) -> dict:
    return {
        "step_index": e.step_index,
        "element_bbox": list(e.element_bbox) if e.element_bbox is not None else None,
        "extracted_value": e.extracted_value,
    }


def _predicate_to_dict(p: AnchorPredicate) -> dict:
    return {
        "kind": p.kind.value,
        "step_range": list(p.step_range) if p.step_range is not None else None,
        "text": p.text,
        "action_kind": _enum_value(p.action_kind),
        "evidence": _evidence_to_dict(p.evidence) if p.evidence else None,
        "anchor_id": p.anchor_id,
        "then": _predicate_to_dict(p.then) if p.then else None,
    }


def anchor_to_dict(a: Anchor) -> dict:
    return {
        "id": a.id,
        "type": a.type.value,
        "content": a.content,
        "description": a.description,
        "evidence": [_evidence_to_dict(e) for e in a.evidence],
        "links": [
            {"source_anchor_id": l.source_anchor_id, "relation": l.relation.value}
            for l in a.links
        ],
        "status": a.status.value,
        "predicate": _predicate_to_dict(a.predicate) if a.predicate else None,
    }


def _state_to_dict(s: UiState) -> dict:
    return {
        "step_index": s.step_index,
        "screenshot_ref": s.screenshot_ref,
        "app": s.app,
        "elements": None
        if s.elements is None
        else [{"bbox": list(e.bbox), "text": e.text, "role": e.role} for e in s.elements],
    }


def task_to_dict(t: Task) -> dict:
    return {
        "id": t.id,
        "instruction": t.instruction,
        "intent": t.intent.value,
        "apps": list(t.apps),
        "steps": [
            {
                "state": _state_to_dict(s.state),
                "action": _action_to_dict(s.action),
                "reasoning": s.reasoning,
                "summary": s.summary,
                "gt_anchors": [anchor_to_dict(a) for a in s.gt_anchors],
            }
            for s in t.steps
        ],
        "final_anchor_id": t.final_anchor_id,
    }


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def serialize_task(t: Task) -> bytes:
    """Canonical single-line JSON encoding of a task (no trailing newline)."""
    return dumps_canonical(task_to_dict(t)).encode("utf-8")


class _Reader:
    """Field access helper that turns schema problems into TaskParseError."""

    def __init__(self, line: Optional[int]):
        self.line = line

    def fail(self, msg: str) -> TaskParseError:
        return TaskParseError(msg, self.line)

    def get(self, d: Any, key: str, path: str = "", *, required: bool = True, default: Any = None):
        if not isinstance(d, dict):
            raise self.fail(f"expected object at {path or '<root>'}")
        if key not in d:
            if required:
                raise self.fail(f"missing field: {path}{key}")
            return default
        return d[key]

    def enum(self, cls: type[enum.Enum], v: Any, where: str):
        try:
            return cls(v)
        except ValueError:
            raise self.fail(f"invalid value for {where}: {v!r}") from None

    def opt_enum(self, cls, v, where):
        return None if v is None else self.enum(cls, v, where)

    def integer(self, v: Any, where: str) -> int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.fail(f"expected integer for {where}")
        return v

    def string(self, v: Any, where: str) -> str:
        if not isinstance(v, str):
            raise self.fail(f"expected string for {where}")
        return v

    def bbox(self, v: Any, where: str) -> BBox:
        if not isinstance(v, (list, tuple)) or len(v) != 4:
            raise self.fail(f"expected 4-element bbox for {where}")
        return tuple(self.integer(c, where) for c in v)  # type: ignore[return-value]


def _parse_action(r: _Reader, d: dict, where: str) -> Action:
    g = lambda k, default=None, req=False: r.get(d, k, where + ".", required=req, default=default)
    return Action(
        kind=r.enum(ActionKind, g("kind", req=True), where + ".kind"),
        x=r.integer(g("x", 0), where + ".x"),
        y=r.integer(g("y", 0), where + ".y"),
        x_end=r.integer(g("x_end", 0), where + ".x_end"),
        y_end=r.integer(g("y_end", 0), where + ".y_end"),
        value=r.string(g("value", ""), where + ".value"),
        direction=r.opt_enum(Direction, g("direction"), where + ".direction"),
        distance_hint=r.opt_enum(DistanceHint, g("distance_hint"), where + ".distance_hint"),
    )


def _parse_evidence(r: _Reader, d: dict, where: str) -> EvidenceRef:
    bbox = r.get(d, "element_bbox", where + ".", required=False)
    val = r.get(d, "extracted_value", where + ".", required=False)
    return EvidenceRef(
        step_index=r.integer(r.get(d, "step_index", where + "."), where + ".step_index"),
        element_bbox=None if bbox is None else r.bbox(bbox, where + ".element_bbox"),
        extracted_value=None if val is None else r.string(val, where + ".extracted_value"),
    )


def _parse_predicate(r: _Reader, d: dict, where: str) -> AnchorPredicate:
    g = lambda k: r.get(d, k, where + ".", required=False)
    rng = g("step_range")
    if rng is not None:
        if not isinstance(rng, list) or len(rng) != 2:
            raise r.fail(f"expected [lo, hi] for {where}.step_range")
        rng = (r.integer(rng[0], where + ".step_range"), r.integer(rng[1], where + ".step_range"))
    ev, then = g("evidence"), g("then")
    return AnchorPredicate(
        kind=r.enum(PredicateKind, r.get(d, "kind", where + "."), where + ".kind"),
        step_range=rng,
        text=g("text"),
        action_kind=r.opt_enum(ActionKind, g("action_kind"), where + ".action_kind"),
        evidence=None if ev is None else _parse_evidence(r, ev, where + ".evidence"),
        anchor_id=g("anchor_id"),
        then=None if then is None else _parse_predicate(r, then, where + ".then"),
    )


def anchor_from_dict(d: dict, where: str = "anchor", line: Optional[int] = None) -> Anchor:
    r = _Reader(line)
    g = lambda k, req=True, default=None: r.get(d, k, where + ".", required=req, default=default)
    pred = g("predicate", False)
    return Anchor(
        id=r.string(g("id"), where + ".id"),
        type=r.enum(AnchorType, g("type"), where + ".type"),
        content=r.string(g("content"), where + ".content"),
        description=r.string(g("description", False, ""), where + ".description"),
        evidence=tuple(
            _parse_evidence(r, e, f"{where}.evidence[{i}]") for i, e in enumerate(g("evidence", False, []))
        ),
        links=tuple(
            CausalLink(
                source_anchor_id=r.string(r.get(l, "source_anchor_id", f"{where}.links[{i}]."), "link source"),
                relation=r.enum(LinkRelation, r.get(l, "relation", f"{where}.links[{i}]."), "link relation"),
            )
            for i, l in enumerate(g("links", False, []))
        ),
        status=r.enum(AnchorStatus, g("status", False, "active"), where + ".status"),
        predicate=None if pred is None else _parse_predicate(r, pred, where + ".predicate"),
    )


def task_from_dict(d: dict, line: Optional[int] = None) -> Task:
    r = _Reader(line)
    raw_steps = r.get(d, "steps")
    if not isinstance(raw_steps, list):
        raise r.fail("expected list for steps")
    steps = []
    for i, sd in enumerate(raw_steps):
        w = f"steps[{i}]"
        st = r.get(sd, "state", w + ".")
        els = r.get(st, "elements", w + ".state.", required=False)
        elements = None
        if els is not None:
            elements = tuple(
                UiElement(
                    bbox=r.bbox(r.get(e, "bbox", f"{w}.state.elements[{j}]."), f"{w}.state.elements[{j}].bbox"),
                    text=r.get(e, "text", "", required=False),
                    role=r.get(e, "role", "", required=False),
                )
                for j, e in enumerate(els)
            )
        state = UiState(
            step_index=r.integer(r.get(st, "step_index", w + ".state."), w + ".state.step_index"),
            screenshot_ref=r.string(r.get(st, "screenshot_ref", w + ".state."), w + ".state.screenshot_ref"),
            app=r.string(r.get(st, "app", w + ".state."), w + ".state.app"),
            elements=elements,
        )
        steps.append(
            Step(
                state=state,
                action=_parse_action(r, r.get(sd, "action", w + "."), w + ".action"),
                reasoning=r.get(sd, "reasoning", w + ".", required=False),
                summary=r.get(sd, "summary", w + ".", required=False),
                gt_anchors=tuple(
                    anchor_from_dict(a, f"{w}.gt_anchors[{j}]", line)
                    for j, a in enumerate(r.get(sd, "gt_anchors", w + ".", required=False, default=[]))
                ),
            )
        )
    task = Task(
        id=r.string(r.get(d, "id"), "id"),
        instruction=r.string(r.get(d, "instruction"), "instruction"),
        intent=r.enum(Intent, r.get(d, "intent"), "intent"),
        apps=tuple(r.string(a, "apps") for a in r.get(d, "apps")),
        steps=tuple(steps),
        final_anchor_id=r.string(r.get(d, "final_anchor_id"), "final_anchor_id"),
    )
    problems = check_task_structure(task)
    if problems:
        raise TaskParseError(problems[0], line)
    return task


def parse_task(data: bytes | str, line: Optional[int] = None) -> Task:
    """Parse one task record; raises TaskParseError naming the field and line."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as e:
        raise TaskParseError(f"invalid JSON: {e.msg}", line) from None
    return task_from_dict(obj, line)


def check_task_structure(task: Task) -> list[str]:
    """Structural invariants a task must satisfy to be parsed."""
    problems: list[str] = []
    if not task.steps:
        return ["task has no steps"]
    n = len(task.steps)
    seen_idx = set()
    for i, s in enumerate(task.steps):
        if s.state.step_index in seen_idx:
            problems.append(f"duplicate step_index {s.state.step_index}")
        seen_idx.add(s.state.step_index)
        if s.action.kind is ActionKind.FINISH and i != n - 1:
            problems.append("finish action must be the last step")
        for e in s.state.elements or ():
            x0, y0, x1, y1 = e.bbox
            if not all(0 <= c <= COORD_MAX for c in e.bbox) or not (x0 < x1 and y0 < y1):
                problems.append(f"invalid element bbox at step {i}")

    created: dict[str, tuple[int, int]] = {}
    order = 0
    finishes = 0
    for i, s in enumerate(task.steps):
        for a in s.gt_anchors:
            if a.id in created:
                problems.append(f"duplicate anchor id {a.id}")
            for ev in a.evidence:
                if not 0 <= ev.step_index < n:
                    problems.append(f"evidence step out of range in anchor {a.id}")
                elif ev.step_index > i:
                    problems.append(f"evidence after creation step in anchor {a.id}")
            for link in a.links:
                if link.source_anchor_id not in created:
                    problems.append("causal link target not yet created")
            created[a.id] = (i, order)
            order += 1
        finishes += sum(1 for a in s.gt_anchors if a.type is AnchorType.FINISH)
    if finishes > 1:
        problems.append("more than one FINISH anchor")
    fin = next((a for a in task.anchors() if a.id == task.final_anchor_id), None)
    if fin is None or fin.type is not AnchorType.FINISH:
        problems.append("final_anchor_id does not resolve to a FINISH anchor")
    if not problems and not is_acyclic(task.anchors()):
        problems.append("anchor links contain a cycle")
    return problems


def is_acyclic(anchors: Iterable[Anchor]) -> bool:
    ts = graphlib.TopologicalSorter()
    for a in anchors:
        ts.add(a.id, *(l.source_anchor_id for l in a.links))
    try:
        tuple(ts.static_order())
    except graphlib.CycleError:
        return False
    return True
