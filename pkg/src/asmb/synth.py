"""Seeded generator of long-horizon synthetic tasks with planted dependencies.

Each task opens a source app, reads one or more planted values off detail
pages, switches to a destination app, types the values back in, submits and
finishes. Navigation filler (taps, swipes, back, wait) pads the trajectory to
the sampled length. Ground-truth anchors carry predicates that the task's own
actions satisfy, so an oracle replay is always a TCR success.

Per-task randomness comes from ``task_seed(suite_seed, index)``; there is no
global RNG.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .domain import (
    Action,
    ActionKind,
    Anchor,
    AnchorPredicate,
    AnchorType,
    CausalLink,
    Direction,
    EvidenceRef,
    Intent,
    LinkRelation,
    PredicateKind,
    Step,
    Task,
    UiElement,
    UiState,
    check_task_structure,
    is_acyclic,
    serialize_task,
)

GENERATOR_VERSION = "1.0"

APP_POOL = (
    "ShopMart", "QuickBuy", "ChatLine", "MailBox", "NoteKeeper", "TripPlan",
    "FoodDash", "CityMaps", "PayWallet", "CalendarPro", "SocialHub", "DocsEdit",
)

NAME_POOL = (
    "Alice Chen", "Bob Li", "Carol Wang", "David Zhao", "Erin Sun", "Frank Wu",
    "Grace Lin", "Henry Xu", "Iris Zhou", "Jack Ma", "Kate Hu", "Leo Guo",
)

# (label, value kind) for planted values
_SLOTS = (
    ("price", "price"),
    ("order code", "code"),
    ("pickup code", "code"),
    ("contact", "name"),
    ("total", "price"),
    ("booking ref", "code"),
)

_FILTERS = ("sort by sales", "price low to high", "date: tomorrow", "city: Hangzhou", "in stock only", "rating 4+")

_INSTRUCTION = {
    Intent.LOOKUP: "Look up the {slots} in {src}, then record it in {dst}.",
    Intent.COMPARE_DECIDE: "Check the {slots} in {src} and use them to decide in {dst}.",
    Intent.PURCHASE_ORDER: "Find the {slots} for the order in {src} and complete the order in {dst}.",
    Intent.BOOKING: "Get the {slots} from {src} and use them to finish the booking in {dst}.",
    Intent.COMMUNICATE: "Read the {slots} in {src} and send them to a contact via {dst}.",
    Intent.SHARE_RECOMMEND: "Share the {slots} shown in {src} with a friend on {dst}.",
    Intent.CREATE_CONTENT: "Write a note in {dst} that includes the {slots} from {src}.",
    Intent.CONFIGURE_AUTHORIZE: "Copy the {slots} from {src} into the settings form in {dst}.",
}


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_tasks: int = 100
    length_range: tuple[int, int] = (20, 60)
    gap_range: tuple[int, int] = (10, 15)
    chains_range: tuple[int, int] = (1, 2)
    # when set, chains = max(1, (length - 10) // chain_spacing) and every
    # value is reused in a block just before submit, so gaps grow with length
    chain_spacing: Optional[int] = None
    exception_prob: float = 0.5
    # chance that step summaries keep mentioning a value until it is reused
    summary_retention: float = 0.5
    intent_mix: Optional[dict[str, float]] = None
    app_pool_size: int = 8

    def problems(self) -> list[str]:
        out = []
        for name in ("length_range", "gap_range", "chains_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                out.append(f"{name} must be a non-empty range of positive integers")
        if self.length_range[0] <= self.gap_range[1] + 4:
            out.append("min length must exceed max dependency gap + 4")
        if self.chain_spacing is not None and self.chain_spacing < 1:
            out.append("chain_spacing must be >= 1")
        if not 2 <= self.app_pool_size <= len(APP_POOL):
            out.append(f"app_pool_size must be in [2, {len(APP_POOL)}]")
        if self.num_tasks < 0:
            out.append("num_tasks must be >= 0")
        for p in ("exception_prob", "summary_retention"):
            if not 0.0 <= getattr(self, p) <= 1.0:
                out.append(f"{p} must be in [0, 1]")
        if self.intent_mix is not None:
            bad = [k for k in self.intent_mix if k not in {i.value for i in Intent}]
            if bad:
                out.append(f"unknown intents in intent_mix: {bad}")
            if any(v < 0 for v in self.intent_mix.values()) or sum(self.intent_mix.values()) <= 0:
                out.append("intent_mix weights must be non-negative with positive sum")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise GenerationError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("length_range", "gap_range", "chains_range"):
            d[k] = list(d[k])
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def task_seed(suite_seed: int, index: int) -> int:
    """Per-task seed: first 8 bytes of sha256("<suite_seed>:<index>")."""
    digest = hashlib.sha256(f"{suite_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# ---------------------------------------------------------------------------
# pages


def _el(x0, y0, x1, y1, text, role=None) -> UiElement:
    return UiElement((x0, y0, x1, y1), text, role)


def _rows(texts: Sequence[str], top: int = 200, role: str = "list_item") -> tuple[UiElement, ...]:
    return tuple(_el(60, top + 110 * i, 940, top + 110 * i + 90, t, role) for i, t in enumerate(texts))


class _Builder:
    def __init__(self, rng: random.Random, task_id: str):
        self.rng = rng
        self.task_id = task_id
        self.steps: list[Optional[Step]] = []

    def screen(self, t: int) -> str:
        return f"synth://{self.task_id}/{t}.png"

    def filler(self, t: int, app: str) -> Step:
        rng = self.rng
        k = rng.randrange(100)
        header = _el(0, 60, 1000, 160, f"{app} · page {rng.randint(1, 9)}", "header")
        items = _rows([f"Item {rng.randint(1, 40)}" for _ in range(rng.randint(3, 6))])
        els = (header,) + items
        state = UiState(t, self.screen(t), app, els)
        if k < 55:
            target = rng.choice(items)
            cx, cy = target.center
            action = Action(ActionKind.TAP, cx, cy)
            summary = f"Browsing {app}."
        elif k < 75:
            d = rng.choice([Direction.UP, Direction.DOWN])
            action = Action(ActionKind.SWIPE, 500, 700 if d is Direction.UP else 300, direction=d)
            summary = f"Scrolling in {app}."
        elif k < 85:
            y0 = rng.randint(250, 750)
            action = Action(ActionKind.SWIPE_TWO_POINTS, 500, y0, 500, y0 - rng.randint(150, 200))
            summary = f"Scrolling in {app}."
        elif k < 95:
            action = Action(ActionKind.BACK)
            summary = f"Navigating back in {app}."
        else:
            action = Action(ActionKind.WAIT)
            summary = f"Waiting for {app} to load."
        return Step(state, action, summary=summary)


def _values(rng: random.Random, n: int) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    used: set[str] = set()
    names = list(NAME_POOL)
    rng.shuffle(names)
    while len(out) < n:
        label, kind = rng.choice(_SLOTS)
        if kind == "price":
            value = f"¥{rng.randint(100, 9999)}"
        elif kind == "code":
            value = f"#{rng.randint(1000, 9999)}"
        else:
            if not names:
                continue
            value = names.pop()
        # "¥4609" and "#4609" compare equal numerically, so key on the digits
        key = value.lstrip("¥#")
        if key in used:
            continue
        used.add(key)
        out.append((label, value))
    return out


def _layout(rng: random.Random, cfg: SynthConfig, length: int, n: int) -> tuple[list[int], list[int], int]:
    """Pick extraction steps, reuse steps and the app-switch step."""
    last = length - 3  # last step available for reuse (length-2 submit, length-1 finish)
    if cfg.chain_spacing is not None:
        extract = list(range(1, n + 1))
        reuse = list(range(last - n + 1, last + 1))
        if reuse[0] - extract[-1] < 2:
            raise GenerationError(f"length {length} too short for {n} chains")
        switch = rng.randint(extract[-1] + 1, reuse[0] - 1)
        return extract, reuse, switch
    for _ in range(2000):
        gaps = [rng.randint(*cfg.gap_range) for _ in range(n)]
        switch = rng.randint(2, last - 1)
        if switch - 1 < n:
            continue
        extract = sorted(rng.sample(range(1, switch), n))
        reuse = [e + g for e, g in zip(extract, gaps)]
        if len(set(reuse)) == n and all(switch < r <= last for r in reuse):
            return extract, reuse, switch
    raise GenerationError(
        f"cannot place {n} dependency chains with gaps {cfg.gap_range} in {length} steps"
    )


def generate_task(
    seed: int, config: SynthConfig, intent: Optional[Intent] = None, task_id: Optional[str] = None
) -> Task:
    config.validate()
    rng = random.Random(seed)
    task_id = task_id or f"synth-{seed}"
    length = rng.randint(*config.length_range)
    if config.chain_spacing is not None:
        n = max(1, (length - 10) // config.chain_spacing)
    else:
        n = rng.randint(*config.chains_range)
    if intent is None:
        intent = rng.choice(list(Intent))
    pool = list(APP_POOL[: config.app_pool_size])
    src, dst = rng.sample(pool, 2)

    extract, reuse, switch = _layout(rng, config, length, n)
    slots = _values(rng, n)
    retained = [rng.random() < config.summary_retention for _ in range(n)]
    submit, finish = length - 2, length - 1
    reserved = {0, switch, submit, finish, *extract, *reuse}
    free_src = [t for t in range(1, switch) if t not in reserved]
    free_any = [t for t in range(1, submit) if t not in reserved]
    context_step = rng.choice(free_src) if free_src else None
    popup_candidates = [t for t in free_any if t != context_step]
    popup_step = (
        rng.choice(popup_candidates) if popup_candidates and rng.random() < config.exception_prob else None
    )

    b = _Builder(rng, task_id)
    steps: list[Optional[Step]] = [None] * length
    anchors: dict[int, Anchor] = {}
    aid = iter(f"{task_id}-a{i}" for i in range(10_000))

    def app_at(t: int) -> str:
        return src if t < switch + 1 else dst

    # step 0: launcher
    launcher = UiState(0, b.screen(0), "launcher", _rows([src, dst, "Settings"], top=300, role="app_icon"))
    steps[0] = Step(launcher, Action(ActionKind.OPEN_APP, value=src), summary=f"Opened {src}.")
    opened = Anchor(
        next(aid), AnchorType.STATE_CHANGE, f"opened {src}", f"work starts in {src}",
        (EvidenceRef(0),),
        predicate=AnchorPredicate(PredicateKind.REACHES_STEP_WITH_APP, (0, 0), text=src),
    )
    anchors[0] = opened

    dep_anchors: list[Anchor] = []
    for i, (e, (label, value)) in enumerate(zip(extract, slots)):
        planted = _el(60, 420, 940, 520, f"{label.capitalize()}: {value}", "text")
        els = (_el(0, 60, 1000, 160, f"{src} · details", "header"), planted, _el(60, 600, 940, 690, "Copy", "button"))
        cx, cy = planted.center
        steps[e] = Step(
            UiState(e, b.screen(e), src, els),
            Action(ActionKind.LONG_PRESS, cx, cy),
            reasoning=f"The {label} is needed later in {dst}.",
            summary=f"Found the {label} in {src}.",
        )
        ev = EvidenceRef(e, planted.bbox, value)
        dep = Anchor(
            next(aid), AnchorType.DEPENDENCY, f"{label} {value} noted in {src}",
            f"the {label} must be entered in {dst}",
            (ev,),
            predicate=AnchorPredicate(PredicateKind.VALUE_CONTAINS, (switch + 1, submit - 1), text=value),
        )
        anchors[e] = dep
        dep_anchors.append(dep)

    if context_step is not None:
        flt = rng.choice(_FILTERS)
        chip = _el(60, 180, 480, 260, flt, "chip")
        els = (_el(0, 60, 1000, 160, f"{src} · search", "header"), chip) + _rows(["Item 1", "Item 2"], top=320)
        steps[context_step] = Step(
            UiState(context_step, b.screen(context_step), src, els),
            Action(ActionKind.TAP, *chip.center),
            summary=f"Applied filter {flt} in {src}.",
        )
        anchors[context_step] = Anchor(
            next(aid), AnchorType.CONTEXT_INFO, f"filter {flt} applied", "constrains the listed results",
            (EvidenceRef(context_step, chip.bbox),),
            predicate=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (context_step, context_step), action_kind=ActionKind.TAP),
        )

    # app switch
    els = (_el(0, 60, 1000, 160, f"{src} · done", "header"),)
    steps[switch] = Step(
        UiState(switch, b.screen(switch), src, els),
        Action(ActionKind.OPEN_APP, value=dst),
        summary=f"Switching from {src} to {dst}.",
    )
    switched = Anchor(
        next(aid), AnchorType.STATE_CHANGE, f"switched to {dst}", f"the values are entered in {dst}",
        (EvidenceRef(switch),),
        predicate=AnchorPredicate(PredicateKind.REACHES_STEP_WITH_APP, (switch, switch), text=dst),
    )
    anchors[switch] = switched

    entered: list[tuple[int, Anchor]] = []
    for (r, dep, (label, value)) in zip(reuse, dep_anchors, slots):
        field_el = _el(60, 400, 940, 500, f"Enter {label}", "text_field")
        els = (_el(0, 60, 1000, 160, f"{dst} · compose", "header"), field_el, _el(700, 800, 940, 880, "Send", "button"))
        steps[r] = Step(
            UiState(r, b.screen(r), dst, els),
            Action(ActionKind.INPUT_TEXT, value=value),
            reasoning=f"Type the {label} read earlier in {src}.",
            summary=f"Entered the {label} in {dst}.",
        )
        a = Anchor(
            next(aid), AnchorType.SUBGOAL, f"entered {label} {value} in {dst}", f"the {label} is filled in",
            (EvidenceRef(r, field_el.bbox, value),),
            links=(CausalLink(dep.id, LinkRelation.RESULT_OF), CausalLink(switched.id, LinkRelation.PREREQUISITE)),
            predicate=AnchorPredicate(
                PredicateKind.VALUE_EQUALS_EVIDENCE, (switch + 1, submit - 1), evidence=dep.evidence[0]
            ),
        )
        anchors[r] = a
        entered.append((r, a))

    exception_anchor = None
    if popup_step is not None:
        app = app_at(popup_step)
        close = _el(860, 240, 940, 320, "×", "button")
        els = (_el(100, 200, 900, 800, f"Limited offer in {app}!", "dialog"), close)
        steps[popup_step] = Step(
            UiState(popup_step, b.screen(popup_step), app, els),
            Action(ActionKind.TAP, *close.center),
            summary=f"Closed a pop-up ad in {app}.",
        )
        exception_anchor = Anchor(
            next(aid), AnchorType.EXCEPTION, f"pop-up ad dismissed in {app}", "the ad blocked the screen",
            (EvidenceRef(popup_step, close.bbox),),
            predicate=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (popup_step, popup_step), action_kind=ActionKind.TAP),
        )
        anchors[popup_step] = exception_anchor

    send = _el(700, 800, 940, 880, "Submit", "button")
    steps[submit] = Step(
        UiState(submit, b.screen(submit), dst, (_el(0, 60, 1000, 160, f"{dst} · review", "header"), send)),
        Action(ActionKind.TAP, *send.center),
        summary=f"Submitting in {dst}.",
    )
    last_entered = max(entered)[1]
    prereqs = [CausalLink(a.id, LinkRelation.PREREQUISITE) for _, a in entered]
    if exception_anchor is not None:
        prereqs.append(CausalLink(exception_anchor.id, LinkRelation.PREREQUISITE))
    submitted = Anchor(
        next(aid), AnchorType.SUBGOAL, f"submitted in {dst}", "all values are in place",
        (EvidenceRef(submit, send.bbox),),
        links=tuple(prereqs),
        predicate=AnchorPredicate(
            PredicateKind.ORDERED_AFTER,
            anchor_id=last_entered.id,
            then=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (submit, submit), action_kind=ActionKind.TAP),
        ),
    )
    anchors[submit] = submitted

    steps[finish] = Step(
        UiState(finish, b.screen(finish), dst, (_el(200, 400, 800, 500, "Sent successfully", "toast"),)),
        Action(ActionKind.FINISH),
        summary="Task complete.",
    )
    final = Anchor(
        next(aid), AnchorType.FINISH, f"task completed in {dst}", "terminal success state",
        (EvidenceRef(finish),),
        links=(CausalLink(submitted.id, LinkRelation.PREREQUISITE),),
        predicate=AnchorPredicate(PredicateKind.ACTION_KIND_AT_STEP_RANGE, (finish, finish), action_kind=ActionKind.FINISH),
    )
    anchors[finish] = final

    for t in range(length):
        if steps[t] is None:
            steps[t] = b.filler(t, app_at(t))

    # summaries: a value is mentioned from its extraction on, either until it
    # is reused (retained) or for two steps only
    final_steps = []
    for t, s in enumerate(steps):
        notes = [
            f"Noted {label} {value}."
            for (label, value), e, r, keep in zip(slots, extract, reuse, retained)
            if e <= t < (r if keep else min(r, e + 2))
        ]
        summary = " ".join([s.summary or ""] + notes).strip()
        final_steps.append(
            Step(s.state, s.action, s.reasoning, summary, (anchors[t],) if t in anchors else ())
        )

    slot_text = " and ".join(label for label, _ in slots)
    instruction = _INSTRUCTION[intent].format(slots=slot_text, src=src, dst=dst)
    task = Task(task_id, instruction, intent, (src, dst), tuple(final_steps), final.id)
    problems = check_task_structure(task)
    if problems:  # pragma: no cover - generator bug guard
        raise GenerationError(f"generated task {task_id} is malformed: {problems}")
    return task


# ---------------------------------------------------------------------------
# suites


def allocate_intents(mix: dict[str, float], n: int) -> list[Intent]:
    """Largest-remainder apportionment of ``n`` tasks over the intent mix."""
    items = sorted(mix.items())
    total = sum(w for _, w in items)
    quotas = [(k, n * w / total) for k, w in items]
    counts = {k: math.floor(q) for k, q in quotas}
    leftover = n - sum(counts.values())
    for k, q in sorted(quotas, key=lambda kq: (-(kq[1] - math.floor(kq[1])), kq[0]))[:leftover]:
        counts[k] += 1
    return [Intent(k) for k, _ in items for _ in range(counts[k])]


def generate_suite(config: SynthConfig) -> list[Task]:
    config.validate()
    mix = config.intent_mix or {i.value: 1.0 for i in Intent}
    intents = allocate_intents(mix, config.num_tasks)
    random.Random(config.seed).shuffle(intents)
    return [
        generate_task(task_seed(config.seed, i), config, intent, task_id=f"s{config.seed}-t{i:04d}")
        for i, intent in enumerate(intents)
    ]


def suite_manifest(config: SynthConfig, name: str = "synthetic") -> dict:
    return {
        "suite": name,
        "seed": config.seed,
        "generator_version": GENERATOR_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "num_tasks": config.num_tasks,
    }


def manifest_path(suite_path: Path) -> Path:
    return suite_path.with_name(suite_path.name + ".manifest.json")


def write_suite(path: Path, tasks: Sequence[Task], manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        for t in tasks:
            f.write(serialize_task(t) + b"\n")
    manifest = dict(manifest)
    manifest["num_tasks"] = len(tasks)
    manifest["suite_sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# self check


def self_check(task: Task, config: Optional[SynthConfig] = None) -> list[str]:
    """Replay the ground truth against the task's predicates; [] iff sound."""
    from .metrics import EvaluationError, _Witnesses

    problems = list(check_task_structure(task))
    anchors = task.anchors()
    if not is_acyclic(anchors):
        problems.append("anchor links contain a cycle")
    if sum(a.type is AnchorType.FINISH for a in anchors) != 1:
        problems.append("FINISH anchor must be unique")
    actions = [s.action for s in task.steps]
    wit = _Witnesses(task, actions)
    for a in anchors:
        p = a.predicate
        if p is None:
            problems.append(f"anchor {a.id} has no predicate")
            continue
        if p.step_range is not None and a.evidence and a.type is AnchorType.DEPENDENCY:
            if p.step_range[0] <= max(e.step_index for e in a.evidence):
                problems.append("predicate precedes evidence")
        try:
            w = wit(a.id)
        except EvaluationError as e:
            problems.append(f"evaluation_error in {a.id}: {e}")
            continue
        if w is None:
            problems.append(f"{p.kind.value} unsatisfied by GT")
            continue
        if a.type is AnchorType.DEPENDENCY and a.evidence:
            gap = w - a.evidence[0].step_index
            if config is not None and config.chain_spacing is None:
                lo, hi = config.gap_range
                if not lo <= gap <= hi:
                    problems.append(f"dependency gap {gap} outside {lo}-{hi}")
            elif gap < 1:
                problems.append(f"dependency gap {gap} < 1")
    return problems


def read_suite(path: Path) -> list[Task]:
    """Load a line-delimited task file; parse errors carry the 1-based line."""
    from .domain import parse_task

    tasks = []
    with open(path, "rb") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                tasks.append(parse_task(line, line=lineno))
    return tasks


def read_manifest(path: Path) -> Optional[dict]:
    mp = manifest_path(Path(path))
    return json.loads(mp.read_text()) if mp.exists() else None
