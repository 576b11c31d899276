"""History representations: raw trace, coarse summary, and anchored state memory.

The anchored memory keeps a per-task bank of typed anchors linked into a DAG.
``retrieve`` selects the anchors shown to the policy before a step and
``update`` folds the policy's anchor proposal back into the bank after it.
Banks are treated as values: ``update`` returns a new bank and never mutates
its input, so a bank can be handed between workers between steps.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .domain import (
    Action,
    Anchor,
    AnchorStatus,
    AnchorType,
    CausalLink,
    EvidenceRef,
    LinkRelation,
    Step,
    UiState,
    anchor_to_dict,
)
from .tokens import estimate_tokens

logger = logging.getLogger(__name__)


class HistoryMode(str, enum.Enum):
    RAW = "raw"
    SUMMARY = "summary"
    ASM = "asm"


def normalize_content(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class AnchorProposal:
    """A policy's request to add (and/or invalidate) an anchor after a step."""

    content: str = ""
    type: Optional[AnchorType] = None
    description: str = ""
    links: tuple[CausalLink, ...] = ()
    invalidate: Optional[str] = None
    extracted_value: Optional[str] = None
    element_bbox: Optional[tuple[int, int, int, int]] = None
    # preferred id; scripted policies reuse ground-truth ids so links resolve
    anchor_id: Optional[str] = None


@dataclass(frozen=True)
class MemoryEvent:
    step_index: int
    event: str  # accepted | duplicate | proposal_error | status_change
    anchor_id: Optional[str] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "event": self.event,
            "anchor_id": self.anchor_id,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class MemoryBank:
    task_id: str
    anchors: dict[str, Anchor] = field(default_factory=dict)
    link_edges: dict[str, tuple[CausalLink, ...]] = field(default_factory=dict)
    cursor: int = -1
    dedup_index: dict[tuple[AnchorType, str], str] = field(default_factory=dict)

    def active(self) -> list[Anchor]:
        return [a for a in self.anchors.values() if a.status is AnchorStatus.ACTIVE]

    def resolve(self, ref: str) -> Optional[str]:
        """Resolve a link source given as an anchor id or as anchor content."""
        if ref in self.anchors:
            return ref
        norm = normalize_content(ref)
        # newest anchor with matching content wins
        for a in reversed(list(self.anchors.values())):
            if normalize_content(a.content) == norm:
                return a.id
        return None

    def snapshot(self) -> list[dict]:
        return [anchor_to_dict(a) for a in self.anchors.values()]


class RetrievalKind(str, enum.Enum):
    ALL_ACTIVE = "all_active"
    RECENCY_TOP_K = "recency_top_k"
    LINK_CLOSURE = "link_closure"


@dataclass(frozen=True)
class RetrievalStrategy:
    kind: RetrievalKind = RetrievalKind.ALL_ACTIVE
    k: int = 5
    # seed tokens shorter than this are ignored by link_closure
    min_token_len: int = 3

    def __post_init__(self):
        if self.kind is RetrievalKind.RECENCY_TOP_K and self.k < 1:
            raise ValueError("recency_top_k requires k >= 1")

    @classmethod
    def parse(cls, spec: str) -> "RetrievalStrategy":
        """Parse ``all_active``, ``recency_top_k:5`` or ``link_closure``."""
        name, _, arg = spec.partition(":")
        kind = RetrievalKind(name)
        if kind is RetrievalKind.RECENCY_TOP_K:
            return cls(kind, k=int(arg or 5))
        return cls(kind)

    def label(self) -> str:
        if self.kind is RetrievalKind.RECENCY_TOP_K:
            return f"recency_top_k:{self.k}"
        return self.kind.value


@dataclass(frozen=True)
class HistoryContext:
    mode: HistoryMode
    rendered_text: str
    token_estimate: int
    # anchors behind an asm rendering, for scripted policies that read them
    anchors: tuple[Anchor, ...] = ()


_STOPWORDS = frozenset("the and for with from into that this then than your you are was".split())


def _tokens(text: str, min_len: int) -> set[str]:
    return {
        t for t in re.findall(r"[^\W_]+", text.lower()) if len(t) >= min_len and t not in _STOPWORDS
    }


def retrieve(
    bank: MemoryBank, state: UiState, instruction: str, strategy: RetrievalStrategy
) -> list[Anchor]:
    if bank.cursor > state.step_index:
        raise ValueError("retrieval must precede the step's update")
    active = bank.active()
    if strategy.kind is RetrievalKind.ALL_ACTIVE:
        return active
    if strategy.kind is RetrievalKind.RECENCY_TOP_K:
        return active[-strategy.k :]

    query = _tokens(instruction, strategy.min_token_len) | _tokens(state.app, strategy.min_token_len)
    seeds = [a for a in active if _tokens(a.content, strategy.min_token_len) & query]
    out: list[str] = []
    seen: set[str] = set()

    def visit(aid: str) -> None:
        if aid in seen:
            return
        seen.add(aid)
        if bank.anchors[aid].status is AnchorStatus.ACTIVE:
            out.append(aid)
        for link in bank.link_edges.get(aid, ()):
            if link.relation in (LinkRelation.PREREQUISITE, LinkRelation.ENABLES):
                visit(link.source_anchor_id)

    # newest seed first, each followed by its causal sources
    for a in reversed(seeds):
        visit(a.id)
    return [bank.anchors[i] for i in out]


def _set_status(anchors: dict, aid: str, status: AnchorStatus, step: int, log: list) -> None:
    a = anchors[aid]
    if a.status is not AnchorStatus.ACTIVE:
        return
    anchors[aid] = replace(a, status=status)
    log.append(MemoryEvent(step, "status_change", aid, f"active->{status.value}"))


def update(
    bank: MemoryBank,
    state: UiState,
    action: Action,
    proposal: Optional[AnchorProposal],
    log: Optional[list[MemoryEvent]] = None,
) -> MemoryBank:
    """Fold one step into the bank and return the new bank.

    Rejected proposals (unknown link source or invalidation target) leave the
    bank unchanged apart from the cursor; every outcome is appended to ``log``.
    """
    if log is None:
        log = []
    step = state.step_index
    cursor = max(bank.cursor, step)
    if proposal is None:
        return replace(bank, cursor=cursor)

    links: list[CausalLink] = []
    for link in proposal.links:
        src = bank.resolve(link.source_anchor_id)
        if src is None:
            log.append(
                MemoryEvent(step, "proposal_error", None, f"unknown link source {link.source_anchor_id!r}")
            )
            return replace(bank, cursor=cursor)
        links.append(CausalLink(src, link.relation))
    invalid_target = None
    if proposal.invalidate is not None:
        invalid_target = bank.resolve(proposal.invalidate)
        if invalid_target is None:
            log.append(
                MemoryEvent(step, "proposal_error", None, f"unknown invalidation target {proposal.invalidate!r}")
            )
            return replace(bank, cursor=cursor)

    anchors = dict(bank.anchors)
    edges = dict(bank.link_edges)
    dedup = dict(bank.dedup_index)
    if invalid_target is not None:
        _set_status(anchors, invalid_target, AnchorStatus.INVALIDATED, step, log)

    content = proposal.content.strip()
    if content and proposal.type is not None:
        key = (proposal.type, normalize_content(content))
        existing = dedup.get(key)
        if existing is not None and anchors[existing].status is AnchorStatus.ACTIVE:
            log.append(MemoryEvent(step, "duplicate", existing, "matches an active anchor"))
        else:
            aid = proposal.anchor_id
            if not aid or aid in anchors:
                n = len(anchors) + 1
                while f"m{n}" in anchors:
                    n += 1
                aid = f"m{n}"
            if proposal.type is AnchorType.FINISH:
                for other in [a.id for a in anchors.values() if a.type is AnchorType.FINISH]:
                    _set_status(anchors, other, AnchorStatus.SUPERSEDED, step, log)
            anchors[aid] = Anchor(
                id=aid,
                type=proposal.type,
                content=content,
                description=proposal.description,
                evidence=(EvidenceRef(step, proposal.element_bbox, proposal.extracted_value),),
                links=tuple(links),
            )
            edges[aid] = tuple(links)
            dedup[key] = aid
            log.append(MemoryEvent(step, "accepted", aid, proposal.type.value))
            for link in links:
                if link.relation is LinkRelation.RESULT_OF:
                    _set_status(anchors, link.source_anchor_id, AnchorStatus.SUPERSEDED, step, log)

    return MemoryBank(bank.task_id, anchors, edges, cursor, dedup)


# ---------------------------------------------------------------------------
# rendering


def render_anchor(a: Anchor, source_content: dict[str, str]) -> str:
    steps = ",".join(str(e.step_index) for e in a.evidence)
    values = [e.extracted_value for e in a.evidence if e.extracted_value]
    ev = f"evidence: steps {steps}" + (f"; value {', '.join(values)}" if values else "")
    line = f"[{a.type.value}] {a.content} ({ev})"
    if a.links:
        parts = [f"{l.relation.value}→{source_content.get(l.source_anchor_id, l.source_anchor_id)}" for l in a.links]
        line += " links: " + "; ".join(parts)
    return f"{line} {{id: {a.id}}}"


_DROP_ORDER = (AnchorType.CONTEXT_INFO, AnchorType.SUBGOAL, AnchorType.STATE_CHANGE, AnchorType.EXCEPTION)


def render_asm_context(
    anchors: Sequence[Anchor], budget: int, bank: Optional[MemoryBank] = None
) -> HistoryContext:
    """Render retrieved anchors oldest first; shed low-value types when over budget.

    DEPENDENCY and FINISH anchors are never dropped, so the result can still
    exceed ``budget`` when those alone do.
    """
    pool = bank.anchors if bank is not None else {}
    source_content = {aid: a.content for aid, a in pool.items()}
    source_content.update({a.id: a.content for a in anchors})
    kept = list(anchors)
    lines = {a.id: render_anchor(a, source_content) for a in kept}

    def total() -> int:
        return estimate_tokens("\n".join(lines[a.id] for a in kept))

    for t in _DROP_ORDER:
        while total() > budget:
            victim = next((a for a in kept if a.type is t), None)
            if victim is None:
                break
            kept.remove(victim)
    text = "\n".join(lines[a.id] for a in kept)
    return HistoryContext(HistoryMode.ASM, text, estimate_tokens(text), tuple(kept))


def state_digest(state: UiState) -> str:
    texts = state.element_texts()
    digest = f"app={state.app} screen={state.screenshot_ref}"
    if texts:
        digest += " elements: " + " | ".join(f'"{t}"' for t in texts)
    return digest


def render_raw_context(steps_so_far: Sequence[Step], budget: int) -> HistoryContext:
    """Most recent (state digest, action) pairs; the oldest are dropped first."""
    lines: list[str] = []
    used = 0
    for s in reversed(steps_so_far):
        line = f"step {s.state.step_index}: {state_digest(s.state)} -> {s.action.describe()}"
        cost = estimate_tokens(line)
        if used + cost > budget:
            break
        lines.append(line)
        used += cost
    text = "\n".join(reversed(lines))
    return HistoryContext(HistoryMode.RAW, text, estimate_tokens(text))


def _tail_words(text: str, budget: int) -> str:
    words = text.split()
    while words and estimate_tokens(" ".join(words)) > budget:
        words.pop(0)
    return " ".join(words)


def render_summary_context(running_summary: str, budget: int) -> HistoryContext:
    """Pass the running summary through; only its tail survives an overflow."""
    text = running_summary
    if estimate_tokens(text) > budget:
        text = _tail_words(text, budget)
    return HistoryContext(HistoryMode.SUMMARY, text, estimate_tokens(text))


SCRIPTED_SUMMARY_KEEP = 5


def scripted_summary(steps_so_far: Sequence[Step], budget: int, keep: int = SCRIPTED_SUMMARY_KEEP) -> str:
    """Stand-in for a model-written summary: the last ``keep`` step summaries."""
    parts = [s.summary for s in steps_so_far[-keep:] if s.summary] if keep > 0 else []
    return _tail_words(" ".join(parts), budget)
