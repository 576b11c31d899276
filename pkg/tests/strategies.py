"""Hypothesis strategies and invariant checks for memory-bank operation sequences."""

from __future__ import annotations

from hypothesis import strategies as st

from asmb.domain import Action, ActionKind, AnchorStatus, AnchorType, CausalLink, LinkRelation, UiState, is_acyclic
from asmb.memory import AnchorProposal, MemoryBank, RetrievalKind, RetrievalStrategy, retrieve, update

CONTENTS = ["logged in", "Logged  IN", "cart opened", "price 42 noted", "payment confirmed", "popup shown", "done"]
APPS = ["Shop", "Pay", "Mail"]
STRATEGIES = [
    RetrievalStrategy(RetrievalKind.ALL_ACTIVE),
    RetrievalStrategy(RetrievalKind.RECENCY_TOP_K, k=1),
    RetrievalStrategy(RetrievalKind.RECENCY_TOP_K, k=3),
    RetrievalStrategy(RetrievalKind.LINK_CLOSURE),
]

# link sources and invalidation targets refer to anchors by id (m1, m2, ...),
# by content, or to something that does not exist
refs = st.one_of(st.sampled_from([f"m{i}" for i in range(1, 8)]), st.sampled_from(CONTENTS), st.just("ghost"))

proposals = st.builds(
    AnchorProposal,
    content=st.sampled_from(CONTENTS + [""]),
    type=st.one_of(st.none(), st.sampled_from(list(AnchorType))),
    links=st.lists(st.builds(CausalLink, refs, st.sampled_from(list(LinkRelation))), max_size=2).map(tuple),
    invalidate=st.one_of(st.none(), st.none(), refs),
    extracted_value=st.one_of(st.none(), st.sampled_from(["42", "Kate Hu"])),
)

op_sequences = st.lists(st.tuples(st.one_of(st.none(), proposals), st.sampled_from(APPS)), max_size=12)


def apply_and_check(ops, instruction: str = "confirm payment for the cart") -> list[str]:
    """Run ``ops`` through ``update``/``retrieve``; return invariant violations."""
    violations: list[str] = []
    bank = MemoryBank("t")
    for step, (proposal, app) in enumerate(ops):
        state = UiState(step, f"s{step}", app)
        for strat in STRATEGIES:
            got = retrieve(bank, state, instruction, strat)
            active_ids = {a.id for a in bank.active()}
            if not {a.id for a in got} <= active_ids:
                violations.append(f"step {step}: {strat.label()} returned inactive anchors")
            if got != retrieve(bank, state, instruction, strat):
                violations.append(f"step {step}: {strat.label()} not deterministic")
        if retrieve(bank, state, instruction, STRATEGIES[0]) != bank.active():
            violations.append(f"step {step}: all_active differs from active set")

        before = bank
        bank = update(bank, state, Action(ActionKind.WAIT), proposal, [])
        if bank.cursor < before.cursor:
            violations.append(f"step {step}: cursor decreased")
        for aid, old in before.anchors.items():
            new = bank.anchors.get(aid)
            if new is None:
                violations.append(f"step {step}: anchor {aid} disappeared")
            elif old.status is not AnchorStatus.ACTIVE and new.status is not old.status:
                violations.append(f"step {step}: anchor {aid} left terminal status {old.status.value}")
        if not is_acyclic(bank.anchors.values()):
            violations.append(f"step {step}: link graph has a cycle")
        for aid, links in bank.link_edges.items():
            if aid not in bank.anchors or any(l.source_anchor_id not in bank.anchors for l in links):
                violations.append(f"step {step}: dangling link edge at {aid}")
        if sum(a.type is AnchorType.FINISH for a in bank.active()) > 1:
            violations.append(f"step {step}: more than one active FINISH")

        if proposal is not None and proposal.invalidate is None:
            again = update(bank, state, Action(ActionKind.WAIT), proposal, [])
            if again.anchors != bank.anchors:
                violations.append(f"step {step}: repeating a proposal changed the bank")
    return violations
