import pytest
from hypothesis import given, settings

from asmb.domain import (
    Action,
    ActionKind,
    AnchorStatus,
    AnchorType,
    CausalLink,
    LinkRelation,
    Step,
    UiState,
)
from asmb.memory import (
    AnchorProposal,
    HistoryMode,
    MemoryBank,
    RetrievalKind,
    RetrievalStrategy,
    normalize_content,
    render_asm_context,
    render_raw_context,
    render_summary_context,
    retrieve,
    scripted_summary,
    update,
)
from asmb.tokens import estimate_tokens

from strategies import STRATEGIES, apply_and_check, op_sequences

WAIT = Action(ActionKind.WAIT)


def st_(i, app="Shop"):
    return UiState(i, f"s{i}", app)


def propose(bank, step, content, atype=AnchorType.SUBGOAL, links=(), log=None, **kw):
    return update(bank, st_(step), WAIT, AnchorProposal(content=content, type=atype, links=links, **kw), log)


def test_normalize_content():
    assert normalize_content("  Logged \t IN ") == "logged in"


class TestRetrieve:
    @pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: s.label())
    def test_empty_bank(self, strategy):
        assert retrieve(MemoryBank("t"), st_(0), "anything", strategy) == []

    def test_status_filter(self):
        bank = propose(MemoryBank("t"), 0, "A1")
        bank = propose(bank, 1, "A2")
        bank = update(bank, st_(2), WAIT, AnchorProposal(invalidate="m2"))
        got = retrieve(bank, st_(3), "x", RetrievalStrategy())
        assert [a.content for a in got] == ["A1"]
        assert bank.anchors["m2"].status is AnchorStatus.INVALIDATED

    def test_link_closure_follows_prerequisites(self):
        bank = propose(MemoryBank("t"), 0, "opened settings")
        bank = propose(bank, 1, "unrelated banner")
        bank = propose(bank, 2, "payment confirmed", links=(CausalLink("m1", LinkRelation.PREREQUISITE),))
        got = retrieve(bank, st_(3, "Wallet"), "confirm the payment", RetrievalStrategy(RetrievalKind.LINK_CLOSURE))
        assert [a.id for a in got] == ["m3", "m1"]

    def test_recency(self):
        bank = MemoryBank("t")
        for i in range(6):
            bank = propose(bank, i, f"a{i}")
        got = retrieve(bank, st_(6), "", RetrievalStrategy(RetrievalKind.RECENCY_TOP_K, k=2))
        assert [a.content for a in got] == ["a4", "a5"]

    def test_parse_strategy(self):
        assert RetrievalStrategy.parse("recency_top_k:3") == RetrievalStrategy(RetrievalKind.RECENCY_TOP_K, k=3)
        assert RetrievalStrategy.parse("link_closure").label() == "link_closure"
        with pytest.raises(ValueError):
            RetrievalStrategy.parse("recency_top_k:0")
        with pytest.raises(ValueError):
            RetrievalStrategy.parse("vector")

    def test_cursor_ahead_of_state(self):
        bank = propose(MemoryBank("t"), 5, "x")
        with pytest.raises(ValueError):
            retrieve(bank, st_(4), "", RetrievalStrategy())


class TestUpdate:
    def test_first_insertion(self):
        log = []
        bank = propose(MemoryBank("t"), 3, "logged in", log=log)
        (a,) = bank.active()
        assert a.content == "logged in" and a.evidence[0].step_index == 3
        assert bank.cursor == 3
        assert log[-1].event == "accepted"

    def test_duplicate_dropped(self):
        bank = propose(MemoryBank("t"), 0, "logged in")
        log = []
        again = propose(bank, 1, "Logged  In", log=log)
        assert again.anchors == bank.anchors
        assert log[-1].event == "duplicate"

    def test_result_of_supersedes_source(self):
        bank = propose(MemoryBank("t"), 0, "A")
        bank = propose(bank, 1, "B", links=(CausalLink("A", LinkRelation.RESULT_OF),))
        assert bank.anchors["m1"].status is AnchorStatus.SUPERSEDED
        assert bank.anchors["m2"].status is AnchorStatus.ACTIVE

    def test_blocks_does_not_invalidate(self):
        bank = propose(MemoryBank("t"), 0, "A")
        bank = propose(bank, 1, "popup", AnchorType.EXCEPTION, links=(CausalLink("m1", LinkRelation.BLOCKS),))
        assert all(a.status is AnchorStatus.ACTIVE for a in bank.anchors.values())

    def test_unknown_link_rejected(self):
        bank = propose(MemoryBank("t"), 0, "A")
        log = []
        out = propose(bank, 4, "B", links=(CausalLink("nope", LinkRelation.ENABLES),), log=log)
        assert out.anchors == bank.anchors and out.cursor == 4
        assert log[-1].event == "proposal_error"

    def test_new_finish_supersedes_old(self):
        bank = propose(MemoryBank("t"), 0, "done once", AnchorType.FINISH)
        bank = propose(bank, 1, "done twice", AnchorType.FINISH)
        assert [a.content for a in bank.active()] == ["done twice"]

    def test_duplicate_of_invalidated_is_reinserted(self):
        bank = propose(MemoryBank("t"), 0, "A")
        bank = update(bank, st_(1), WAIT, AnchorProposal(invalidate="A"))
        bank = propose(bank, 2, "A")
        assert [a.id for a in bank.active()] == ["m2"]

    def test_no_proposal_advances_cursor(self):
        assert update(MemoryBank("t"), st_(7), WAIT, None).cursor == 7


@settings(max_examples=150, deadline=None)
@given(op_sequences)
def test_bank_invariants(ops):
    assert apply_and_check(ops) == []


class TestRender:
    def test_empty(self):
        ctx = render_asm_context([], 100)
        assert ctx.rendered_text == "" and ctx.token_estimate == 0 and ctx.mode is HistoryMode.ASM

    def test_dependency_value_visible(self):
        bank = propose(MemoryBank("t"), 2, "copied price 42 from shop page", AnchorType.DEPENDENCY, extracted_value="42")
        ctx = render_asm_context(bank.active(), 100, bank)
        assert "\n" not in ctx.rendered_text
        assert "42" in ctx.rendered_text
        assert ctx.rendered_text.startswith("[DEPENDENCY] copied price 42 from shop page (evidence: steps 2; value 42)")

    def test_links_render_source_content(self):
        bank = propose(MemoryBank("t"), 0, "cart opened")
        bank = propose(bank, 1, "paid", links=(CausalLink("m1", LinkRelation.PREREQUISITE),))
        text = render_asm_context(bank.active(), 100, bank).rendered_text
        assert "links: prerequisite→cart opened" in text

    def test_budget_drop_order(self):
        bank = MemoryBank("t")
        kinds = [AnchorType.SUBGOAL, AnchorType.CONTEXT_INFO, AnchorType.DEPENDENCY, AnchorType.SUBGOAL, AnchorType.STATE_CHANGE]
        for i in range(50):
            bank = propose(bank, i, f"anchor number {i}", kinds[i % 5])
        full = render_asm_context(bank.active(), 10**6, bank)
        ctx = render_asm_context(bank.active(), full.token_estimate // 2, bank)
        kept = ctx.anchors
        assert ctx.token_estimate <= full.token_estimate // 2
        assert not any(a.type is AnchorType.CONTEXT_INFO for a in kept)
        assert sum(a.type is AnchorType.DEPENDENCY for a in kept) == 10
        subgoals = [a for a in bank.active() if a.type is AnchorType.SUBGOAL]
        kept_sub = [a for a in kept if a.type is AnchorType.SUBGOAL]
        assert 0 < len(kept_sub) < len(subgoals)
        assert kept_sub == subgoals[-len(kept_sub):]  # the oldest went first

    def test_never_drops_dependency(self):
        bank = MemoryBank("t")
        for i in range(5):
            bank = propose(bank, i, f"value {i} noted", AnchorType.DEPENDENCY)
        ctx = render_asm_context(bank.active(), 1, bank)
        assert len(ctx.anchors) == 5


class TestRawAndSummary:
    def steps(self, n):
        return [Step(UiState(i, f"shot-{i}", "Shop"), WAIT) for i in range(n)]

    def test_empty_raw(self):
        ctx = render_raw_context([], 100)
        assert ctx.rendered_text == "" and ctx.token_estimate == 0

    def test_window_rule(self):
        steps = self.steps(40)
        per_line = estimate_tokens("step 0: app=Shop screen=shot-0 -> wait")
        ctx = render_raw_context(steps, 8 * per_line)
        lines = ctx.rendered_text.splitlines()
        assert [int(l.split(":")[0].split()[1]) for l in lines] == list(range(32, 40))

    def test_summary_passthrough(self):
        s = "Opened Shop; price 42 noted.  Cart pending."
        assert render_summary_context(s, 1000).rendered_text == s

    def test_summary_tail_kept_over_budget(self):
        ctx = render_summary_context("one two three four five six", 4)
        assert ctx.rendered_text == "four five six"

    def test_scripted_summary_keeps_last_five(self):
        steps = [Step(UiState(i, "s", "A"), WAIT, summary=f"s{i}") for i in range(9)]
        assert scripted_summary(steps, 1000) == "s4 s5 s6 s7 s8"
