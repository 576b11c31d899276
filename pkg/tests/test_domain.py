import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmb.domain import (
    Action,
    ActionKind,
    Anchor,
    AnchorType,
    CausalLink,
    DegenerateSwipeError,
    Direction,
    Intent,
    LinkRelation,
    TaskParseError,
    check_task_structure,
    is_acyclic,
    parse_task,
    serialize_task,
    swipe_direction,
    task_to_dict,
    validate_action,
)
from asmb.synth import SynthConfig, generate_task

from helpers import copy_task, tiny_task

coord = st.integers(0, 1000)


class TestValidateAction:
    def test_valid_tap(self):
        assert validate_action(Action(ActionKind.TAP, 500, 500)) == []

    def test_x_out_of_range(self):
        assert validate_action(Action(ActionKind.TAP, 1200, 500)) == ["x out of range"]

    def test_identical_endpoints(self):
        a = Action(ActionKind.SWIPE_TWO_POINTS, 300, 300, 300, 300)
        assert validate_action(a) == ["endpoints must differ"]

    @pytest.mark.parametrize(
        "action, problem",
        [
            (Action(ActionKind.SWIPE), "swipe requires direction"),
            (Action(ActionKind.INPUT_TEXT, value="  "), "input_text requires non-empty value"),
            (Action(ActionKind.OPEN_APP), "open_app requires non-empty value"),
            (Action(ActionKind.WAIT, x=5), "unused coordinates must be 0"),
            (Action(ActionKind.TAP, 1, 1, x_end=3), "unused end coordinates must be 0"),
            (Action(ActionKind.TAP, 1, 1, direction=Direction.UP), "direction/distance only valid for swipe"),
            (Action(ActionKind.TAP, -1, 0), "x out of range"),
        ],
    )
    def test_violations(self, action, problem):
        assert problem in validate_action(action)

    def test_reports_every_violation(self):
        problems = validate_action(Action(ActionKind.TAP, 1001, 2000))
        assert problems == ["x out of range", "y out of range"]

    def test_swipe_may_carry_start_point(self):
        assert validate_action(Action(ActionKind.SWIPE, 500, 800, direction=Direction.UP)) == []


class TestSwipeDirection:
    @pytest.mark.parametrize(
        "pts, expected",
        [
            ((500, 800, 500, 200), Direction.UP),
            ((100, 500, 900, 500), Direction.RIGHT),
            ((100, 100, 400, 400), Direction.DOWN),  # |dx| == |dy|: vertical wins
            ((400, 400, 100, 100), Direction.UP),
            ((900, 500, 100, 490), Direction.LEFT),
        ],
    )
    def test_examples(self, pts, expected):
        assert swipe_direction(*pts) is expected

    def test_degenerate(self):
        with pytest.raises(DegenerateSwipeError, match="degenerate swipe"):
            swipe_direction(10, 10, 10, 10)

    @given(coord, coord, coord, coord)
    def test_flipping_endpoints_reverses(self, x, y, x2, y2):
        if (x, y) == (x2, y2):
            return
        assert swipe_direction(x2, y2, x, y) is swipe_direction(x, y, x2, y2).reversed()


class TestSerialization:
    def test_minimal_round_trip_is_byte_identical(self):
        t = tiny_task()
        data = serialize_task(t)
        assert parse_task(data) == t
        assert serialize_task(parse_task(data)) == data
        assert b"\n" not in data

    def test_missing_instruction(self):
        d = task_to_dict(tiny_task())
        del d["instruction"]
        with pytest.raises(TaskParseError, match="missing field: instruction") as exc:
            parse_task(json.dumps(d), line=7)
        assert exc.value.line == 7
        assert str(exc.value).startswith("line 7:")

    def test_nested_field_is_named(self):
        d = task_to_dict(tiny_task())
        del d["steps"][0]["state"]["app"]
        with pytest.raises(TaskParseError, match=r"missing field: steps\[0\]\.state\.app"):
            parse_task(json.dumps(d))

    def test_link_to_later_anchor(self):
        d = task_to_dict(copy_task())
        # point the dependency at the FINISH anchor created at the last step
        d["steps"][1]["gt_anchors"][0]["links"] = [{"source_anchor_id": "f", "relation": "enables"}]
        with pytest.raises(TaskParseError, match="causal link target not yet created"):
            parse_task(json.dumps(d))

    def test_unknown_intent_rejected(self):
        d = task_to_dict(tiny_task())
        d["intent"] = "gaming"
        with pytest.raises(TaskParseError, match="intent"):
            parse_task(json.dumps(d))

    def test_invalid_json(self):
        with pytest.raises(TaskParseError, match="invalid JSON"):
            parse_task(b"{not json", line=2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32), st.sampled_from(list(Intent)))
    def test_canonical(self, seed, intent):
        t = generate_task(seed, SynthConfig(), intent, task_id="x")
        data = serialize_task(t)
        assert parse_task(data) == t
        assert serialize_task(parse_task(data)) == data


class TestStructure:
    def test_well_formed(self):
        assert check_task_structure(copy_task()) == []

    def test_finish_must_be_last(self):
        t = copy_task()
        steps = list(t.steps)
        steps[2] = replace(steps[2], action=Action(ActionKind.FINISH))
        assert "finish action must be the last step" in check_task_structure(replace(t, steps=tuple(steps)))

    def test_two_finish_anchors(self):
        t = copy_task()
        steps = list(t.steps)
        extra = Anchor("f2", AnchorType.FINISH, "also done")
        steps[3] = replace(steps[3], gt_anchors=(extra,))
        problems = check_task_structure(replace(t, steps=tuple(steps)))
        assert "more than one FINISH anchor" in problems

    def test_acyclic(self):
        a = Anchor("a", AnchorType.SUBGOAL, "a", links=(CausalLink("b", LinkRelation.ENABLES),))
        b = Anchor("b", AnchorType.SUBGOAL, "b", links=(CausalLink("a", LinkRelation.ENABLES),))
        assert not is_acyclic([a, b])
        assert is_acyclic(copy_task().anchors())

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32))
    def test_generated_links_form_dag(self, seed):
        t = generate_task(seed, SynthConfig(), Intent.BOOKING, task_id="x")
        assert is_acyclic(t.anchors())
        seen = set()
        for a in t.anchors():
            assert all(l.source_anchor_id in seen for l in a.links)
            seen.add(a.id)
