import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planbench.judge import FixedJudge, JudgeFormatError, ScriptedJudge, equality_judge
from planbench.plan_format import default_action_set, parse_structured_output, validate_actions
from planbench.reward_planning import (
    build_grm_prompt,
    combined_planning_reward,
    extract_grm_score,
    format_reward,
    grm_reward,
    instruction_correctness_reward,
)

from conftest import INCORRECT_CONVERSION_BODY


def test_format_reward_gold(washing_machine):
    r = format_reward(washing_machine)
    assert (r.completeness, r.closure, r.action_adherence, r.total) == (1.0, 1.0, 1.0, 1.0)


def test_format_reward_empty():
    r = format_reward("")
    assert (r.completeness, r.closure, r.action_adherence, r.total) == (0.0, 0.0, 0.0, 0.0)


def test_format_reward_incorrect_conversion(incorrect_conversion):
    r = format_reward(incorrect_conversion)
    assert r.completeness == 1.0
    assert r.closure == pytest.approx(2 / 3)
    assert r.action_adherence == pytest.approx(4 / 6)
    assert r.total == pytest.approx(7 / 9, abs=1e-9)


def test_format_reward_conversion_body_alone():
    # Without its response section: completeness 2/3, closure 1/3, adherence 4/6.
    assert format_reward(INCORRECT_CONVERSION_BODY).total == pytest.approx(5 / 9, abs=1e-9)


def test_format_reward_empty_list_and_dropped_tuples():
    base = "<response>r</response><plans>\n</plans><actions>{}</actions>"
    assert format_reward(base.format("[]")).action_adherence == 1.0
    assert format_reward(base.format("nonsense")).action_adherence == 0.0
    assert format_reward(base.format("[['Pick','a'], ['Pick']]")).action_adherence == 0.5


def test_format_weights_validated(washing_machine):
    with pytest.raises(ValueError):
        format_reward(washing_machine, weights=(0.5, 0.5, 0.5))
    assert format_reward(washing_machine, weights=(1.0, 0.0, 0.0)).total == 1.0


_tokens = st.sampled_from(list("<>/[]'\", \n") + ["response", "plans", "actions", "Pick", "Foo", "1.[Map] x"])


@given(st.lists(_tokens, max_size=40).map("".join))
@settings(max_examples=400)
def test_format_reward_range_and_iff(raw):
    r = format_reward(raw)
    assert 0.0 <= r.total <= 1.0
    out, report = parse_structured_output(raw, "strict")
    if out is not None and all(v.valid for v in validate_actions(out.actions)):
        assert r.total == 1.0
    if r.total == 1.0:
        assert all(report.tags_present.values()) and all(report.tags_closed.values())
        lenient, _ = parse_structured_output(raw, "lenient")
        assert all(v.valid for v in validate_actions(lenient.actions))


def _perturb(text: str, pads: list[str]) -> str:
    # Whitespace at tag boundaries and between action tuples.
    pieces = re.split(r"(<[^>]+>|, )", text)
    out = []
    for k, piece in enumerate(pieces):
        out.append(piece)
        if piece.startswith("<") or piece == ", ":
            out.append(pads[k % len(pads)])
    return "".join(out)


@given(st.lists(st.sampled_from([" ", "\n", "\t", "  \n "]), min_size=1, max_size=6))
def test_whitespace_perturbation(pads):
    from conftest import WASHING_MACHINE, INCORRECT_CONVERSION

    for raw in (WASHING_MACHINE, INCORRECT_CONVERSION):
        assert format_reward(_perturb(raw, pads)) == format_reward(raw)


def test_grm_prompt_contents():
    prompt = build_grm_prompt("Wash the apple", "REF-ANSWER", default_action_set(), "MODEL-OUTPUT")
    assert "1.00: Nearly identical to reference" in prompt
    assert "Wash the apple" in prompt and "REF-ANSWER" in prompt and "MODEL-OUTPUT" in prompt
    assert ", ".join(default_action_set().sorted_verbs()) in prompt
    assert not re.search(r"\{(question|sol|ATOMIC_ACTION_SET|completion)\}", prompt)
    assert prompt == build_grm_prompt("Wash the apple", "REF-ANSWER", default_action_set(), "MODEL-OUTPUT")
    assert prompt.rstrip().endswith("Example response: <think>Brief reasoning</think><score>0.75</score>")


def test_grm_prompt_empty_completion():
    prompt = build_grm_prompt("q", "r", None, "")
    assert "Model-Generated Output\n\n\n---" in prompt
    assert "Original Question\nq\n" in prompt


def test_grm_prompt_payload_braces_left_alone():
    prompt = build_grm_prompt("{sol}", "ref", None, "{completion}")
    assert "Original Question\n{sol}\n" in prompt and "Reference Answer\nref\n" in prompt


def test_extract_grm_score():
    s = extract_grm_score("<think>Brief reasoning</think><score>0.75</score>")
    assert s.value == 0.75 and s.reasoning == "Brief reasoning" and not s.clamped
    s = extract_grm_score("<score>1.00</score>")
    assert s.value == 1.0 and s.reasoning == ""
    s = extract_grm_score("<score>1.37</score>")
    assert s.value == 1.0 and s.clamped
    assert extract_grm_score("<score>-0.2</score>").value == 0.0
    assert extract_grm_score("<score>0.2</score><score>0.9</score>").value == 0.2
    with pytest.raises(JudgeFormatError):
        extract_grm_score("0.75")
    with pytest.raises(JudgeFormatError):
        extract_grm_score("<score>high</score>")
    with pytest.raises(JudgeFormatError):
        extract_grm_score("<score>nan</score>")


def test_example_reply_round_trip():
    prompt = build_grm_prompt("q", "r", None, "c")
    example = prompt.rstrip().split("Example response: ")[-1]
    assert extract_grm_score(example).value == 0.75


def test_grm_reward_retries():
    judge = ScriptedJudge(["garbage", "<score>0.75</score>"])
    result = grm_reward("q", "r", "c", judge)
    assert result.value == 0.75 and result.attempts == 2
    failing = grm_reward("q", "r", "c", FixedJudge("never a score"), retries=2)
    assert failing.value == 0.0 and "judge_failure" in failing.flags and failing.attempts == 3
    clamped = grm_reward("q", "r", "c", FixedJudge("<score>3</score>"))
    assert clamped.value == 1.0 and "clamped" in clamped.flags


def test_combined_reward():
    assert combined_planning_reward(1, 1, 0.3) == 1.0
    assert combined_planning_reward(0, 0) == 0.0
    assert combined_planning_reward(0.778, 0.75, 0.5) == pytest.approx(0.764)
    assert combined_planning_reward(0.2, 0.9, 1.0) == 0.2
    assert combined_planning_reward(0.2, 0.9, 0.0) == 0.9
    with pytest.raises(ValueError):
        combined_planning_reward(1.2, 0, 0.5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_combined_reward_monotone(rule, grm, delta, w):
    hi_rule = min(1.0, rule + delta)
    assert combined_planning_reward(hi_rule, grm, w) >= combined_planning_reward(rule, grm, w) - 1e-12
    hi_grm = min(1.0, grm + delta)
    assert combined_planning_reward(rule, hi_grm, w) >= combined_planning_reward(rule, grm, w) - 1e-12


def test_instruction_correctness():
    assert instruction_correctness_reward("q", "Paris", "paris", equality_judge()) == 1.0
    assert instruction_correctness_reward("q", "Paris", "London", equality_judge()) == 0.0
    judge = FixedJudge('{"consistent": true, "reason": "same city"}')
    assert instruction_correctness_reward("q", "a", "b", judge) == 1.0
    with pytest.raises(JudgeFormatError):
        instruction_correctness_reward("q", "a", "b", FixedJudge("yes"))
