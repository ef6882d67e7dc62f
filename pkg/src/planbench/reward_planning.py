"""Rewards for planning answers: rule-based format score, judge (GRM) score,
their convex combination, and the instruction-following correctness reward."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .judge import Judge, JudgeError, JudgeFormatError, JudgeRequest, consistency_check, load_prompt
from .plan_format import SECTIONS, ActionSet, default_action_set, parse_structured_output, validate_actions

DEFAULT_FORMAT_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
DEFAULT_RULE_WEIGHT = 0.5

_DROPPED_TUPLE_CODES = {"BAD_TUPLE_ARITY", "EMPTY_ELEMENT"}


@dataclass(frozen=True)
class FormatRewardBreakdown:
    completeness: float
    closure: float
    action_adherence: float
    total: float

    def to_dict(self) -> dict:
        return {
            "completeness": self.completeness,
            "closure": self.closure,
            "action_adherence": self.action_adherence,
            "total": self.total,
        }


def format_reward(
    raw: str,
    action_set: ActionSet | None = None,
    weights: tuple[float, float, float] = DEFAULT_FORMAT_WEIGHTS,
) -> FormatRewardBreakdown:
    """Score tag completeness, tag closure and action-set adherence in [0, 1].

    Adherence counts malformed tuples as non-adherent. A well-formed empty
    action list scores 1; a missing or unreadable actions section scores 0.
    """
    if len(weights) != 3 or any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0):
        raise ValueError(f"format weights must be three non-negative numbers summing to 1, got {weights}")
    out, report = parse_structured_output(raw, "lenient")
    completeness = sum(report.tags_present[t] for t in SECTIONS) / 3
    closure = sum(report.tags_closed[t] for t in SECTIONS) / 3

    dropped = sum(d.code in _DROPPED_TUPLE_CODES for d in report.structural_errors)
    total_tuples = len(out.actions) + dropped
    if total_tuples:
        valid = sum(v.valid for v in validate_actions(out.actions, action_set or default_action_set()))
        adherence = valid / total_tuples
    else:
        adherence = 1.0 if report.actions_parsed else 0.0

    w_c, w_z, w_a = weights
    total = w_c * completeness + w_z * closure + w_a * adherence
    if completeness == closure == adherence == 1.0:
        total = 1.0
    return FormatRewardBreakdown(completeness, closure, adherence, min(1.0, max(0.0, total)))


# ---------------------------------------------------------------------------
# Generative reward model


@dataclass(frozen=True)
class GrmScore:
    value: float
    reasoning: str
    raw_reply: str
    clamped: bool = False


_PLACEHOLDER_RE = re.compile(r"\{(question|sol|ATOMIC_ACTION_SET|completion)\}")
_SCORE_RE = re.compile(r"<score>(.*?)</score>", re.DOTALL | re.IGNORECASE)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL | re.IGNORECASE)


def build_grm_prompt(question: str, reference: str, action_set: ActionSet | None, completion: str) -> str:
    action_set = action_set or default_action_set()
    values = {
        "question": question,
        "sol": reference,
        "ATOMIC_ACTION_SET": ", ".join(action_set.sorted_verbs()),
        "completion": completion,
    }
    # One pass, so placeholder-like text inside the payloads is left alone.
    return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], load_prompt("grm.txt"))


def extract_grm_score(reply: str) -> GrmScore:
    m = _SCORE_RE.search(reply)
    if m is None:
        raise JudgeFormatError(f"no <score> tag in judge reply: {reply[:120]!r}")
    try:
        value = float(m.group(1).strip())
    except ValueError:
        raise JudgeFormatError(f"non-numeric score {m.group(1)!r}") from None
    if not math.isfinite(value):
        raise JudgeFormatError(f"non-finite score {m.group(1)!r}")
    clamped = not 0.0 <= value <= 1.0
    think = _THINK_RE.search(reply)
    return GrmScore(
        value=min(1.0, max(0.0, value)),
        reasoning=think.group(1).strip() if think else "",
        raw_reply=reply,
        clamped=clamped,
    )


@dataclass
class GrmResult:
    value: float
    score: GrmScore | None
    flags: list[str] = field(default_factory=list)
    attempts: int = 0


def grm_reward(
    question: str,
    reference: str,
    completion: str,
    judge: Judge,
    action_set: ActionSet | None = None,
    retries: int = 2,
    model_name: str = "",
) -> GrmResult:
    """Ask the judge for a plan score, retrying on unusable replies.

    After ``retries`` failed retries the reward is 0 with ``judge_failure``.
    """
    req = JudgeRequest("", build_grm_prompt(question, reference, action_set, completion), model_name=model_name)
    flags: list[str] = []
    for attempt in range(1, retries + 2):
        try:
            score = extract_grm_score(judge.complete(req))
        except JudgeError as exc:
            flags.append(f"attempt {attempt}: {type(exc).__name__}")
            continue
        if score.clamped:
            flags.append("clamped")
        return GrmResult(score.value, score, flags, attempt)
    flags.append("judge_failure")
    return GrmResult(0.0, None, flags, retries + 1)


def combined_planning_reward(rule: float, grm: float, w_rule: float = DEFAULT_RULE_WEIGHT) -> float:
    """``w_rule * rule + (1 - w_rule) * grm``.

    Heavier rule weight tightens format constraints but is known to destabilize
    RL training; the default splits evenly and leaves tuning to the caller.
    """
    for name, v in (("rule", rule), ("grm", grm), ("w_rule", w_rule)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return w_rule * rule + (1.0 - w_rule) * grm


def instruction_correctness_reward(question: str, answer: str, ground_truth: str, judge: Judge) -> float:
    consistent, _ = consistency_check(question, answer, ground_truth, judge)
    return 1.0 if consistent else 0.0
