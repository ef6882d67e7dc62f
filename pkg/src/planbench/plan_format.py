"""Parsing, validation and serialization of the structured plan format.

A planning answer is three tagged sections::

    <response>I will put the dirty clothes in the washing machine</response>
    <plans>
    1.[Manipulate] Locate the dirty clothes in the basket
    2.[Navigate] Navigate to the basket
    </plans>
    <actions>
    [['Search', 'Dirty clothes'], ['Navigate', 'Basket']]
    </actions>

``parse_structured_output`` reads this format in ``strict`` mode (any defect
is a failure) or ``lenient`` mode (salvage what parses, report the rest).
``serialize`` writes the canonical form that strict parsing reads back
exactly.
"""

from __future__ import annotations

import enum
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

SECTIONS = ("response", "plans", "actions")


class PlanFormatError(ValueError):
    """Raised by strict parsing; carries the full :class:`ParseReport`."""

    def __init__(self, report: "ParseReport"):
        self.report = report
        codes = ", ".join(d.code for d in report.structural_errors) or "unknown"
        super().__init__(f"structured output failed strict parsing: {codes}")


class StepTag(str, enum.Enum):
    NAVIGATE = "Navigate"
    MANIPULATE = "Manipulate"
    MAP = "Map"

    @classmethod
    def from_text(cls, text: str) -> "StepTag":
        key = text.strip().lower()
        for tag in cls:
            if tag.value.lower() == key:
                return tag
        raise ValueError(f"unknown plan step tag {text!r}")


@dataclass(frozen=True)
class AtomicAction:
    verb: str
    args: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.verb:
            raise ValueError("action verb must be non-empty")
        if len(self.args) not in (1, 2):
            raise ValueError(f"action takes 1 or 2 arguments, got {len(self.args)}")
        if any(not a for a in self.args):
            raise ValueError("action arguments must be non-empty")

    def as_list(self) -> list[str]:
        return [self.verb, *self.args]

    def __str__(self) -> str:
        return " ".join(self.as_list())


@dataclass(frozen=True)
class PlanStep:
    index: int
    tag: StepTag
    text: str

    def __post_init__(self):
        if not isinstance(self.tag, StepTag):
            object.__setattr__(self, "tag", StepTag.from_text(str(self.tag)))
        if self.index < 1:
            raise ValueError("plan step indices start at 1")


@dataclass(frozen=True)
class StructuredOutput:
    response: str
    plans: tuple[PlanStep, ...] = ()
    actions: tuple[AtomicAction, ...] = ()
    raw: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "plans", tuple(self.plans))
        object.__setattr__(self, "actions", tuple(self.actions))
        for expected, step in enumerate(self.plans, start=1):
            if step.index != expected:
                raise ValueError(
                    f"plan indices must be 1..n, step {expected} has index {step.index}"
                )


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    offset: int  # byte offset into the UTF-8 encoded source, -1 if not positional


@dataclass
class ParseReport:
    tags_present: dict[str, bool]
    tags_closed: dict[str, bool]
    structural_errors: list[Diagnostic] = field(default_factory=list)
    # False when the actions section is missing or no tuple list could be read.
    actions_parsed: bool = False

    @property
    def clean(self) -> bool:
        return (
            all(self.tags_present.values())
            and all(self.tags_closed.values())
            and not self.structural_errors
        )

    def to_dict(self) -> dict:
        return {
            "tags_present": dict(self.tags_present),
            "tags_closed": dict(self.tags_closed),
            "actions_parsed": self.actions_parsed,
            "structural_errors": [
                {"code": d.code, "message": d.message, "offset": d.offset}
                for d in self.structural_errors
            ],
        }


# ---------------------------------------------------------------------------
# Action vocabulary


class Verdict(str, enum.Enum):
    CANONICAL = "canonical"
    ALIASED = "aliased"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ActionVerdict:
    action: AtomicAction
    verdict: Verdict
    canonical_verb: str | None

    @property
    def valid(self) -> bool:
        return self.verdict is not Verdict.UNKNOWN


@dataclass(frozen=True)
class ActionSet:
    """Closed verb vocabulary with an alias table, matched case-insensitively."""

    verbs: frozenset[str]
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "verbs", frozenset(self.verbs))
        object.__setattr__(self, "aliases", dict(self.aliases))
        if not self.verbs:
            raise ValueError("action set must be non-empty")
        lowered = {v.lower() for v in self.verbs}
        for alias, target in self.aliases.items():
            if target.lower() not in lowered:
                raise ValueError(f"alias {alias!r} targets unknown verb {target!r}")

    def _lookup(self) -> tuple[dict[str, str], dict[str, str]]:
        canon = {v.lower(): v for v in self.verbs}
        alias = {a.lower(): canon[t.lower()] for a, t in self.aliases.items()}
        return canon, alias

    def classify(self, verb: str) -> tuple[Verdict, str | None]:
        canon, alias = self._lookup()
        key = verb.strip().lower()
        if key in canon:
            return Verdict.CANONICAL, canon[key]
        if key in alias:
            return Verdict.ALIASED, alias[key]
        return Verdict.UNKNOWN, None

    def canonical(self, verb: str) -> str | None:
        return self.classify(verb)[1]

    def sorted_verbs(self) -> list[str]:
        return sorted(self.verbs, key=str.lower)

    @classmethod
    def from_text(cls, text: str) -> "ActionSet":
        verbs: list[str] = []
        aliases: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                alias, _, target = (p.strip() for p in line.partition("="))
                if not alias or not target:
                    raise ValueError(f"line {lineno}: malformed alias {line!r}")
                aliases[alias] = target
            else:
                verbs.append(line)
        return cls(frozenset(verbs), aliases)

    @classmethod
    def from_file(cls, path: str | Path) -> "ActionSet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


_DEFAULT_ACTION_SET: ActionSet | None = None


def default_action_set() -> ActionSet:
    global _DEFAULT_ACTION_SET
    if _DEFAULT_ACTION_SET is None:
        text = resources.files("planbench").joinpath("data/default_actions.txt").read_text("utf-8")
        _DEFAULT_ACTION_SET = ActionSet.from_text(text)
    return _DEFAULT_ACTION_SET


def validate_actions(
    actions: Iterable[AtomicAction], action_set: ActionSet | None = None
) -> list[ActionVerdict]:
    action_set = action_set or default_action_set()
    out = []
    for action in actions:
        verdict, verb = action_set.classify(action.verb)
        out.append(ActionVerdict(action, verdict, verb))
    return out


# ---------------------------------------------------------------------------
# Parsing

_TAG_RE = re.compile(r"<\s*(/?)\s*(response|plans|actions)\s*>", re.IGNORECASE)
_STRICT_PLAN_RE = re.compile(r"^(\d+)\.\[(Navigate|Manipulate|Map)\] (.+)$", re.IGNORECASE)
_LOOSE_PLAN_RE = re.compile(r"^(\d+)\s*[.)]\s*\[\s*([^\]]*?)\s*\]\s*(.*?)\s*$")
_LITERAL_NEWLINE_RE = re.compile(r"\\n(?=\s*\d+\s*\.\s*\[)")

_QSTR = r"""'(?:[^'\\\n]|\\.)*'|"(?:[^"\\\n]|\\.)*"|‘[^’\n]*’|“[^”\n]*”|`[^`'\n]*'"""
_QSTR_RE = re.compile(_QSTR)
_TUPLE_RE = re.compile(r"\[\s*(?:%s)(?:\s*,\s*(?:%s))*\s*,?\s*\]" % (_QSTR, _QSTR))
_ESCAPE_RE = re.compile(r"\\(.)")


def _unquote(token: str) -> str:
    if token[0] in "'\"":
        return _ESCAPE_RE.sub(r"\1", token[1:-1])
    return token[1:-1]


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


@dataclass
class _Marker:
    closing: bool
    tag: str
    start: int
    end: int


class _Diag:
    def __init__(self, raw: str):
        self.raw = raw
        self.items: list[Diagnostic] = []

    def add(self, code: str, message: str, pos: int = -1) -> None:
        offset = len(self.raw[:pos].encode("utf-8")) if pos >= 0 else -1
        self.items.append(Diagnostic(code, message, offset))


def _scan_sections(raw: str, diag: _Diag):
    markers = [
        _Marker(bool(m.group(1)), m.group(2).lower(), m.start(), m.end())
        for m in _TAG_RE.finditer(raw)
    ]
    present = {t: False for t in SECTIONS}
    closed = {t: False for t in SECTIONS}
    spans: dict[str, tuple[int, int, int]] = {}  # tag -> (open_pos, body_start, body_end)

    for tag in SECTIONS:
        opens = [k for k, m in enumerate(markers) if m.tag == tag and not m.closing]
        closes = [k for k, m in enumerate(markers) if m.tag == tag and m.closing]
        if not opens:
            diag.add("MISSING_TAG", f"<{tag}> not found")
            for k in closes:
                diag.add("STRAY_CLOSE", f"</{tag}> without opening tag", markers[k].start)
            continue
        present[tag] = True
        first = opens[0]
        for k in opens[1:]:
            diag.add("DUPLICATE_TAG", f"<{tag}> appears more than once", markers[k].start)
        for k in closes:
            if k < first:
                diag.add("STRAY_CLOSE", f"</{tag}> before <{tag}>", markers[k].start)
        after = [k for k in closes if k > first]
        body_start = markers[first].end
        if not after:
            diag.add("UNCLOSED_TAG", f"<{tag}> is never closed", markers[first].start)
            nxt = first + 1
            body_end = markers[nxt].start if nxt < len(markers) else len(raw)
            spans[tag] = (markers[first].start, body_start, body_end)
            continue
        close = after[0]
        spans[tag] = (markers[first].start, body_start, markers[close].start)
        inner = markers[first + 1 : close]
        if inner:
            diag.add(
                "NESTED_TAG",
                f"<{tag}> contains other tag markers",
                inner[0].start,
            )
        else:
            closed[tag] = True

    # Relative order of the sections that exist.
    order_ok = {t: True for t in SECTIONS}
    for i, a in enumerate(SECTIONS):
        for b in SECTIONS[i + 1 :]:
            if a in spans and b in spans and spans[a][0] > spans[b][0]:
                order_ok[a] = order_ok[b] = False
                diag.add("OUT_OF_ORDER", f"<{b}> appears before <{a}>", spans[b][0])
    for tag in SECTIONS:
        closed[tag] = closed[tag] and order_ok[tag]
    return present, closed, spans


def _parse_plans(body: str, body_pos: int, strict: bool, diag: _Diag) -> list[PlanStep]:
    if _LITERAL_NEWLINE_RE.search(body):
        diag.add("LITERAL_NEWLINE", "plan steps separated by a literal '\\n'", body_pos)
        if not strict:
            # Same-length substitution keeps diagnostic offsets aligned.
            body = _LITERAL_NEWLINE_RE.sub(" \n", body)
    steps: list[tuple[int, StepTag, str]] = []
    pos = body_pos
    for line in body.split("\n"):
        line_pos = pos
        pos += len(line) + 1
        stripped = line.strip()
        if not stripped:
            continue
        if strict:
            m = _STRICT_PLAN_RE.match(stripped)
            if not m or m.group(3) != m.group(3).strip():
                diag.add("BAD_PLAN_LINE", f"malformed plan line {stripped!r}", line_pos)
                continue
            steps.append((int(m.group(1)), StepTag.from_text(m.group(2)), m.group(3)))
            continue
        m = _LOOSE_PLAN_RE.match(stripped)
        if not m or not m.group(3):
            diag.add("BAD_PLAN_LINE", f"malformed plan line {stripped!r}", line_pos)
            continue
        try:
            tag = StepTag.from_text(m.group(2))
        except ValueError:
            diag.add("UNKNOWN_PLAN_TAG", f"plan tag [{m.group(2)}] is not recognised", line_pos)
            continue
        if not _STRICT_PLAN_RE.match(stripped):
            diag.add("PLAN_LINE_SPACING", f"non-canonical plan line {stripped!r}", line_pos)
        steps.append((int(m.group(1)), tag, m.group(3)))

    indices = [s[0] for s in steps]
    if indices != list(range(1, len(steps) + 1)):
        diag.add("PLAN_INDEX", f"plan indices {indices} are not 1..{len(steps)}", body_pos)
        if strict:
            return []
    return [PlanStep(i, tag, text) for i, (_, tag, text) in enumerate(steps, start=1)]


def _make_action(values: list[str], pos: int, diag: _Diag) -> AtomicAction | None:
    values = [v.strip() for v in values]
    if len(values) not in (2, 3):
        diag.add("BAD_TUPLE_ARITY", f"action tuple has {len(values)} elements", pos)
        return None
    if not all(values):
        diag.add("EMPTY_ELEMENT", "action tuple contains an empty element", pos)
        return None
    return AtomicAction(values[0], tuple(values[1:]))


class _ActionsSyntaxError(Exception):
    def __init__(self, pos: int, message: str):
        self.pos = pos
        super().__init__(message)


def _scan_action_list(body: str) -> list[tuple[list[str], int]]:
    """Read ``[ [q, q...], ... ]`` exactly; raise on any deviation."""
    i = 0
    n = len(body)

    def ws():
        nonlocal i
        while i < n and body[i].isspace():
            i += 1

    def expect(ch: str):
        nonlocal i
        ws()
        if i >= n or body[i] != ch:
            found = body[i] if i < n else "end of section"
            raise _ActionsSyntaxError(i, f"expected {ch!r}, found {found!r}")
        i += 1

    def qstr() -> str:
        nonlocal i
        ws()
        m = _QSTR_RE.match(body, i)
        if not m or m.group(0)[0] not in "'\"":
            raise _ActionsSyntaxError(i, "expected a quoted string")
        i = m.end()
        return _unquote(m.group(0))

    tuples: list[tuple[list[str], int]] = []
    expect("[")
    ws()
    if i < n and body[i] == "]":
        i += 1
    else:
        while True:
            ws()
            start = i
            expect("[")
            values = [qstr()]
            while True:
                ws()
                if i < n and body[i] == ",":
                    i += 1
                    values.append(qstr())
                    continue
                expect("]")
                break
            tuples.append((values, start))
            ws()
            if i < n and body[i] == ",":
                i += 1
                continue
            expect("]")
            break
    ws()
    if i != n:
        raise _ActionsSyntaxError(i, "unexpected text after the action list")
    return tuples


def _parse_actions(
    body: str, body_pos: int, strict: bool, diag: _Diag
) -> tuple[list[AtomicAction], bool]:
    try:
        scanned = _scan_action_list(body)
    except _ActionsSyntaxError as exc:
        diag.add("BAD_ACTIONS", str(exc), body_pos + exc.pos)
        if strict:
            return [], False
        scanned = [
            ([_unquote(q) for q in _QSTR_RE.findall(m.group(0))], m.start())
            for m in _TUPLE_RE.finditer(body)
        ]
        if not scanned:
            return [], False
    actions = []
    for values, pos in scanned:
        action = _make_action(values, body_pos + pos, diag)
        if action is not None:
            actions.append(action)
    return actions, True


def parse_structured_output(
    raw: str, mode: str = "strict"
) -> tuple[StructuredOutput | None, ParseReport]:
    """Parse ``raw``; returns the output (``None`` on strict failure) and the report.

    Use :func:`parse_strict` to get an exception instead of ``None``.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', not {mode!r}")
    strict = mode == "strict"
    diag = _Diag(raw)
    present, closed, spans = _scan_sections(raw, diag)

    def body(tag: str) -> tuple[str, int]:
        if tag not in spans:
            return "", 0
        _, start, end = spans[tag]
        return raw[start:end], start

    response = body("response")[0].strip()
    plans: list[PlanStep] = []
    actions: list[AtomicAction] = []
    actions_parsed = False
    if "plans" in spans:
        plans = _parse_plans(*body("plans"), strict, diag)
    if "actions" in spans:
        actions, actions_parsed = _parse_actions(*body("actions"), strict, diag)

    report = ParseReport(present, closed, diag.items, actions_parsed)
    if strict and not report.clean:
        return None, report
    return StructuredOutput(response, tuple(plans), tuple(actions), raw=raw), report


def parse_strict(raw: str) -> StructuredOutput:
    out, report = parse_structured_output(raw, "strict")
    if out is None:
        raise PlanFormatError(report)
    return out


def parse_lenient(raw: str) -> tuple[StructuredOutput, ParseReport]:
    out, report = parse_structured_output(raw, "lenient")
    assert out is not None
    return out, report


# ---------------------------------------------------------------------------
# Serialization


def format_plan_line(step: PlanStep) -> str:
    return f"{step.index}.[{step.tag.value}] {step.text}"


def format_actions(actions: Sequence[AtomicAction]) -> str:
    return "[" + ", ".join(
        "[" + ", ".join(_quote(v) for v in a.as_list()) + "]" for a in actions
    ) + "]"


def serialize(out: StructuredOutput) -> str:
    plan_block = "".join(format_plan_line(s) + "\n" for s in out.plans)
    return (
        f"<response>{out.response}</response>\n"
        f"<plans>\n{plan_block}</plans>\n"
        f"<actions>\n{format_actions(out.actions)}\n</actions>"
    )


# ---------------------------------------------------------------------------
# Step hints


def hint_length(n_steps: int, rng_seed: int, hint_fraction_range: tuple[float, float]) -> int:
    lo, hi = hint_fraction_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"hint fraction range must satisfy 0 <= lo <= hi <= 1, got {lo, hi}")
    fraction = random.Random(rng_seed).uniform(lo, hi)
    return min(n_steps, math.floor(fraction * n_steps))


def augment_with_step_hints(
    prompt: str,
    gold: StructuredOutput,
    rng_seed: int,
    hint_fraction_range: tuple[float, float] = (0.0, 1.0),
) -> str:
    """Append a seeded random-length prefix of the gold plan to ``prompt``.

    The prefix is taken in whole plan steps. A zero-length prefix leaves the
    prompt untouched.
    """
    if not gold.plans:
        raise ValueError("gold output has no plan steps to hint from")
    k = hint_length(len(gold.plans), rng_seed, hint_fraction_range)
    if k == 0:
        return prompt
    lines = "\n".join(format_plan_line(s) for s in gold.plans[:k])
    return f"{prompt}\n\nGuided precursor (first {k} plan steps):\n{lines}"
