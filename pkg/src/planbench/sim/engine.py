"""Plan execution: adapt raw output, translate verbs to skills, resolve objects,
run skills, and check task goals."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from ..plan_format import ActionSet, AtomicAction, default_action_set, parse_structured_output
from .resolver import ResolutionContext, ResolutionError, Resolver
from .skills import Reason, Skill, SkillKind, execute_skill
from .world import WorldState, bundled_scene_spec, load_scene

logger = logging.getLogger(__name__)

TOGGLE = "Toggle"  # flips to ToggleOn or ToggleOff at execution time

SKILL_TABLE: dict[str, str] = {
    "navigate": SkillKind.NAVIGATE.value,
    "gotoobject": SkillKind.NAVIGATE.value,
    "find": SkillKind.NAVIGATE.value,
    "search": SkillKind.NAVIGATE.value,
    "map": SkillKind.NAVIGATE.value,
    "pick": SkillKind.PICK.value,
    "place": SkillKind.PLACE.value,
    "put": SkillKind.PLACE.value,
    "open": SkillKind.OPEN.value,
    "close": SkillKind.CLOSE.value,
    "toggle": TOGGLE,
    "toggleon": SkillKind.TOGGLE_ON.value,
    "turnon": SkillKind.TOGGLE_ON.value,
    "toggleoff": SkillKind.TOGGLE_OFF.value,
    "turnoff": SkillKind.TOGGLE_OFF.value,
    "clean": SkillKind.CLEAN.value,
    "wash": SkillKind.CLEAN.value,
    "heat": SkillKind.HEAT.value,
    "cool": SkillKind.COOL.value,
    "slice": SkillKind.SLICE.value,
}


class AdaptationError(ValueError):
    pass


class TranslationError(ValueError):
    def __init__(self, verb: str, detail: str = ""):
        self.verb = verb
        super().__init__(detail or f"no skill for verb {verb!r}")


@dataclass(frozen=True)
class Instruction:
    """A translated action: skill kind (or ``Toggle``) plus unresolved references."""

    kind: str
    refs: tuple[str, ...]


def adapt_input(raw: str | Sequence[AtomicAction], action_set: ActionSet | None = None,
                warnings: list[str] | None = None) -> list[AtomicAction]:
    """Salvage atomic actions from a raw structured output or an action list.

    Malformed tuples are dropped with a warning. Verbs the skill table knows
    directly are kept; other aliases are mapped to their canonical verb.
    """
    action_set = action_set or default_action_set()
    warnings = warnings if warnings is not None else []
    if isinstance(raw, str):
        out, report = parse_structured_output(raw, "lenient")
        for d in report.structural_errors:
            if d.code in ("BAD_TUPLE_ARITY", "EMPTY_ELEMENT", "BAD_ACTIONS"):
                warnings.append(f"{d.code} at {d.offset}: {d.message}")
        actions = list(out.actions) if out is not None and report.actions_parsed else []
        if not actions:
            raise AdaptationError("no salvageable actions in input")
    else:
        actions = list(raw)
    adapted = []
    for a in actions:
        if a.verb.strip().lower() in SKILL_TABLE:
            adapted.append(a)
            continue
        canonical = action_set.canonical(a.verb)
        adapted.append(AtomicAction(canonical, a.args) if canonical else a)
    return adapted


def translate_instruction(action: AtomicAction, table: Mapping[str, str] = SKILL_TABLE) -> Instruction:
    kind = table.get(action.verb.strip().lower())
    if kind is None:
        raise TranslationError(action.verb)
    expected = 2 if kind == SkillKind.PLACE.value else 1
    if len(action.args) != expected:
        raise TranslationError(action.verb, f"{kind} takes {expected} object(s), got {len(action.args)}")
    return Instruction(kind, tuple(action.args))


# ---------------------------------------------------------------------------
# Goals

def _matches(world: WorldState, oid: str, ref: str) -> bool:
    return oid == ref or world.obj(oid).type == ref


def check_predicate(world: WorldState, predicate: Sequence[str]) -> bool:
    """``["located_in", X, Y]`` or ``["has_state", X, s]``; X and Y are ids or types.

    A type reference holds when any object of that type satisfies it.
    """
    name, *args = predicate
    if name == "located_in":
        x, y = args
        return any(
            _matches(world, oid, x) and any(_matches(world, c, y) for c in world.ancestors(oid))
            for oid in world.objects
        )
    if name == "has_state":
        x, state = args
        return any(_matches(world, oid, x) and world.obj(oid).has(state) for oid in world.objects)
    raise ValueError(f"unknown goal predicate {name!r}")


def check_goal(world: WorldState, goal: Iterable[Sequence[str]]) -> list[bool]:
    return [check_predicate(world, p) for p in goal]


# ---------------------------------------------------------------------------
# Execution


@dataclass(frozen=True)
class SimConfig:
    continue_on_error: bool = False


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: tuple[str, ...]
    resolution: tuple[tuple[str, str, str], ...]  # (reference, object id, layer)
    skill: str | None
    outcome: str  # "ok" or "failed"
    stage: str | None = None  # where a failure happened
    reason: str | None = None
    detail: str = ""
    snapshot: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "action": list(self.action),
            "resolution": [list(r) for r in self.resolution],
            "skill": self.skill,
            "outcome": self.outcome,
            "stage": self.stage,
            "reason": self.reason,
            "detail": self.detail,
            "snapshot": self.snapshot,
        }


@dataclass
class ExecutionTrace:
    steps: list[StepRecord]
    final_success: bool
    steps_executed: int
    goal_results: list[bool] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    final_world: WorldState | None = field(default=None, repr=False, compare=False)
    task_id: str | None = None

    @property
    def first_failure(self) -> StepRecord | None:
        return next((s for s in self.steps if not s.ok), None)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "final_success": self.final_success,
            "steps_executed": self.steps_executed,
            "goal_results": self.goal_results,
            "warnings": self.warnings,
            "steps": [s.to_dict() for s in self.steps],
        }

    def trace_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def render(self) -> str:
        lines = [f"task {self.task_id or '-'}: {'SUCCESS' if self.final_success else 'FAILURE'}"
                 f" after {self.steps_executed} step(s)"]
        for s in self.steps:
            action = f"[{', '.join(s.action)}]"
            if s.ok:
                lines.append(f"  {s.step:>2}. {action:<40} -> {s.skill}  ok")
            else:
                lines.append(f"  {s.step:>2}. {action:<40} -> {s.stage} failed: {s.reason} {s.detail}".rstrip())
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        return "\n".join(lines)


def execute_plan(world: WorldState, actions: str | Sequence[AtomicAction],
                 goal: Sequence[Sequence[str]] | None = None, cfg: SimConfig = SimConfig(),
                 resolver: Resolver | None = None, action_set: ActionSet | None = None) -> ExecutionTrace:
    """Run a plan step by step; every failure becomes a trace entry.

    Without a goal, success means every step ran without failure.
    """
    resolver = resolver or Resolver()
    context = ResolutionContext()
    warnings: list[str] = []
    steps: list[StepRecord] = []
    try:
        plan = adapt_input(actions, action_set, warnings)
    except AdaptationError as exc:
        rec = StepRecord(0, (), (), None, "failed", "adapt", Reason.NO_ACTIONS.value, str(exc),
                         world.snapshot_hash())
        return ExecutionTrace([rec], False, 0, check_goal(world, goal or []), warnings, world)

    executed = 0
    for i, action in enumerate(plan, start=1):
        label = (action.verb, *action.args)
        failure = None
        resolved: list[tuple[str, str, str]] = []
        skill = None
        try:
            instr = translate_instruction(action)
        except TranslationError as exc:
            reason = Reason.BAD_ARITY if action.verb.strip().lower() in SKILL_TABLE else Reason.UNKNOWN_SKILL
            failure = ("translate", reason.value, str(exc))
        else:
            try:
                for ref in instr.refs:
                    r = resolver.resolve(ref, world, context)
                    resolved.append((ref, r.object_id, r.layer))
            except ResolutionError as exc:
                failure = ("resolve", Reason.UNRESOLVED_OBJECT.value, str(exc))
            else:
                ids = tuple(r[1] for r in resolved)
                kind = instr.kind
                if kind == TOGGLE:
                    kind = SkillKind.TOGGLE_OFF.value if world.obj(ids[0]).has("on") else SkillKind.TOGGLE_ON.value
                skill = Skill(SkillKind(kind), ids)
                outcome, world = execute_skill(world, skill)
                executed += 1
                if outcome.ok:
                    if skill.kind is not SkillKind.NAVIGATE:
                        for oid in reversed(ids):
                            context.touch(oid)
                else:
                    failure = ("execute", outcome.reason.value, outcome.detail)
        snap = world.snapshot_hash()
        if failure is None:
            steps.append(StepRecord(i, label, tuple(resolved), str(skill), "ok", snapshot=snap))
            continue
        stage, reason, detail = failure
        steps.append(StepRecord(i, label, tuple(resolved), str(skill) if skill else None, "failed",
                                stage, reason, detail, snap))
        logger.info("step %d %s failed at %s: %s", i, label, stage, reason)
        if not cfg.continue_on_error:
            break

    goal_results = check_goal(world, goal or [])
    if goal is not None:
        success = all(goal_results)
    else:
        success = all(s.ok for s in steps)
    return ExecutionTrace(steps, success, executed, goal_results, warnings, world)


def success_rate(traces: Sequence[ExecutionTrace]) -> float:
    if not traces:
        raise ValueError("success rate of an empty trace list is undefined")
    return sum(t.final_success for t in traces) / len(traces)


# ---------------------------------------------------------------------------
# Tasks


@dataclass(frozen=True)
class Perturbation:
    swap: tuple[int, int]
    expected_step: int
    expected_reason: str

    def apply(self, actions: Sequence[AtomicAction]) -> list[AtomicAction]:
        i, j = (k - 1 for k in self.swap)
        out = list(actions)
        out[i], out[j] = out[j], out[i]
        return out


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    scene: str
    goal: tuple[tuple[str, ...], ...]
    gold_actions: tuple[AtomicAction, ...]
    perturbation: Perturbation | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSpec":
        known = {"id", "instruction", "scene", "goal", "gold_actions", "perturbation"}
        if set(data) - known:
            raise ValueError(f"task {data.get('id')!r}: unknown keys {sorted(set(data) - known)}")
        pert = data.get("perturbation")
        return cls(
            id=data["id"],
            instruction=data["instruction"],
            scene=data["scene"],
            goal=tuple(tuple(p) for p in data["goal"]),
            gold_actions=tuple(AtomicAction(a[0], tuple(a[1:])) for a in data["gold_actions"]),
            perturbation=Perturbation(tuple(pert["swap"]), pert["expected_step"], pert["expected_reason"])
            if pert else None,
        )


def run_task(task: TaskSpec, actions: str | Sequence[AtomicAction] | None = None,
             cfg: SimConfig = SimConfig(), scenes: Mapping[str, Mapping] | None = None,
             resolver: Resolver | None = None) -> ExecutionTrace:
    spec = scenes[task.scene] if scenes is not None else bundled_scene_spec(task.scene)
    world = load_scene(spec)
    trace = execute_plan(world, task.gold_actions if actions is None else actions, task.goal, cfg, resolver)
    trace.task_id = task.id
    return trace


def load_tasks(data: Sequence[Mapping[str, Any]] | None = None, verify: bool = True) -> list[TaskSpec]:
    """Load task specs (the bundled suite by default).

    With ``verify`` every gold plan is executed and must reach its goal.
    """
    if data is None:
        data = json.loads(resources.files("planbench").joinpath("data/tasks.json").read_text("utf-8"))
    tasks = [TaskSpec.from_dict(d) for d in data]
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate task ids")
    if verify:
        for t in tasks:
            trace = run_task(t)
            if not trace.final_success:
                raise ValueError(f"gold plan of task {t.id!r} does not reach its goal:\n{trace.render()}")
    return tasks
