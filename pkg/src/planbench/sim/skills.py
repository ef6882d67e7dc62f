"""Skill primitives: preconditions and atomic effects on a ``WorldState``.

Semantics are discrete. An object is reachable when the agent stands at the
anchor the object ultimately rests on; nothing else about geometry exists.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .world import AGENT, HistoryEvent, SimObject, WorldState


class SkillKind(str, Enum):
    NAVIGATE = "Navigate"
    PICK = "Pick"
    PLACE = "Place"
    OPEN = "Open"
    CLOSE = "Close"
    TOGGLE_ON = "ToggleOn"
    TOGGLE_OFF = "ToggleOff"
    CLEAN = "Clean"
    HEAT = "Heat"
    COOL = "Cool"
    SLICE = "Slice"

    @property
    def arity(self) -> int:
        return 2 if self is SkillKind.PLACE else 1


class Reason(str, Enum):
    HAND_FULL = "HAND_FULL"
    ALREADY_HELD = "ALREADY_HELD"
    NOT_HOLDING = "NOT_HOLDING"
    NOT_REACHABLE = "NOT_REACHABLE"
    NOT_PICKUPABLE = "NOT_PICKUPABLE"
    NOT_RECEPTACLE = "NOT_RECEPTACLE"
    NOT_OPEN = "NOT_OPEN"
    NOT_OPENABLE = "NOT_OPENABLE"
    ALREADY_OPEN = "ALREADY_OPEN"
    ALREADY_CLOSED = "ALREADY_CLOSED"
    NOT_TOGGLEABLE = "NOT_TOGGLEABLE"
    ALREADY_ON = "ALREADY_ON"
    ALREADY_OFF = "ALREADY_OFF"
    NOT_IN_SINK = "NOT_IN_SINK"
    FAUCET_OFF = "FAUCET_OFF"
    NOT_IN_MICROWAVE = "NOT_IN_MICROWAVE"
    NOT_IN_FRIDGE = "NOT_IN_FRIDGE"
    NOT_CLOSED = "NOT_CLOSED"
    NOT_ON = "NOT_ON"
    NOT_HOLDING_KNIFE = "NOT_HOLDING_KNIFE"
    NOT_SLICEABLE = "NOT_SLICEABLE"
    SELF_PLACEMENT = "SELF_PLACEMENT"
    # Raised before a skill runs.
    NO_ACTIONS = "NO_ACTIONS"
    UNKNOWN_SKILL = "UNKNOWN_SKILL"
    BAD_ARITY = "BAD_ARITY"
    UNRESOLVED_OBJECT = "UNRESOLVED_OBJECT"


@dataclass(frozen=True)
class Skill:
    kind: SkillKind
    params: tuple[str, ...]

    def __post_init__(self):
        if len(self.params) != self.kind.arity:
            raise ValueError(f"{self.kind.value} takes {self.kind.arity} object(s), got {len(self.params)}")

    def __str__(self) -> str:
        return f"{self.kind.value}({', '.join(self.params)})"


@dataclass(frozen=True)
class SkillOutcome:
    ok: bool
    reason: Reason | None = None
    detail: str = ""

    @property
    def label(self) -> str:
        return "ok" if self.ok else f"failed({self.reason.value})"


class _Fail(Exception):
    def __init__(self, reason: Reason, detail: str = ""):
        self.reason = reason
        self.detail = detail


def _containers_of_type(world: WorldState, oid: str, type_name: str) -> SimObject | None:
    loc = world.obj(oid).location
    if loc in world.objects and world.obj(loc).type == type_name:
        return world.obj(loc)
    return None


def _faucet_for(world: WorldState, sink: SimObject) -> SimObject | None:
    anchor = world.anchor_of(sink.id)
    for o in sorted(world.objects.values(), key=lambda o: o.id):
        if o.type == "Faucet" and world.anchor_of(o.id) == anchor:
            return o
    return None


def _sinks_for(world: WorldState, faucet: SimObject) -> list[SimObject]:
    anchor = world.anchor_of(faucet.id)
    return [o for o in world.objects.values() if o.type == "Sink" and world.anchor_of(o.id) == anchor]


def _set(objects: dict, oid: str, add=(), remove=(), **fields) -> None:
    o = objects[oid].with_states(set(add), set(remove))
    objects[oid] = replace(o, **fields) if fields else o


def _require_reachable(world: WorldState, oid: str) -> None:
    if not world.reachable(oid):
        raise _Fail(Reason.NOT_REACHABLE, f"{oid} is at {world.anchor_of(oid)}, agent is at {world.agent_at}")


def _apply(world: WorldState, skill: Skill) -> tuple[dict, dict]:
    """Check preconditions and return (objects, agent fields) after the effect."""
    objects = dict(world.objects)
    agent = {"agent_at": world.agent_at, "held": world.held}
    kind, p = skill.kind, skill.params
    target = world.obj(p[0])

    if kind is SkillKind.NAVIGATE:
        agent["agent_at"] = world.anchor_of(target.id)

    elif kind is SkillKind.PICK:
        if world.held == target.id:
            raise _Fail(Reason.ALREADY_HELD, target.id)
        if world.held is not None:
            raise _Fail(Reason.HAND_FULL, f"already holding {world.held}")
        if not target.pickupable:
            raise _Fail(Reason.NOT_PICKUPABLE, target.id)
        _require_reachable(world, target.id)
        for container in world.ancestors(target.id):
            if world.obj(container).openable and world.obj(container).has("closed"):
                raise _Fail(Reason.NOT_OPEN, f"{container} is closed")
        _set(objects, target.id, add={"held_by_agent"}, location=AGENT, enclosed_since=None)
        agent["held"] = target.id

    elif kind is SkillKind.PLACE:
        dest = world.obj(p[1])
        if world.held != target.id:
            raise _Fail(Reason.NOT_HOLDING, f"not holding {target.id}")
        if dest.id == target.id:
            raise _Fail(Reason.SELF_PLACEMENT, target.id)
        if not dest.receptacle:
            raise _Fail(Reason.NOT_RECEPTACLE, dest.id)
        _require_reachable(world, dest.id)
        if dest.openable and not dest.has("open"):
            raise _Fail(Reason.NOT_OPEN, f"{dest.id} is closed")
        _set(objects, target.id, remove={"held_by_agent"}, location=dest.id)
        agent["held"] = None

    elif kind in (SkillKind.OPEN, SkillKind.CLOSE):
        _require_reachable(world, target.id)
        if not target.openable:
            raise _Fail(Reason.NOT_OPENABLE, target.id)
        if kind is SkillKind.OPEN:
            if target.has("open"):
                raise _Fail(Reason.ALREADY_OPEN, target.id)
            _set(objects, target.id, add={"open"}, remove={"closed"})
        else:
            if target.has("closed"):
                raise _Fail(Reason.ALREADY_CLOSED, target.id)
            _set(objects, target.id, add={"closed"}, remove={"open"})
            if target.type == "Fridge":
                for inner in world.contents(target.id):
                    _set(objects, inner, enclosed_since=world.clock + 1)

    elif kind in (SkillKind.TOGGLE_ON, SkillKind.TOGGLE_OFF):
        _require_reachable(world, target.id)
        if not target.toggleable:
            raise _Fail(Reason.NOT_TOGGLEABLE, target.id)
        turning_on = kind is SkillKind.TOGGLE_ON
        if turning_on and target.has("on"):
            raise _Fail(Reason.ALREADY_ON, target.id)
        if not turning_on and target.has("off"):
            raise _Fail(Reason.ALREADY_OFF, target.id)
        if turning_on:
            _set(objects, target.id, add={"on"}, remove={"off"})
        else:
            _set(objects, target.id, add={"off"}, remove={"on"})
        # Appliance side effects.
        if target.type == "Faucet" and not turning_on:
            for sink in _sinks_for(world, target):
                for inner in world.contents(sink.id):
                    _set(objects, inner, add={"clean"}, remove={"dirty"})
        if turning_on and target.has("closed") and target.type == "Microwave":
            for inner in world.contents(target.id):
                _set(objects, inner, add={"heated"})
        if turning_on and target.has("closed") and target.type == "WashingMachine":
            for inner in world.contents(target.id):
                _set(objects, inner, add={"clean"}, remove={"dirty"})

    elif kind is SkillKind.CLEAN:
        sink = _containers_of_type(world, target.id, "Sink")
        if sink is None:
            raise _Fail(Reason.NOT_IN_SINK, target.id)
        _require_reachable(world, target.id)
        faucet = _faucet_for(world, sink)
        if faucet is None or not faucet.has("on"):
            raise _Fail(Reason.FAUCET_OFF, sink.id)
        _set(objects, target.id, add={"clean"}, remove={"dirty"})

    elif kind is SkillKind.HEAT:
        oven = _containers_of_type(world, target.id, "Microwave")
        if oven is None:
            raise _Fail(Reason.NOT_IN_MICROWAVE, target.id)
        _require_reachable(world, target.id)
        if not oven.has("closed"):
            raise _Fail(Reason.NOT_CLOSED, oven.id)
        if not oven.has("on"):
            raise _Fail(Reason.NOT_ON, oven.id)
        _set(objects, target.id, add={"heated"})

    elif kind is SkillKind.COOL:
        fridge = _containers_of_type(world, target.id, "Fridge")
        if fridge is None:
            raise _Fail(Reason.NOT_IN_FRIDGE, target.id)
        _require_reachable(world, target.id)
        if not fridge.has("closed"):
            raise _Fail(Reason.NOT_CLOSED, fridge.id)
        _set(objects, target.id, add={"cooled"})

    elif kind is SkillKind.SLICE:
        if world.held is None or world.obj(world.held).type != "Knife":
            raise _Fail(Reason.NOT_HOLDING_KNIFE, "agent must hold a Knife")
        if not target.sliceable:
            raise _Fail(Reason.NOT_SLICEABLE, target.id)
        _require_reachable(world, target.id)
        _set(objects, target.id, add={"sliced"})

    return objects, agent


def _chill(objects: dict, step: int) -> None:
    """Objects shut in a closed fridge since an earlier step become cooled."""
    for oid, o in list(objects.items()):
        if o.enclosed_since is None:
            continue
        fridge = objects.get(o.location)
        if fridge is None or fridge.type != "Fridge" or not fridge.has("closed"):
            _set(objects, oid, enclosed_since=None)
        elif o.enclosed_since < step:
            _set(objects, oid, add={"cooled"})


def _delta(before: WorldState, objects: dict, agent: dict) -> tuple:
    changes = []
    for key in ("agent_at", "held"):
        if getattr(before, key) != agent[key]:
            changes.append(("agent", key, getattr(before, key), agent[key]))
    for oid in sorted(objects):
        old, new = before.objects[oid], objects[oid]
        if old == new:
            continue
        if old.location != new.location:
            changes.append((oid, "location", old.location, new.location))
        if old.states != new.states:
            changes.append((oid, "states", sorted(old.states), sorted(new.states)))
    return tuple(changes)


def execute_skill(world: WorldState, skill: Skill) -> tuple[SkillOutcome, WorldState]:
    """Run one skill. On failure the returned world equals the input except
    for the appended history event."""
    missing = [p for p in skill.params if p not in world.objects]
    if missing:
        raise KeyError(f"unknown object id(s) {missing}")
    step = world.clock + 1
    try:
        objects, agent = _apply(world, skill)
    except _Fail as fail:
        outcome = SkillOutcome(False, fail.reason, fail.detail)
        event = HistoryEvent(step, str(skill), outcome.label)
        return outcome, world.evolve(history=world.history + (event,))
    _chill(objects, step)
    event = HistoryEvent(step, str(skill), "ok", _delta(world, objects, agent))
    new = world.evolve(objects=objects, clock=step, history=world.history + (event,), **agent)
    return SkillOutcome(True), new
