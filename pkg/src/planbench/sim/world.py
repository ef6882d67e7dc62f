"""World model for the household simulator: objects, agent state, scene loading."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

AGENT = "agent"
STATE_FLAGS = frozenset(
    {"dirty", "clean", "open", "closed", "on", "off", "heated", "cooled", "sliced", "held_by_agent"}
)
CAPABILITIES = ("receptacle", "openable", "toggleable", "pickupable", "sliceable")


class SceneError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class SimObject:
    id: str
    type: str
    location: str
    states: frozenset[str] = frozenset()
    receptacle: bool = False
    openable: bool = False
    toggleable: bool = False
    pickupable: bool = False
    sliceable: bool = False
    # Step at which the object was last shut inside a cold container.
    enclosed_since: int | None = None

    def has(self, state: str) -> bool:
        return state in self.states

    def with_states(self, add: set[str] = frozenset(), remove: set[str] = frozenset()) -> "SimObject":
        return replace(self, states=(self.states - set(remove)) | set(add))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "type": self.type,
            "location": self.location,
            "states": sorted(self.states),
            **{cap: getattr(self, cap) for cap in CAPABILITIES},
            "enclosed_since": self.enclosed_since,
        }


@dataclass(frozen=True)
class HistoryEvent:
    step: int
    action: str
    outcome: str
    delta: tuple[tuple[str, str, Any, Any], ...] = ()

    def to_dict(self) -> dict:
        return {"step": self.step, "action": self.action, "outcome": self.outcome,
                "delta": [list(d) for d in self.delta]}


@dataclass(frozen=True)
class WorldState:
    objects: Mapping[str, SimObject]
    anchors: tuple[str, ...]
    agent_at: str
    held: str | None = None
    clock: int = 0
    history: tuple[HistoryEvent, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "objects", dict(self.objects))
        check_invariants(self)

    def obj(self, oid: str) -> SimObject:
        return self.objects[oid]

    def anchor_of(self, oid: str) -> str:
        seen = set()
        loc = oid
        while loc not in self.anchors:
            if loc == AGENT:
                return self.agent_at
            if loc in seen:
                raise SceneError(oid, "containment cycle")
            seen.add(loc)
            loc = self.objects[loc].location
        return loc

    def reachable(self, oid: str) -> bool:
        return self.anchor_of(oid) == self.agent_at

    def contents(self, container: str) -> list[str]:
        return sorted((o.id for o in self.objects.values() if o.location == container), key=natural_key)

    def ancestors(self, oid: str) -> list[str]:
        out = []
        loc = self.objects[oid].location
        while loc in self.objects:
            out.append(loc)
            loc = self.objects[loc].location
        return out

    def census(self) -> list[str]:
        return sorted(self.objects, key=natural_key)

    def evolve(self, **changes) -> "WorldState":
        return replace(self, **changes)

    def snapshot(self) -> dict:
        return {
            "agent_at": self.agent_at,
            "held": self.held,
            "clock": self.clock,
            "anchors": list(self.anchors),
            "objects": [self.objects[k].to_dict() for k in sorted(self.objects)],
        }

    def snapshot_hash(self) -> str:
        canonical = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def natural_key(s: str) -> tuple:
    return tuple(int(p) if p.isdigit() else p.lower() for p in re.split(r"(\d+)", s))


def check_invariants(world: WorldState) -> None:
    holders = [o.id for o in world.objects.values() if o.has("held_by_agent")]
    if len(holders) > 1:
        raise SceneError("held", f"agent holds more than one object: {holders}")
    if world.held is not None:
        if holders != [world.held] or world.objects[world.held].location != AGENT:
            raise SceneError("held", f"held object {world.held!r} is not flagged or not with the agent")
    elif holders:
        raise SceneError("held", f"{holders[0]!r} flagged held but agent hand is empty")
    if world.agent_at not in world.anchors:
        raise SceneError("agent_at", f"unknown anchor {world.agent_at!r}")
    for o in world.objects.values():
        if o.has("open") and o.has("closed"):
            raise SceneError(o.id, "open and closed at once")
        if (o.has("open") or o.has("closed")) and not o.openable:
            raise SceneError(o.id, "open/closed state on a non-openable object")
        if o.has("on") and o.has("off"):
            raise SceneError(o.id, "on and off at once")
        if (o.has("on") or o.has("off")) and not o.toggleable:
            raise SceneError(o.id, "on/off state on a non-toggleable object")
        if o.has("dirty") and o.has("clean"):
            raise SceneError(o.id, "dirty and clean at once")
        if o.location != AGENT and o.location not in world.objects and o.location not in world.anchors:
            raise SceneError(o.id, f"dangling location {o.location!r}")


# ---------------------------------------------------------------------------
# Scene documents

_SCENE_KEYS = {"id", "description", "anchors", "entry", "objects"}
_OBJECT_KEYS = {"id", "type", "location", "states", "flags"}


def load_scene(spec: Mapping[str, Any]) -> WorldState:
    """Build a world from ``{anchors: [...], entry?, objects: [{id?, type, location, states, flags}]}``.

    Objects without an id get ``<Type>_<n>``, numbered per type in listing
    order and skipping ids already taken.
    """
    if not isinstance(spec, Mapping):
        raise SceneError("$", "scene must be an object")
    unknown = set(spec) - _SCENE_KEYS
    if unknown:
        raise SceneError("$", f"unknown keys {sorted(unknown)}")
    anchors = spec.get("anchors")
    if not isinstance(anchors, list) or not anchors or not all(isinstance(a, str) and a for a in anchors):
        raise SceneError("$.anchors", "need a non-empty list of anchor names")
    if len(set(anchors)) != len(anchors):
        raise SceneError("$.anchors", "duplicate anchor")
    entry = spec.get("entry", anchors[0])
    if entry not in anchors:
        raise SceneError("$.entry", f"{entry!r} is not an anchor")
    raw_objects = spec.get("objects", [])
    if not isinstance(raw_objects, list):
        raise SceneError("$.objects", "must be a list")

    explicit = set()
    for i, o in enumerate(raw_objects):
        path = f"$.objects[{i}]"
        if not isinstance(o, Mapping):
            raise SceneError(path, "must be an object")
        if set(o) - _OBJECT_KEYS:
            raise SceneError(path, f"unknown keys {sorted(set(o) - _OBJECT_KEYS)}")
        for key in ("type", "location"):
            if not isinstance(o.get(key), str) or not o[key]:
                raise SceneError(f"{path}.{key}", "required non-empty string")
        if "id" in o:
            if not isinstance(o["id"], str) or not o["id"]:
                raise SceneError(f"{path}.id", "must be a non-empty string")
            if o["id"] in explicit or o["id"] in anchors or o["id"] == AGENT:
                raise SceneError(f"{path}.id", f"duplicate id {o['id']!r}")
            explicit.add(o["id"])

    taken = set(explicit)
    counters: dict[str, int] = {}
    ids = []
    for o in raw_objects:
        if "id" in o:
            ids.append(o["id"])
            continue
        n = counters.get(o["type"], 0)
        while True:
            n += 1
            candidate = f"{o['type']}_{n}"
            if candidate not in taken:
                break
        counters[o["type"]] = n
        taken.add(candidate)
        ids.append(candidate)

    objects = {}
    for i, (oid, o) in enumerate(zip(ids, raw_objects)):
        path = f"$.objects[{i}]"
        if o["location"] not in taken and o["location"] not in anchors:
            raise SceneError(f"{path}.location", f"dangling reference {o['location']!r}")
        flags = o.get("flags", {})
        if not isinstance(flags, Mapping) or set(flags) - set(CAPABILITIES):
            raise SceneError(f"{path}.flags", f"flags must be a subset of {CAPABILITIES}")
        caps = {c: bool(flags.get(c, False)) for c in CAPABILITIES}
        if "pickupable" not in flags:
            caps["pickupable"] = not (caps["receptacle"] or caps["openable"] or caps["toggleable"])
        states = o.get("states", [])
        if not isinstance(states, list) or set(states) - STATE_FLAGS:
            raise SceneError(f"{path}.states", f"states must be a subset of {sorted(STATE_FLAGS)}")
        if "held_by_agent" in states:
            raise SceneError(f"{path}.states", "scenes start with an empty hand")
        states = set(states)
        if caps["openable"] and not states & {"open", "closed"}:
            states.add("closed")
        if caps["toggleable"] and not states & {"on", "off"}:
            states.add("off")
        objects[oid] = SimObject(oid, o["type"], o["location"], frozenset(states), **caps)

    try:
        world = WorldState(objects, tuple(anchors), entry)
        for oid in objects:
            world.anchor_of(oid)
        for oid, o in objects.items():
            if o.location in objects and not objects[o.location].receptacle:
                raise SceneError(oid, f"location {o.location!r} is not a receptacle")
    except SceneError as exc:
        raise SceneError(f"$.objects[{ids.index(exc.path)}]" if exc.path in ids else exc.path,
                         str(exc).split(": ", 1)[-1]) from None
    return world


def load_scene_file(path: str | Path) -> WorldState:
    return load_scene(json.loads(Path(path).read_text("utf-8")))


def bundled_scene_spec(name: str) -> dict:
    try:
        text = resources.files("planbench").joinpath(f"data/scenes/{name}.json").read_text("utf-8")
    except FileNotFoundError:
        raise KeyError(f"no bundled scene {name!r}") from None
    return json.loads(text)


def bundled_scene(name: str) -> WorldState:
    return load_scene(bundled_scene_spec(name))
