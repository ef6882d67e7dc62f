"""Binding textual object references to scene objects.

Layers are tried in a fixed order and the first that answers wins:

1. exact id;
2. static alias table (phrase -> object type);
3. context cache (pronouns, or a recently manipulated object of a fitting type);
4. fuzzy token overlap over types, ids and states.

An optional judge-backed layer runs before all of them when configured.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

from .world import WorldState, natural_key

PRONOUNS = frozenset({"it", "them", "this", "that", "one", "same", "object", "item", "thing"})
_ARTICLES = frozenset({"a", "an", "the", "some", "my", "your"})

LAYER_JUDGE = "judge"
LAYER_ID = "exact_id"
LAYER_ALIAS = "static_alias"
LAYER_CACHE = "context_cache"
LAYER_FUZZY = "fuzzy"


class ResolutionError(LookupError):
    def __init__(self, reference: str, candidates: Sequence[tuple[str, float]]):
        self.reference = reference
        self.candidates = list(candidates)
        shown = ", ".join(f"{oid} ({score:.2f})" for oid, score in self.candidates) or "none"
        super().__init__(f"cannot resolve {reference!r}; closest candidates: {shown}")


@dataclass(frozen=True)
class Resolution:
    object_id: str
    layer: str
    score: float = 1.0


@dataclass
class ResolutionContext:
    """Most recently manipulated objects, newest first."""

    recent: list[str] = field(default_factory=list)
    max_size: int = 8

    def touch(self, oid: str) -> None:
        if oid in self.recent:
            self.recent.remove(oid)
        self.recent.insert(0, oid)
        del self.recent[self.max_size :]


def split_words(text: str) -> list[str]:
    text = re.sub(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])", " ", text)
    return re.findall(r"[a-z0-9]+", text.lower())


def _stem(word: str) -> str:
    if len(word) > 3 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("es") and word[-3] in "sxz":
        return word[:-2]
    if len(word) > 2 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def reference_tokens(text: str) -> list[str]:
    return [_stem(w) for w in split_words(text) if w not in _ARTICLES]


def normalize_phrase(text: str) -> str:
    return " ".join(w for w in split_words(text) if w not in _ARTICLES)


def object_tokens(world: WorldState, oid: str) -> set[str]:
    o = world.obj(oid)
    words = split_words(o.type) + split_words(oid) + [o.type.lower()] + sorted(o.states)
    return {_stem(w) for w in words}


def default_aliases() -> dict[str, str]:
    text = resources.files("planbench").joinpath("data/object_aliases.json").read_text("utf-8")
    return {normalize_phrase(k): v for k, v in json.loads(text).items()}


JudgeLayer = Callable[[str, WorldState], "str | None"]


class Resolver:
    def __init__(self, aliases: Mapping[str, str] | None = None, judge: JudgeLayer | None = None,
                 floor: float = 0.0):
        self.aliases = {normalize_phrase(k): v for k, v in (default_aliases() if aliases is None else aliases).items()}
        self.judge = judge
        self.floor = floor

    def fuzzy_scores(self, reference: str, world: WorldState) -> list[tuple[str, float]]:
        ref = set(reference_tokens(reference))
        if not ref:
            return []
        scored = [(oid, len(ref & object_tokens(world, oid)) / len(ref)) for oid in world.objects]
        return sorted(scored, key=lambda x: (-x[1], natural_key(x[0])))

    def _pick_of_type(self, oids: list[str], context: ResolutionContext) -> str:
        for oid in context.recent:
            if oid in oids:
                return oid
        return min(oids, key=natural_key)

    def resolve(self, reference: str, world: WorldState, context: ResolutionContext | None = None) -> Resolution:
        context = context or ResolutionContext()
        ref = reference.strip()

        if self.judge is not None:
            answer = self.judge(ref, world)
            if answer in world.objects:
                return Resolution(answer, LAYER_JUDGE)

        if ref in world.objects:
            return Resolution(ref, LAYER_ID)
        lowered = {oid.lower(): oid for oid in world.objects}
        if ref.lower() in lowered:
            return Resolution(lowered[ref.lower()], LAYER_ID)

        alias_type = self.aliases.get(normalize_phrase(ref))
        if alias_type is not None:
            of_type = [oid for oid, o in world.objects.items() if o.type == alias_type]
            if of_type:
                return Resolution(self._pick_of_type(of_type, context), LAYER_ALIAS)

        words = set(reference_tokens(ref))
        live = [oid for oid in context.recent if oid in world.objects]
        if live and words and words <= PRONOUNS:
            return Resolution(live[0], LAYER_CACHE)
        if words:
            for oid in live:
                if words <= object_tokens(world, oid):
                    return Resolution(oid, LAYER_CACHE)

        scores = self.fuzzy_scores(ref, world)
        if scores and scores[0][1] > self.floor:
            return Resolution(scores[0][0], LAYER_FUZZY, scores[0][1])
        raise ResolutionError(reference, scores[:3])


def resolve_object(reference: str, world: WorldState, context: ResolutionContext | None = None,
                   resolver: Resolver | None = None) -> str:
    return (resolver or Resolver()).resolve(reference, world, context).object_id
