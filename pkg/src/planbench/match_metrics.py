"""Action-sequence matching metrics for plan evaluation.

Predicted and ground-truth action lists are stripped of low-level locomotion
verbs, cross-matched into a binary matrix, and scored twice:

* quantity: size of a maximum bipartite matching of the matrix;
* order: longest chain of matched pairs increasing in both indices.

Each score is reported as precision (score / m), recall (score / n) and F1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .plan_format import (
    ActionSet,
    AtomicAction,
    default_action_set,
    parse_structured_output,
)

DEFAULT_LOW_LEVEL_VERBS = frozenset({"find", "navigate", "gotoobject", "search", "map"})

DEFAULT_OBJECT_ALIASES = {
    "refrigerator": "fridge",
    "washer": "washing machine",
    "laundry machine": "washing machine",
    "countertop": "counter",
    "counter top": "counter",
    "tv": "television",
    "cellphone": "phone",
    "cell phone": "phone",
}

_ARTICLES = {"a", "an", "the", "some"}


class ActionMatcher(Protocol):
    """Returns the 1-based ground-truth indices that ``pred`` matches."""

    def __call__(self, pred: AtomicAction, gt: Sequence[AtomicAction]) -> set[int]: ...


class MatcherError(RuntimeError):
    def __init__(self, row: int, cause: BaseException):
        self.row = row
        super().__init__(f"matcher failed on predicted action {row}: {cause}")


@dataclass(frozen=True)
class MatchMatrix:
    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or not np.isin(cells, (0, 1)).all():
            raise ValueError("match matrix must be a 2-D 0/1 array")
        object.__setattr__(self, "cells", cells.astype(np.uint8))

    @property
    def m(self) -> int:
        return self.cells.shape[0]

    @property
    def n(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]], n: int | None = None) -> "MatchMatrix":
        if not rows:
            return cls(np.zeros((0, n or 0), dtype=np.uint8))
        return cls(np.array(rows, dtype=np.uint8))


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    score: int
    m: int
    n: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "score": self.score,
            "m": self.m,
            "n": self.n,
        }


@dataclass(frozen=True)
class MatchMetrics:
    quantity: PRF1
    order: PRF1
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity.to_dict(),
            "order": self.order.to_dict(),
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# Rule-based matcher


def normalize_object(name: str, aliases: Mapping[str, str] = DEFAULT_OBJECT_ALIASES) -> str:
    words = re.sub(r"[^\w\s]", " ", name.lower()).split()
    while words and words[0] in _ARTICLES:
        words = words[1:]
    text = " ".join(words)
    return aliases.get(text, text)


@dataclass
class RuleMatcher:
    """Verbs equal after alias resolution and argument multisets equal after
    normalization."""

    action_set: ActionSet = field(default_factory=default_action_set)
    object_aliases: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_OBJECT_ALIASES))

    def key(self, action: AtomicAction) -> tuple[str, tuple[str, ...]]:
        verb = self.action_set.canonical(action.verb) or action.verb.strip()
        args = tuple(sorted(normalize_object(a, self.object_aliases) for a in action.args))
        return verb.lower(), args

    def matches(self, a: AtomicAction, b: AtomicAction) -> bool:
        return self.key(a) == self.key(b)

    def __call__(self, pred: AtomicAction, gt: Sequence[AtomicAction]) -> set[int]:
        k = self.key(pred)
        return {j for j, g in enumerate(gt, start=1) if self.key(g) == k}


# ---------------------------------------------------------------------------
# Pipeline stages


def filter_low_level(
    actions: Iterable[AtomicAction],
    low_level_verbs: Iterable[str] = DEFAULT_LOW_LEVEL_VERBS,
    action_set: ActionSet | None = None,
) -> list[AtomicAction]:
    action_set = action_set or default_action_set()
    low = {v.lower() for v in low_level_verbs}
    kept = []
    for a in actions:
        verb = action_set.canonical(a.verb) or a.verb
        if verb.lower() not in low and a.verb.strip().lower() not in low:
            kept.append(a)
    return kept


def build_match_matrix(
    pred: Sequence[AtomicAction],
    gt: Sequence[AtomicAction],
    matcher: ActionMatcher | Callable[[AtomicAction, Sequence[AtomicAction]], set[int]],
) -> MatchMatrix:
    cells = np.zeros((len(pred), len(gt)), dtype=np.uint8)
    for i, p in enumerate(pred):
        try:
            hits = matcher(p, gt)
        except Exception as exc:
            raise MatcherError(i, exc) from exc
        for j in hits:
            if not 1 <= j <= len(gt):
                raise MatcherError(i, ValueError(f"index {j} outside 1..{len(gt)}"))
            cells[i, j - 1] = 1
    return MatchMatrix(cells)


def hungarian_quantity(M: MatchMatrix) -> int:
    """Maximum-cardinality bipartite matching by augmenting paths."""
    cells = M.cells
    adjacency = [np.flatnonzero(row).tolist() for row in cells]
    owner = [-1] * M.n  # column -> matched row

    def augment(row: int, seen: list[bool]) -> bool:
        for col in adjacency[row]:
            if seen[col]:
                continue
            seen[col] = True
            if owner[col] == -1 or augment(owner[col], seen):
                owner[col] = row
                return True
        return False

    return sum(augment(r, [False] * M.n) for r in range(M.m))


def lcs_order(pred: Sequence | None, gt: Sequence | None, M: MatchMatrix) -> int:
    """LCS of the two lists where element equality is ``M[i, j] == 1``."""
    m, n = M.m, M.n
    if pred is not None and len(pred) != m:
        raise ValueError(f"pred has {len(pred)} items but M has {m} rows")
    if gt is not None and len(gt) != n:
        raise ValueError(f"gt has {len(gt)} items but M has {n} columns")
    cells = M.cells
    prev = [0] * (n + 1)
    for i in range(m):
        cur = [0] * (n + 1)
        row = cells[i]
        for j in range(n):
            if row[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return prev[n]


def prf1(score: int, m: int, n: int) -> PRF1:
    if score < 0 or m < 0 or n < 0:
        raise ValueError("score and lengths must be non-negative")
    if score > min(m, n):
        raise ValueError(f"score {score} exceeds min(m, n) = {min(m, n)}")
    precision = score / m if m else 0.0
    recall = score / n if n else 0.0
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom else 0.0
    return PRF1(precision, recall, f1, score, m, n)


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "lenient"
    low_level_verbs: frozenset[str] = DEFAULT_LOW_LEVEL_VERBS
    action_set: ActionSet | None = None


def score_actions(
    pred: Sequence[AtomicAction],
    gt: Sequence[AtomicAction],
    matcher: ActionMatcher,
    cfg: EvalConfig = EvalConfig(),
    flags: Sequence[str] = (),
) -> MatchMetrics:
    action_set = cfg.action_set or default_action_set()
    pred = filter_low_level(pred, cfg.low_level_verbs, action_set)
    gt = filter_low_level(gt, cfg.low_level_verbs, action_set)
    M = build_match_matrix(pred, gt, matcher)
    quantity = prf1(hungarian_quantity(M), M.m, M.n)
    order = prf1(lcs_order(pred, gt, M), M.m, M.n)
    return MatchMetrics(quantity, order, tuple(flags))


def evaluate_plan_pair(
    pred_raw: str,
    gt_raw: str,
    matcher: ActionMatcher | None = None,
    cfg: EvalConfig = EvalConfig(),
) -> MatchMetrics:
    """Score a predicted structured output against the ground truth.

    An unparseable prediction scores zero with the ``format_failure`` flag; an
    unparseable ground truth raises ``ValueError``.
    """
    matcher = matcher or RuleMatcher(cfg.action_set or default_action_set())
    gt_out, gt_report = parse_structured_output(gt_raw, cfg.mode)
    if gt_out is None or (not gt_report.actions_parsed and gt_report.tags_present["actions"]):
        raise ValueError("ground truth does not parse")
    pred_out, pred_report = parse_structured_output(pred_raw, cfg.mode)
    flags: list[str] = []
    pred_actions: Sequence[AtomicAction] = ()
    if pred_out is None or not pred_report.actions_parsed:
        flags.append("format_failure")
    else:
        pred_actions = pred_out.actions
        if not pred_actions:
            flags.append("empty_prediction")
    return score_actions(pred_actions, gt_out.actions, matcher, cfg, flags)
