"""Visual and spatial perception rewards.

Grounding/detection answers are scored by a maximum-total-IoU assignment
between predicted and ground-truth boxes, counting answers by exact match, and
spatial answers by a two-branch evaluator (multiple-choice vs. descriptive
relation statements) with a verbosity penalty.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


class SpatialScoringError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) and c >= 0 for c in coords):
            raise ValueError(f"box coordinates must be finite and non-negative: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must have positive area: {coords}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BBox":
        if len(values) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(pred: Sequence[BBox], gt: Sequence[BBox]) -> np.ndarray:
    return np.array([[iou(p, g) for g in gt] for p in pred], dtype=float).reshape(len(pred), len(gt))


def detection_reward(pred: Sequence[BBox], gt: Sequence[BBox], iou_threshold: float = 0.5) -> float:
    """Sum of IoUs over the best one-to-one assignment, divided by max(|pred|, |gt|).

    Pairs below ``iou_threshold`` contribute nothing; unmatched and spurious
    boxes dilute the score through the denominator.
    """
    if not pred and not gt:
        return 1.0
    if not pred or not gt:
        return 0.0
    weights = iou_matrix(pred, gt)
    weights[weights < iou_threshold] = 0.0
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum()) / max(len(pred), len(gt))


_NUM = r"-?\d+(?:\.\d+)?"
_BOX_RE = re.compile(r"\[\s*({0})\s*,\s*({0})\s*,\s*({0})\s*,\s*({0})\s*\]".format(_NUM))
_NUMERIC_GROUP_RE = re.compile(r"[\[(]\s*{0}(?:\s*,\s*{0})+\s*[\])]".format(_NUM))
_INT_RE = re.compile(r"(?<![\w.])\d+(?![\w.]|\.\d)")


def extract_boxes(text: str) -> list[BBox]:
    boxes = []
    for m in _BOX_RE.finditer(text):
        try:
            boxes.append(BBox.from_list([float(g) for g in m.groups()]))
        except ValueError:
            continue
    return boxes


def extract_count(text: str) -> int | None:
    """Last standalone integer in ``text`` once coordinate groups are removed."""
    cleaned = _NUMERIC_GROUP_RE.sub(" ", text)
    found = _INT_RE.findall(cleaned)
    return int(found[-1]) if found else None


def counting_reward(pred_count: int | str | None, gt_count: int) -> float:
    if isinstance(pred_count, str):
        pred_count = extract_count(pred_count)
    if gt_count < 0 or (pred_count is not None and pred_count < 0):
        raise ValueError("counts must be non-negative")
    return 1.0 if pred_count == gt_count else 0.0


def perception_reward(prediction: str | Sequence, ground_truth,
                      iou_threshold: float = 0.5) -> tuple[str, float]:
    """Pick the task from the ground-truth shape, then score it.

    An integer (or integer string) is a counting target; a box or list of
    boxes is a grounding/detection target.
    """
    if isinstance(ground_truth, bool):
        raise ValueError("unsupported ground truth")
    if isinstance(ground_truth, int) or (isinstance(ground_truth, str) and ground_truth.strip().isdigit()):
        pred = prediction if isinstance(prediction, (int, str)) else None
        return "counting", counting_reward(pred, int(ground_truth))
    if isinstance(ground_truth, Sequence) and not isinstance(ground_truth, str):
        gt_list = [ground_truth] if ground_truth and not isinstance(ground_truth[0], Sequence) else ground_truth
        gt = [BBox.from_list(b) for b in gt_list]
        if isinstance(prediction, str):
            pred = extract_boxes(prediction)
        else:
            pred_list = [prediction] if prediction and not isinstance(prediction[0], Sequence) else prediction
            pred = [BBox.from_list(b) for b in pred_list]
        return ("grounding" if len(gt) == 1 else "detection"), detection_reward(pred, gt, iou_threshold)
    raise ValueError(f"cannot infer perception task from ground truth {ground_truth!r}")


# ---------------------------------------------------------------------------
# Spatial reasoning


@dataclass(frozen=True)
class SpatialTask:
    kind: str  # "multiple_choice" or "descriptive"
    question: str
    ground_truth: str
    options: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("multiple_choice", "descriptive"):
            raise ValueError(f"unknown spatial task kind {self.kind!r}")
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        if self.kind == "multiple_choice" and (not self.options or len(self.options) < 2):
            raise ValueError("multiple-choice tasks need at least two options")
        if self.kind == "descriptive" and self.options:
            raise ValueError("descriptive tasks take no options")


@dataclass(frozen=True)
class SpatialConfig:
    beta: float = 0.5
    gamma: float = 3.0


@lru_cache(maxsize=1)
def relation_tables() -> tuple[dict[str, list[tuple[str, ...]]], dict[str, str], frozenset[str]]:
    data = json.loads(resources.files("planbench").joinpath("data/relations.json").read_text("utf-8"))
    phrases = {rel: [tuple(p.split()) for p in ps] for rel, ps in data["relations"].items()}
    return phrases, data["antonyms"], frozenset(data["stopwords"])


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def verbosity_penalty(prediction: str, reference: str, cfg: SpatialConfig = SpatialConfig()) -> float:
    ratio = len(prediction.split()) / max(1, len(reference.split()))
    return max(0.0, 1.0 - cfg.beta * max(0.0, ratio - cfg.gamma))


def _relation_occurrences(tokens: list[str]) -> list[tuple[int, int, str]]:
    """All (start, length, relation) hits, longest phrase first at each position."""
    phrases, _, _ = relation_tables()
    flat = sorted(((p, rel) for rel, ps in phrases.items() for p in ps), key=lambda x: -len(x[0]))
    hits = []
    i = 0
    while i < len(tokens):
        for phrase, rel in flat:
            if tuple(tokens[i : i + len(phrase)]) == phrase:
                hits.append((i, len(phrase), rel))
                i += len(phrase) - 1
                break
        i += 1
    return hits


def _content(tokens: Iterable[str]) -> set[str]:
    _, _, stop = relation_tables()
    return {t for t in tokens if t not in stop}


def parse_relation(text: str) -> tuple[set[str], str, set[str]]:
    """Split a relation statement into (subject tokens, relation, object tokens)."""
    tokens = _tokens(text)
    hits = _relation_occurrences(tokens)
    if not hits:
        raise SpatialScoringError(f"no known spatial relation in {text!r}")
    start, length, rel = hits[0]
    return _content(tokens[:start]), rel, _content(tokens[start + length :])


def _descriptive_correct(gt: str, prediction: str) -> bool:
    subj, rel, obj = parse_relation(gt)
    _, antonyms, _ = relation_tables()
    tokens = _tokens(prediction)
    for start, length, pred_rel in _relation_occurrences(tokens):
        left = _content(tokens[:start])
        right = _content(tokens[start + length :])
        if pred_rel == rel and subj <= left and obj <= right:
            return True
        # Same fact stated from the other object's side.
        if subj and obj and pred_rel == antonyms.get(rel) and subj <= right and obj <= left:
            return True
    return False


_OPTION_PREFIX_RE = re.compile(r"^\s*\(?([A-Za-z])[.):]\s+")
_CITED_PATTERNS = (
    re.compile(r"\b(?:answer|option|choice)\s*(?:is|would be|:)?\s*\(?([A-Z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"\(([A-Z])\)"),
    re.compile(r"^\s*([A-Z])(?:[.):]|\s*$)"),
)


def _option_texts(options: Sequence[str]) -> list[str]:
    return [_OPTION_PREFIX_RE.sub("", o).strip() for o in options]


def _cited_letters(prediction: str, letters: str) -> set[str]:
    bare = re.sub(r"[^\w]", "", prediction)
    if len(bare) == 1 and bare.upper() in letters:
        return {bare.upper()}
    cited = set()
    for pattern in _CITED_PATTERNS:
        for m in pattern.finditer(prediction):
            letter = m.group(1).upper()
            if letter in letters:
                cited.add(letter)
    return cited


def _is_sentence(text: str) -> bool:
    return len(_tokens(text)) > 4 or text.strip().endswith((".", "!", "?"))


def _contains_phrase(tokens: list[str], phrase: list[str]) -> bool:
    k = len(phrase)
    return k > 0 and any(tokens[i : i + k] == phrase for i in range(len(tokens) - k + 1))


def _mcq_correct(task: SpatialTask, prediction: str) -> bool:
    texts = _option_texts(task.options)
    letters = "".join(chr(ord("A") + i) for i in range(len(texts)))
    gt = task.ground_truth.strip()
    gt_bare = re.sub(r"[^\w]", "", gt).upper()
    if len(gt_bare) == 1 and gt_bare in letters:
        gt_index = letters.index(gt_bare)
    else:
        norm = [" ".join(_tokens(t)) for t in texts]
        gt_norm = " ".join(_tokens(_OPTION_PREFIX_RE.sub("", gt)))
        gt_index = norm.index(gt_norm) if gt_norm in norm else None
    gt_text = texts[gt_index] if gt_index is not None else gt

    cited = _cited_letters(prediction, letters)
    if cited:
        return gt_index is not None and cited == {letters[gt_index]}

    pred_tokens = _tokens(prediction)
    if _is_sentence(gt_text):
        return _content(_tokens(gt_text)) <= set(pred_tokens)
    gt_tokens = _tokens(gt_text)
    if not _contains_phrase(pred_tokens, gt_tokens):
        return False
    # An answer naming several options is not a commitment to one of them.
    for k, other in enumerate(texts):
        other_tokens = _tokens(other)
        if k != gt_index and other_tokens != gt_tokens and not _contains_phrase(gt_tokens, other_tokens):
            if _contains_phrase(pred_tokens, other_tokens):
                return False
    return True


def spatial_reward(task: SpatialTask, prediction: str, cfg: SpatialConfig = SpatialConfig()) -> float:
    if task.kind == "multiple_choice":
        correct = _mcq_correct(task, prediction)
    else:
        correct = _descriptive_correct(task.ground_truth, prediction)
    if not correct:
        return 0.0
    return verbosity_penalty(prediction, task.ground_truth, cfg)
