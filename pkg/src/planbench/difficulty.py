"""Sample difficulty from progressive pixel masking.

A sample is answered repeatedly under random pixel masks of increasing
ratio. Robust accuracy at each ratio is the mean correctness over ``k``
independent masks, and the failure threshold is the smallest ratio at which
it drops below ``tau``.
"""

from __future__ import annotations

import base64
import hashlib
import io
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from PIL import Image

DEFAULT_LAMBDAS = tuple(i / 10 for i in range(10))
DEFAULT_K = 10
DEFAULT_TAU = 0.1
FILLS = ("zero", "mean", "noise")


class PredictionError(RuntimeError):
    def __init__(self, lam: float, repeat: int, cause: BaseException):
        self.lam = lam
        self.repeat = repeat
        super().__init__(f"predictor failed at lambda={lam} repeat {repeat}: {cause}")


@dataclass(frozen=True)
class ImageBuffer:
    """8-bit raster stored as an (height, width, channels) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected HxW, HxWx1 or HxWx3 pixels, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("image must have at least one pixel")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
                raise ValueError("pixel values must be 8-bit integers")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @classmethod
    def from_bytes(cls, data: bytes, width: int, height: int, channels: int = 3) -> "ImageBuffer":
        if len(data) != width * height * channels:
            raise ValueError(f"expected {width * height * channels} bytes, got {len(data)}")
        return cls(np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels))

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def fingerprint(self) -> str:
        h = hashlib.sha256(f"{self.height}x{self.width}x{self.channels}:".encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()


def load_image(path: str | Path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("L" if im.mode in ("1", "I", "I;16", "F") else "RGB")
        return ImageBuffer(np.array(im))


def save_image(img: ImageBuffer, path: str | Path) -> None:
    px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    Image.fromarray(px).save(path)


def to_png_bytes(img: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    Image.fromarray(px).save(buf, format="PNG")
    return buf.getvalue()


def masked_count(lam: float, n: int) -> int:
    """round(lam * n), halves rounded up so the count never depends on parity."""
    return int(math.floor(lam * n + 0.5))


def mask_image(img: ImageBuffer, lam: float, seed: int | Sequence[int], fill: str = "zero",
               patch_size: int = 1) -> ImageBuffer:
    """Occlude round(lam * N) distinct positions chosen uniformly without replacement.

    With ``patch_size > 1`` the positions are cells of a patch grid and every
    pixel of a chosen cell is filled.
    """
    if not 0.0 <= lam <= 1.0 or math.isnan(lam):
        raise ValueError(f"masking ratio must be in [0, 1], got {lam}")
    if fill not in FILLS:
        raise ValueError(f"fill must be one of {FILLS}, got {fill!r}")
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    out = img.pixels.copy()
    rows = -(-img.height // patch_size)
    cols = -(-img.width // patch_size)
    count = masked_count(lam, rows * cols)
    if count:
        rng = np.random.default_rng(seed)
        cells = rng.choice(rows * cols, size=count, replace=False)
        if patch_size == 1:
            mask = np.zeros(img.n_pixels, dtype=bool)
            mask[cells] = True
            mask = mask.reshape(img.height, img.width)
        else:
            grid = np.zeros(rows * cols, dtype=bool)
            grid[cells] = True
            grid = grid.reshape(rows, cols)
            mask = np.kron(grid, np.ones((patch_size, patch_size), dtype=bool))[: img.height, : img.width]
        if fill == "zero":
            out[mask] = 0
        elif fill == "mean":
            out[mask] = np.round(img.pixels.reshape(-1, img.channels).mean(axis=0)).astype(np.uint8)
        else:
            out[mask] = rng.integers(0, 256, size=(int(mask.sum()), img.channels), dtype=np.uint8)
    return ImageBuffer(out)


# ---------------------------------------------------------------------------
# Predictors and correctness


class Predictor(Protocol):
    def predict(self, img: ImageBuffer, question: str) -> str: ...


CorrectnessJudge = Callable[[str, str], bool]


def _normalize(text: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", text.lower()).split())


def normalized_equality(answer: str, ground_truth: str) -> bool:
    return _normalize(answer) == _normalize(ground_truth)


def count_masked(img: ImageBuffer) -> int:
    """Pixels that are zero in every channel."""
    return int((img.pixels == 0).all(axis=2).sum())


@dataclass
class ConstantPredictor:
    answer: str

    def predict(self, img: ImageBuffer, question: str) -> str:
        return self.answer


@dataclass
class ThresholdPredictor:
    """Answers correctly while fewer than round(cutoff * N) pixels are black.

    Meant for images without black pixels, so the black count is exactly the
    number of masked pixels.
    """

    cutoff: float
    answer: str
    wrong_answer: str = "cannot tell"

    def predict(self, img: ImageBuffer, question: str) -> str:
        ok = count_masked(img) < masked_count(self.cutoff, img.n_pixels)
        return self.answer if ok else self.wrong_answer


@dataclass
class StochasticPredictor:
    """Correct with probability ``1 - masked fraction``, decided by a hash of
    the pixels so replays are identical."""

    answer: str
    wrong_answer: str = "cannot tell"
    salt: int = 0

    def predict(self, img: ImageBuffer, question: str) -> str:
        digest = hashlib.sha256(f"{self.salt}:{img.fingerprint()}".encode()).digest()
        u = int.from_bytes(digest[:8], "big") / 2**64
        return self.answer if u >= count_masked(img) / img.n_pixels else self.wrong_answer


STUB_PREDICTORS = ("correct", "wrong", "threshold", "stochastic")


def stub_predictor(name: str, answer: str) -> Predictor:
    """Build a stub from ``correct``, ``wrong``, ``threshold:<c>`` or ``stochastic``."""
    kind, _, arg = name.partition(":")
    if kind == "correct":
        return ConstantPredictor(answer)
    if kind == "wrong":
        return ConstantPredictor("\x00never matches\x00")
    if kind == "threshold":
        return ThresholdPredictor(float(arg or 0.5), answer)
    if kind == "stochastic":
        return StochasticPredictor(answer, salt=int(arg or 0))
    raise ValueError(f"unknown stub predictor {name!r}; expected one of {STUB_PREDICTORS}")


class EndpointPredictor:
    """Queries a vision-language chat endpoint with the image inlined as a data URL."""

    def __init__(self, client, model: str = "", max_tokens: int = 256):
        self.client = client
        self.model = model
        self.max_tokens = max_tokens

    def predict(self, img: ImageBuffer, question: str) -> str:
        url = "data:image/png;base64," + base64.b64encode(to_png_bytes(img)).decode("ascii")
        messages = [{
            "role": "user",
            "content": [
                {"type": "image_url", "image_url": {"url": url}},
                {"type": "text", "text": question},
            ],
        }]
        return self.client.chat(messages, max_tokens=self.max_tokens, model=self.model or None).text


# ---------------------------------------------------------------------------
# Profiles


def repeat_seed(seed: int, lam_index: int, repeat: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, lam_index, repeat])


def _lambda_key(lam: float) -> int:
    return int(round(lam * 1_000_000))


def robust_accuracy(predictor: Predictor, judge: CorrectnessJudge, img: ImageBuffer, question: str,
                    ground_truth: str, lam: float, k: int = DEFAULT_K, seed: int = 0,
                    fill: str = "zero", lam_index: int | None = None) -> float:
    """Fraction of ``k`` independently masked copies answered correctly.

    Repeat seeds derive from (seed, lam_index, repeat); ``lam_index`` defaults
    to the ratio in millionths so standalone calls stay reproducible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = _lambda_key(lam) if lam_index is None else lam_index
    hits = 0
    for rep in range(k):
        masked = mask_image(img, lam, repeat_seed(seed, idx, rep), fill)
        try:
            answer = predictor.predict(masked, question)
        except Exception as exc:
            raise PredictionError(lam, rep, exc) from exc
        hits += bool(judge(answer, ground_truth))
    return hits / k


def failure_threshold(accuracies: Sequence[float], lambdas: Sequence[float] = DEFAULT_LAMBDAS,
                      tau: float = DEFAULT_TAU) -> float | None:
    """Smallest grid ratio whose accuracy is strictly below ``tau``; None if none is."""
    if len(accuracies) != len(lambdas):
        raise ValueError(f"{len(accuracies)} accuracies for {len(lambdas)} grid points")
    for lam, acc in zip(lambdas, accuracies):
        if acc < tau:
            return lam
    return None


class Difficulty(str, Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"


@dataclass(frozen=True)
class BucketBounds:
    hard_below: float = 0.3
    easy_from: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.hard_below <= self.easy_from <= 1.0:
            raise ValueError("bucket bounds must satisfy 0 <= hard_below <= easy_from <= 1")


def difficulty_bucket(lambda_star: float | None, bounds: BucketBounds = BucketBounds()) -> Difficulty:
    if lambda_star is None or lambda_star >= bounds.easy_from:
        return Difficulty.EASY
    if lambda_star >= bounds.hard_below:
        return Difficulty.MODERATE
    return Difficulty.HARD


@dataclass
class MaskingProfile:
    lambdas: tuple[float, ...]
    accuracies: tuple[float, ...]
    k: int
    tau: float
    lambda_star: float | None = field(default=None)

    def __post_init__(self):
        self.lambdas = tuple(self.lambdas)
        self.accuracies = tuple(self.accuracies)
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambdas must be strictly increasing")
        if any(not 0.0 <= lam < 1.0 for lam in self.lambdas):
            raise ValueError("lambdas must lie in [0, 1)")
        if len(self.accuracies) != len(self.lambdas):
            raise ValueError("one accuracy per lambda required")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        if self.lambda_star != failure_threshold(self.accuracies, self.lambdas, self.tau):
            raise ValueError("lambda_star disagrees with the accuracies")

    @property
    def bucket(self) -> Difficulty:
        return difficulty_bucket(self.lambda_star)

    def to_record(self, sample_id: str, bounds: BucketBounds = BucketBounds()) -> dict:
        return {
            "id": sample_id,
            "lambdas": list(self.lambdas),
            "accuracies": list(self.accuracies),
            "lambda_star": self.lambda_star,
            "bucket": difficulty_bucket(self.lambda_star, bounds).value,
        }


def masking_profile(predictor: Predictor, img: ImageBuffer, question: str, ground_truth: str,
                    judge: CorrectnessJudge = normalized_equality, lambdas: Sequence[float] = DEFAULT_LAMBDAS,
                    k: int = DEFAULT_K, tau: float = DEFAULT_TAU, seed: int = 0, fill: str = "zero",
                    max_workers: int = 1) -> MaskingProfile:
    """Robust accuracy at every grid ratio, then the failure threshold."""

    def one(i: int) -> float:
        return robust_accuracy(predictor, judge, img, question, ground_truth, lambdas[i], k, seed, fill, i)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            accuracies = list(pool.map(one, range(len(lambdas))))
    else:
        accuracies = [one(i) for i in range(len(lambdas))]
    return MaskingProfile(tuple(lambdas), tuple(accuracies), k, tau,
                          failure_threshold(accuracies, lambdas, tau))
