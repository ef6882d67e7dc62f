"""Client and stubs for external judge models.

Every judge role (plan scoring, action matching, answer consistency) goes
through the same ``complete(JudgeRequest) -> str`` interface. ``JudgeClient``
speaks the chat-completions wire protocol; the stub classes answer locally
and deterministically so the whole toolkit runs without network access.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Any, Callable, Iterable, Protocol, Sequence

import httpx

from .plan_format import AtomicAction

logger = logging.getLogger(__name__)


class JudgeError(RuntimeError):
    pass


class JudgeTransportError(JudgeError):
    """Retries exhausted; ``attempts`` lists what happened on each try."""

    def __init__(self, message: str, attempts: Sequence[str]):
        self.attempts = list(attempts)
        super().__init__(f"{message} after {len(self.attempts)} attempts: {'; '.join(self.attempts)}")


class JudgeProtocolError(JudgeError):
    def __init__(self, status: int | None, excerpt: str):
        self.status = status
        self.excerpt = excerpt
        super().__init__(f"judge endpoint returned {status}: {excerpt}")


class JudgeFormatError(JudgeError):
    """The judge answered, but not in the format the caller needs."""


def load_prompt(name: str) -> str:
    return resources.files("planbench").joinpath(f"prompts/{name}").read_text("utf-8")


@dataclass(frozen=True)
class JudgeRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 512
    model_name: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not self.system_prompt and not self.user_prompt:
            raise ValueError("judge request needs a prompt")


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = ""
    token_env: str = "PLANBENCH_JUDGE_TOKEN"
    max_concurrency: int = 4
    timeout: float = 60.0
    retries: int = 2
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JudgeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown judge config keys: {sorted(unknown)}")
        return cls(**data)


class Judge(Protocol):
    def complete(self, req: JudgeRequest) -> str: ...


@dataclass
class JudgeReply:
    text: str
    attempts: list[str] = field(default_factory=list)


_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class JudgeClient:
    """Blocking chat-completions client, safe to share between threads.

    At most ``cfg.max_concurrency`` requests are in flight through one client;
    share a single instance across workers to bound the whole process.
    """

    def __init__(self, cfg: JudgeConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_concurrency)
        self._http = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._sleep = sleep

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.cfg.token_env) if self.cfg.token_env else None
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def chat(self, messages: list[dict], *, temperature: float = 0.0, max_tokens: int = 512,
             model: str | None = None) -> JudgeReply:
        payload = {
            "model": model or self.cfg.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        attempts: list[str] = []
        for attempt in range(self.cfg.retries + 1):
            if attempt:
                self._sleep(self.cfg.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._http.post(self.cfg.endpoint, json=payload, headers=self._headers())
            except httpx.TimeoutException as exc:
                attempts.append(f"timeout ({type(exc).__name__})")
                logger.warning("judge request timed out (attempt %d)", attempt + 1)
                continue
            except httpx.TransportError as exc:
                attempts.append(f"transport error ({exc})")
                logger.warning("judge transport error on attempt %d: %s", attempt + 1, exc)
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                attempts.append(f"HTTP {resp.status_code}")
                continue
            if not resp.is_success:
                raise JudgeProtocolError(resp.status_code, resp.text[:200])
            attempts.append("ok")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise JudgeProtocolError(resp.status_code, resp.text[:200]) from None
            return JudgeReply(text if isinstance(text, str) else json.dumps(text), attempts)
        raise JudgeTransportError("judge request failed", attempts)

    def complete_with_info(self, req: JudgeRequest) -> JudgeReply:
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": req.user_prompt})
        return self.chat(messages, temperature=req.temperature, max_tokens=req.max_tokens,
                         model=req.model_name or None)

    def complete(self, req: JudgeRequest) -> str:
        return self.complete_with_info(req).text


# ---------------------------------------------------------------------------
# Stubs


class EchoJudge:
    def complete(self, req: JudgeRequest) -> str:
        return req.user_prompt


class FixedJudge:
    def __init__(self, reply: str):
        self.reply = reply

    def complete(self, req: JudgeRequest) -> str:
        return self.reply


class CallableJudge:
    def __init__(self, fn: Callable[[JudgeRequest], str]):
        self.fn = fn

    def complete(self, req: JudgeRequest) -> str:
        return self.fn(req)


class ScriptedJudge:
    """Plays back replies in order; exceptions in the script are raised.

    The last entry repeats once the script is exhausted.
    """

    def __init__(self, script: Iterable[str | BaseException]):
        self.script = list(script)
        if not self.script:
            raise ValueError("script must not be empty")
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: JudgeRequest) -> str:
        with self._lock:
            item = self.script[min(self.calls, len(self.script) - 1)]
            self.calls += 1
        if isinstance(item, BaseException):
            raise item
        return item


def _normalize_answer(text: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", text.lower()).split())


_ANSWERS_RE = re.compile(r"Answer A:\s*(.*?)\nAnswer B:\s*(.*)\Z", re.DOTALL)


def _equality_reply(req: JudgeRequest) -> str:
    m = _ANSWERS_RE.search(req.user_prompt)
    if not m:
        return json.dumps({"consistent": False, "reason": "answers not found"})
    same = _normalize_answer(m.group(1)) == _normalize_answer(m.group(2))
    return json.dumps({"consistent": same, "reason": "normalized equality" if same else "answers differ"})


def equality_judge() -> CallableJudge:
    """Consistency-checker stub: consistent iff the answers are equal after normalization."""
    return CallableJudge(_equality_reply)


_PRED_LINE_RE = re.compile(r"^Predicted action: (.*)$", re.MULTILINE)
_GT_LINE_RE = re.compile(r"^(\d+)\. (\[.*\])$", re.MULTILINE)


def _exact_match_reply(req: JudgeRequest) -> str:
    pred = json.loads(_PRED_LINE_RE.search(req.user_prompt).group(1))
    hits = [int(i) for i, body in _GT_LINE_RE.findall(req.user_prompt) if json.loads(body) == pred]
    return json.dumps(hits)


def exact_match_judge() -> CallableJudge:
    """Action-matcher stub: a ground-truth action matches iff it is identical."""
    return CallableJudge(_exact_match_reply)


# ---------------------------------------------------------------------------
# Judge roles


def _first_json_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def build_consistency_prompt(question: str, answer_a: str, answer_b: str) -> JudgeRequest:
    return JudgeRequest(
        system_prompt=load_prompt("consistency_checker.txt"),
        user_prompt=f"Question: {question}\nAnswer A: {answer_a}\nAnswer B: {answer_b}",
    )


def parse_consistency_reply(reply: str) -> tuple[bool, str]:
    obj = _first_json_object(reply)
    if obj is None or not isinstance(obj.get("consistent"), bool):
        raise JudgeFormatError(f"no consistency object in judge reply: {reply[:120]!r}")
    return obj["consistent"], str(obj.get("reason", ""))


def consistency_check(question: str, answer_a: str, answer_b: str, judge: Judge) -> tuple[bool, str]:
    reply = judge.complete(build_consistency_prompt(question, answer_a, answer_b))
    return parse_consistency_reply(reply)


_INDEX_LIST_RE = re.compile(r"\[\s*(-?\d+(?:\s*,\s*-?\d+)*)?\s*,?\s*\]")


def build_matcher_prompt(pred_action: AtomicAction, gt_actions: Sequence[AtomicAction],
                         template: str | None = None) -> JudgeRequest:
    template = template or load_prompt("action_matcher_v1.txt")
    gt_lines = "\n".join(
        f"{i}. {json.dumps(a.as_list(), ensure_ascii=False)}" for i, a in enumerate(gt_actions, start=1)
    )
    user = template.replace("{pred_action}", json.dumps(pred_action.as_list(), ensure_ascii=False))
    user = user.replace("{gt_actions}", gt_lines)
    return JudgeRequest(system_prompt="", user_prompt=user)


def parse_matcher_reply(reply: str, n_gt: int) -> tuple[set[int], list[str]]:
    m = _INDEX_LIST_RE.search(reply)
    if m is None:
        return set(), ["unparseable_reply"]
    values = [int(v) for v in m.group(1).split(",")] if m.group(1) else []
    kept = {v for v in values if 1 <= v <= n_gt}
    flags = ["index_out_of_range"] if len(kept) != len(set(values)) else []
    return kept, flags


def llm_action_matcher(pred_action: AtomicAction, gt_actions: Sequence[AtomicAction], judge: Judge,
                       template: str | None = None) -> tuple[set[int], list[str]]:
    if not gt_actions:
        raise ValueError("ground-truth action list is empty")
    reply = judge.complete(build_matcher_prompt(pred_action, gt_actions, template))
    hits, flags = parse_matcher_reply(reply, len(gt_actions))
    if flags:
        logger.warning("action matcher reply %r: %s", reply[:80], ", ".join(flags))
    return hits, flags


class LLMActionMatcher:
    """``ActionMatcher`` backed by a judge; reply problems collect in ``flags``."""

    def __init__(self, judge: Judge, template: str | None = None):
        self.judge = judge
        self.template = template or load_prompt("action_matcher_v1.txt")
        self.flags: list[str] = []
        self._lock = threading.Lock()

    def __call__(self, pred: AtomicAction, gt: Sequence[AtomicAction]) -> set[int]:
        if not gt:
            return set()
        hits, flags = llm_action_matcher(pred, gt, self.judge, self.template)
        if flags:
            with self._lock:
                self.flags.extend(flags)
        return hits
