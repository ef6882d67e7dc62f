"""Batch orchestration behind the ``planbench`` command.

Each command reads line-delimited JSON records, scores them on a bounded
worker pool, and builds a ``Report`` whose aggregates are re-derived from the
per-record entries before anything is written.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .difficulty import (
    DEFAULT_LAMBDAS,
    BucketBounds,
    EndpointPredictor,
    load_image,
    masking_profile,
    stub_predictor,
)
from .judge import (
    CallableJudge,
    Judge,
    JudgeClient,
    JudgeConfig,
    JudgeError,
    JudgeRequest,
    LLMActionMatcher,
    equality_judge,
    exact_match_judge,
)
from .match_metrics import EvalConfig, MatcherError, RuleMatcher, evaluate_plan_pair
from .plan_format import ActionSet, AtomicAction, default_action_set, parse_structured_output
from .reward_perception import SpatialConfig, SpatialScoringError, SpatialTask, perception_reward, spatial_reward
from .reward_planning import combined_planning_reward, format_reward, grm_reward, instruction_correctness_reward
from .sim import SceneError, SimConfig, TaskSpec, load_tasks, run_task
from .sim.world import bundled_scene_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2

COMMANDS = ("parse", "eval-plan", "simulate", "reward", "difficulty")
REWARD_KINDS = ("format", "grm", "perception", "spatial", "instruction")
JUDGE_KINDS = frozenset({"grm", "instruction"})


class ConfigError(Exception):
    """Bad configuration or unreadable input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    pred: str | None = None
    gt: str | None = None
    tasks: str | None = None
    scenes: str | None = None
    predictions: str | None = None
    out: str | None = None
    seed: int = 0
    workers: int = 1
    action_set: str | None = None
    mode: str = "lenient"
    matcher: str = "rule"
    judge: Mapping[str, Any] | None = None
    judge_stub: str | None = None
    kinds: tuple[str, ...] = ("format",)
    w_rule: float = 0.5
    format_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    grm_retries: int = 2
    iou_threshold: float = 0.5
    spatial_beta: float = 0.5
    spatial_gamma: float = 3.0
    predictor: str = "stub:correct"
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    k: int = 10
    tau: float = 0.1
    fill: str = "zero"
    bucket_bounds: tuple[float, float] = (0.3, 0.7)
    continue_on_error: bool = False

    def __post_init__(self):
        for name in ("kinds", "format_weights", "lambdas", "bucket_bounds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode not in ("strict", "lenient"):
            raise ConfigError(f"mode must be strict or lenient, got {self.mode!r}")
        if self.matcher not in ("rule", "judge"):
            raise ConfigError(f"matcher must be rule or judge, got {self.matcher!r}")
        bad = set(self.kinds) - set(REWARD_KINDS)
        if bad:
            raise ConfigError(f"unknown reward kinds {sorted(bad)}; choose from {REWARD_KINDS}")
        if not 0.0 <= self.w_rule <= 1.0:
            raise ConfigError("w_rule must be in [0, 1]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if len(self.bucket_bounds) != 2:
            raise ConfigError("bucket_bounds takes [hard_below, easy_from]")
        try:
            BucketBounds(*self.bucket_bounds)
            if self.judge is not None:
                JudgeConfig.from_dict(dict(self.judge))
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def fingerprint(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k != "out"}
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_config(command: str, file_values: Mapping[str, Any] | None = None,
                 cli_values: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge built-in defaults, a config file and CLI flags (highest wins)."""
    known = {f.name for f in fields(RunConfig)} - {"command"}
    merged: dict[str, Any] = {}
    for source, values in (("config file", file_values or {}), ("command line", cli_values or {})):
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown {source} keys: {sorted(unknown)}")
        merged.update({k: v for k, v in values.items() if v is not None})
    try:
        return RunConfig(command=command, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


# ---------------------------------------------------------------------------
# Records


@dataclass
class InputRecord:
    line: int
    data: dict | None
    error: str | None = None

    @property
    def id(self) -> str:
        if self.data is not None and "id" in self.data:
            return str(self.data["id"])
        return f"line:{self.line}"


def read_jsonl(path: str | Path) -> list[InputRecord]:
    try:
        text = Path(path).read_text("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            out.append(InputRecord(lineno, None, f"line {lineno}: invalid JSON ({exc.msg})"))
            continue
        if not isinstance(data, dict):
            out.append(InputRecord(lineno, None, f"line {lineno}: record must be a JSON object"))
        elif "id" not in data:
            out.append(InputRecord(lineno, data, f"line {lineno}: record has no id"))
        else:
            out.append(InputRecord(lineno, data))
    ids = [r.id for r in out if r.error is None]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate record ids in {path}: {dupes}")
    return out


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _clean_float(x):
    if isinstance(x, float):
        if not math.isfinite(x):
            return None
        return round(x, 12) + 0.0
    if isinstance(x, dict):
        return {k: _clean_float(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean_float(v) for v in x]
    if isinstance(x, np.generic):
        return _clean_float(x.item())
    return x


# ---------------------------------------------------------------------------
# Reports


@dataclass
class Report:
    command: str
    records: list[dict]
    aggregates: dict
    config: RunConfig
    started: str = ""
    finished: str = ""

    def structured(self) -> dict:
        return _clean_float({
            "command": self.command,
            "metadata": {
                "config_hash": self.config.fingerprint(),
                "seed": self.config.seed,
                "version": __version__,
            },
            "aggregates": self.aggregates,
            "records": self.records,
        })

    def to_json(self) -> str:
        return json.dumps(self.structured(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def meta(self) -> dict:
        return {"started": self.started, "finished": self.finished,
                "config_hash": self.config.fingerprint(), "config": asdict(self.config)}

    def to_tsv(self) -> str:
        rows = [flatten(r) for r in self.structured()["records"]]
        columns: list[str] = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else row.get(c) for c in columns])
        return buf.getvalue()

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if r.get("error"))

    @property
    def exit_code(self) -> int:
        return EXIT_FAILURES if self.failures else EXIT_OK


def flatten(record: Mapping, prefix: str = "") -> dict:
    out = {}
    for key, value in record.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(flatten(value, name + "."))
        elif isinstance(value, list):
            if all(not isinstance(v, (Mapping, list)) for v in value):
                out[name] = json.dumps(value)
        else:
            out[name] = value
    return out


def _mean(values: Iterable[float]) -> float | None:
    values = list(values)
    return sum(values) / len(values) if values else None


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def aggregate_parse(records: Sequence[dict]) -> dict:
    ok = [r for r in records if not r.get("error")]
    return {"n": len(records), "n_strict_ok": sum(r["strict_ok"] for r in ok),
            "n_errors": len(records) - len(ok)}


def aggregate_eval(records: Sequence[dict]) -> dict:
    scored = [r for r in records if r.get("metrics")]
    agg: dict[str, Any] = {"n": len(records), "n_scored": len(scored)}
    for metric in ("quantity", "order"):
        ms = [r["metrics"][metric] for r in scored]
        macro = {k: _mean(m[k] for m in ms) for k in ("precision", "recall", "f1")}
        score = sum(m["score"] for m in ms)
        m_tot = sum(m["m"] for m in ms)
        n_tot = sum(m["n"] for m in ms)
        p = score / m_tot if m_tot else 0.0
        r_ = score / n_tot if n_tot else 0.0
        micro = {"precision": p, "recall": r_, "f1": _f1(p, r_)} if ms else {k: None for k in macro}
        agg[metric] = {"macro": macro, "micro": micro}
    return agg


def aggregate_simulate(records: Sequence[dict]) -> dict:
    n = len(records)
    successes = sum(bool(r.get("success")) for r in records)
    return {"n": n, "successes": successes, "success_rate": successes / n if n else None}


def aggregate_reward(records: Sequence[dict]) -> dict:
    kinds = sorted({k for r in records for k in r.get("rewards", {})})
    agg: dict[str, Any] = {"n": len(records)}
    for kind in kinds:
        vals = [r["rewards"][kind] for r in records if r.get("rewards", {}).get(kind) is not None]
        agg[kind] = {"mean": _mean(vals), "n": len(vals)}
    return agg


def aggregate_difficulty(records: Sequence[dict]) -> dict:
    ok = [r for r in records if not r.get("error")]
    buckets = {b: sum(r["bucket"] == b for r in ok) for b in ("easy", "moderate", "hard")}
    stars = [r["lambda_star"] for r in ok if r["lambda_star"] is not None]
    return {"n": len(records), "n_profiled": len(ok), "buckets": buckets,
            "mean_lambda_star": _mean(stars), "n_never_fail": len(ok) - len(stars)}


AGGREGATORS = {
    "parse": aggregate_parse,
    "eval-plan": aggregate_eval,
    "simulate": aggregate_simulate,
    "reward": aggregate_reward,
    "difficulty": aggregate_difficulty,
}


def verify_report(report: Report) -> None:
    expected = _clean_float(AGGREGATORS[report.command](report.records))
    if expected != _clean_float(report.aggregates):
        raise AssertionError(f"report aggregates disagree with records: {expected} != {report.aggregates}")


def emit(report: Report, out: str | None) -> Path | None:
    """Write report.json, report.tsv and report.meta.json under ``out``, or
    print the structured report when ``out`` is unset."""
    verify_report(report)
    if not out:
        print(report.to_json(), end="")
        return None
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / "report.json").write_text(report.to_json(), "utf-8")
        (path / "report.tsv").write_text(report.to_tsv(), "utf-8")
        (path / "report.meta.json").write_text(
            json.dumps(report.meta(), indent=2, sort_keys=True, default=list) + "\n", "utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write report to {out}: {exc}") from None
    return path


# ---------------------------------------------------------------------------
# Judges


def _grm_reply(score: str) -> str:
    return f"<think>stub judge</think><score>{score}</score>"


def stub_judge(spec: str) -> Judge:
    """Offline judges: ``equality``, ``exact-match``, ``fixed:<reply>``,
    ``grm:<score>`` or ``auto[:<score>]``, which routes by prompt type."""
    name, _, arg = spec.partition(":")
    if name in ("grm", "auto") and arg:
        try:
            float(arg)
        except ValueError:
            raise ConfigError(f"judge stub score must be a number, got {arg!r}") from None
    if name == "equality":
        return equality_judge()
    if name == "exact-match":
        return exact_match_judge()
    if name == "fixed":
        return CallableJudge(lambda req: arg)
    if name == "grm":
        return CallableJudge(lambda req: _grm_reply(arg))
    if name == "auto":
        score = arg or "1.0"
        matcher, checker = exact_match_judge(), equality_judge()

        def route(req: JudgeRequest) -> str:
            if "Predicted action:" in req.user_prompt:
                return matcher.complete(req)
            if req.system_prompt and "Answer A:" in req.user_prompt:
                return checker.complete(req)
            return _grm_reply(score)

        return CallableJudge(route)
    raise ConfigError(f"unknown judge stub {spec!r}")


def make_judge(cfg: RunConfig, required: bool) -> Judge | None:
    if cfg.judge_stub:
        return stub_judge(cfg.judge_stub)
    if cfg.judge:
        return JudgeClient(JudgeConfig.from_dict(dict(cfg.judge)))
    if required:
        raise ConfigError("this run needs a judge: set 'judge' in the config or pass --judge-stub")
    return None


def _action_set(cfg: RunConfig) -> ActionSet:
    if not cfg.action_set:
        return default_action_set()
    try:
        return ActionSet.from_file(cfg.action_set)
    except OSError as exc:
        raise ConfigError(f"cannot read action set {cfg.action_set}: {exc}") from None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Commands


def cmd_parse(cfg: RunConfig) -> Report:
    if not cfg.input:
        raise ConfigError("parse needs --input")
    started = _now()
    inputs = read_jsonl(cfg.input)

    def one(rec: InputRecord) -> dict:
        out = {"id": rec.id, "line": rec.line}
        if rec.error:
            return {**out, "error": rec.error}
        text = rec.data.get("text")
        if not isinstance(text, str):
            return {**out, "error": f"line {rec.line}: missing string field 'text'"}
        parsed, report = parse_structured_output(text, "strict")
        ok = parsed is not None and report.clean
        return {**out, "strict_ok": ok, "report": report.to_dict(),
                "error": None if ok else f"line {rec.line}: " + ", ".join(
                    sorted({d.code for d in report.structural_errors}) or ["unparseable"])}

    records = _pool_map(one, inputs, cfg.workers)
    return Report("parse", records, aggregate_parse(records), cfg, started, _now())


def _eval_inputs(cfg: RunConfig) -> list[InputRecord]:
    if cfg.input:
        return read_jsonl(cfg.input)
    if not (cfg.pred and cfg.gt):
        raise ConfigError("eval-plan needs --input, or both --pred and --gt")
    preds = {r.id: r for r in read_jsonl(cfg.pred)}
    gts = {r.id: r for r in read_jsonl(cfg.gt)}
    missing_pred = sorted(set(gts) - set(preds))
    missing_gt = sorted(set(preds) - set(gts))
    if missing_pred or missing_gt:
        raise ConfigError(f"record ids differ: missing predictions {missing_pred}, missing ground truth {missing_gt}")
    merged = []
    for rid, g in gts.items():
        p = preds[rid]
        err = g.error or p.error
        data = None
        if not err:
            data = {"id": rid, "prediction": p.data.get("text", p.data.get("prediction")),
                    "ground_truth": g.data.get("text", g.data.get("ground_truth"))}
        merged.append(InputRecord(g.line, data, err))
    return merged


def cmd_eval_plan(cfg: RunConfig, judge: Judge | None = None) -> Report:
    started = _now()
    inputs = _eval_inputs(cfg)
    action_set = _action_set(cfg)
    ecfg = EvalConfig(mode=cfg.mode, action_set=action_set)
    if cfg.matcher == "judge":
        judge = judge or make_judge(cfg, required=True)

    def one(rec: InputRecord) -> dict:
        out = {"id": rec.id, "line": rec.line}
        if rec.error:
            return {**out, "error": rec.error, "metrics": None}
        pred, gt = rec.data.get("prediction"), rec.data.get("ground_truth")
        if not isinstance(pred, str) or not isinstance(gt, str):
            return {**out, "error": "missing string fields 'prediction'/'ground_truth'", "metrics": None}
        matcher = LLMActionMatcher(judge) if cfg.matcher == "judge" else RuleMatcher(action_set)
        try:
            metrics = evaluate_plan_pair(pred, gt, matcher, ecfg)
        except MatcherError as exc:
            return {**out, "error": f"judge_failure: {exc}", "metrics": None}
        except ValueError as exc:
            return {**out, "error": str(exc), "metrics": None}
        flags = list(metrics.flags) + list(getattr(matcher, "flags", []))
        return {**out, "error": None, "metrics": metrics.to_dict(), "flags": flags}

    records = _pool_map(one, inputs, cfg.workers)
    return Report("eval-plan", records, aggregate_eval(records), cfg, started, _now())


def _load_task_list(cfg: RunConfig) -> list[TaskSpec]:
    if not cfg.tasks:
        return load_tasks(verify=False)
    try:
        data = json.loads(Path(cfg.tasks).read_text("utf-8"))
        return load_tasks(data, verify=False)
    except OSError as exc:
        raise ConfigError(f"cannot read tasks {cfg.tasks}: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad task file {cfg.tasks}: {exc}") from None


def _scene_for(cfg: RunConfig, name: str) -> dict:
    if cfg.scenes:
        path = Path(cfg.scenes) / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text("utf-8"))
    return bundled_scene_spec(name)


def cmd_simulate(cfg: RunConfig) -> Report:
    started = _now()
    tasks = _load_task_list(cfg)
    predictions: dict[str, InputRecord] | None = None
    if cfg.predictions:
        predictions = {r.id: r for r in read_jsonl(cfg.predictions)}
    sim_cfg = SimConfig(continue_on_error=cfg.continue_on_error)

    def one(task: TaskSpec) -> dict:
        out = {"id": task.id, "scene": task.scene}
        flags = []
        actions = None
        if predictions is not None:
            rec = predictions.get(task.id)
            if rec is None:
                flags.append("missing_prediction")
                actions = []
            elif rec.error:
                return {**out, "success": False, "error": rec.error}
            else:
                actions = rec.data.get("prediction", [])
                if isinstance(actions, list):
                    try:
                        actions = [AtomicAction(a[0], tuple(a[1:])) for a in actions]
                    except (ValueError, IndexError, TypeError) as exc:
                        return {**out, "success": False, "error": f"bad action list: {exc}"}
        try:
            scene = _scene_for(cfg, task.scene)
            trace = run_task(task, actions, sim_cfg, scenes={task.scene: scene})
        except (SceneError, KeyError, OSError, json.JSONDecodeError) as exc:
            return {**out, "success": False, "error": f"scene load failed: {exc}"}
        failure = trace.first_failure
        return {
            **out,
            "error": None,
            "success": trace.final_success,
            "steps_executed": trace.steps_executed,
            "goal_results": trace.goal_results,
            "first_failure": None if failure is None else
            {"step": failure.step, "stage": failure.stage, "reason": failure.reason},
            "trace_hash": trace.trace_hash(),
            "flags": flags + trace.warnings,
            "trace": trace.render(),
        }

    records = _pool_map(one, tasks, cfg.workers)
    return Report("simulate", records, aggregate_simulate(records), cfg, started, _now())


def _reward_one(rec: InputRecord, cfg: RunConfig, judge: Judge | None, action_set: ActionSet) -> dict:
    out = {"id": rec.id, "line": rec.line}
    if rec.error:
        return {**out, "error": rec.error, "rewards": {}}
    d = rec.data
    rewards: dict[str, float | None] = {}
    flags: list[str] = []

    def need(*names):
        missing = [n for n in names if d.get(n) is None]
        for n in missing:
            flags.append(f"missing_field:{n}")
        return not missing

    for kind in cfg.kinds:
        rewards[kind] = None
        try:
            if kind == "format" and need("prediction"):
                rewards[kind] = format_reward(d["prediction"], action_set, cfg.format_weights).total
            elif kind == "grm" and need("question", "reference", "prediction"):
                res = grm_reward(d["question"], d["reference"], d["prediction"], judge, action_set,
                                 cfg.grm_retries)
                rewards[kind] = res.value
                flags.extend(f"grm:{f}" for f in res.flags)
            elif kind == "perception" and need("prediction", "ground_truth"):
                task, value = perception_reward(d["prediction"], d["ground_truth"], cfg.iou_threshold)
                rewards[kind] = value
                flags.append(f"perception_task:{task}")
            elif kind == "spatial" and need("prediction", "ground_truth", "spatial_kind"):
                task = SpatialTask(d["spatial_kind"], d.get("question", ""), d["ground_truth"], d.get("options"))
                rewards[kind] = spatial_reward(task, d["prediction"],
                                               SpatialConfig(cfg.spatial_beta, cfg.spatial_gamma))
            elif kind == "instruction" and need("question", "prediction", "ground_truth"):
                rewards[kind] = instruction_correctness_reward(d["question"], d["prediction"], d["ground_truth"], judge)
        except SpatialScoringError as exc:
            flags.append(f"spatial_scoring_failure: {exc}")
        except JudgeError as exc:
            flags.append(f"{kind}:judge_failure: {exc}")
        except (ValueError, TypeError) as exc:
            flags.append(f"{kind}:bad_input: {exc}")
    if rewards.get("format") is not None and rewards.get("grm") is not None:
        rewards["planning"] = combined_planning_reward(rewards["format"], rewards["grm"], cfg.w_rule)
    failed = [k for k in cfg.kinds if rewards[k] is None]
    return {**out, "rewards": rewards, "flags": flags,
            "error": f"no reward for {failed}" if failed else None}


def cmd_reward(cfg: RunConfig, judge: Judge | None = None) -> Report:
    if not cfg.input:
        raise ConfigError("reward needs --input")
    judge = judge or make_judge(cfg, required=bool(JUDGE_KINDS & set(cfg.kinds)))
    started = _now()
    inputs = read_jsonl(cfg.input)
    action_set = _action_set(cfg)
    records = _pool_map(lambda r: _reward_one(r, cfg, judge, action_set), inputs, cfg.workers)
    return Report("reward", records, aggregate_reward(records), cfg, started, _now())


def _record_seed(seed: int, rid: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(rid.encode("utf-8"))]).generate_state(1)[0])


def make_predictor(cfg: RunConfig, answer: str):
    kind, _, rest = cfg.predictor.partition(":")
    if kind == "stub":
        try:
            return stub_predictor(rest or "correct", answer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if kind == "endpoint":
        if not cfg.judge:
            raise ConfigError("endpoint predictor needs 'judge' endpoint settings in the config")
        return EndpointPredictor(JudgeClient(JudgeConfig.from_dict(dict(cfg.judge))))
    raise ConfigError(f"predictor must be stub:NAME or endpoint, got {cfg.predictor!r}")


def cmd_difficulty(cfg: RunConfig) -> Report:
    if not cfg.input:
        raise ConfigError("difficulty needs --input")
    make_predictor(cfg, "")  # validate before any work
    started = _now()
    inputs = read_jsonl(cfg.input)
    base = Path(cfg.input).parent
    bounds = BucketBounds(*cfg.bucket_bounds)
    endpoint = None
    if cfg.predictor.startswith("endpoint"):
        endpoint = make_predictor(cfg, "")

    def one(rec: InputRecord) -> dict:
        out = {"id": rec.id, "line": rec.line}
        if rec.error:
            return {**out, "error": rec.error}
        d = rec.data
        missing = [k for k in ("image", "question", "ground_truth") if d.get(k) is None]
        if missing:
            return {**out, "error": f"missing fields {missing}"}
        try:
            img = load_image(base / d["image"])
        except (OSError, ValueError) as exc:
            return {**out, "error": f"unreadable image {d['image']}: {exc}"}
        predictor = endpoint or make_predictor(cfg, str(d["ground_truth"]))
        try:
            profile = masking_profile(predictor, img, d["question"], str(d["ground_truth"]),
                                      lambdas=cfg.lambdas, k=cfg.k, tau=cfg.tau,
                                      seed=_record_seed(cfg.seed, rec.id), fill=cfg.fill)
        except Exception as exc:  # predictor failures are per-record
            return {**out, "error": f"prediction failed: {exc}"}
        return {**out, **profile.to_record(rec.id, bounds), "error": None}

    records = _pool_map(one, inputs, cfg.workers)
    return Report("difficulty", records, aggregate_difficulty(records), cfg, started, _now())


def run(cfg: RunConfig, judge: Judge | None = None) -> Report:
    if cfg.command == "parse":
        return cmd_parse(cfg)
    if cfg.command == "eval-plan":
        return cmd_eval_plan(cfg, judge)
    if cfg.command == "simulate":
        return cmd_simulate(cfg)
    if cfg.command == "reward":
        return cmd_reward(cfg, judge)
    return cmd_difficulty(cfg)
