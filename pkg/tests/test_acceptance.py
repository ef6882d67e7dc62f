"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runs fully offline; a socket guard turns any network attempt into a failure.
"""

import contextlib
import json
import random
import socket
import time

import httpx
import numpy as np
import pytest

from planbench.cli import main
from planbench.difficulty import (
    DEFAULT_K,
    DEFAULT_LAMBDAS,
    DEFAULT_TAU,
    ImageBuffer,
    ThresholdPredictor,
    mask_image,
    masked_count,
    masking_profile,
)
from planbench.harness import build_config, run
from planbench.judge import JudgeClient, JudgeConfig, JudgeFormatError, JudgeRequest, exact_match_judge
from planbench.match_metrics import MatchMatrix, hungarian_quantity, lcs_order, prf1
from planbench.plan_format import AtomicAction, PlanStep, StepTag, StructuredOutput, parse_strict, serialize
from planbench.plan_format import default_action_set
from planbench.reward_perception import BBox, counting_reward, detection_reward, iou, iou_matrix
from planbench.reward_planning import build_grm_prompt, extract_grm_score, format_reward
from planbench.sim import bundled_scene, check_predicate, execute_plan, load_tasks, run_task, success_rate

from conftest import INCORRECT_CONVERSION, WASHING_MACHINE
from oracles import brute_lcs, brute_max_iou_assignment, brute_max_matching_small


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def check(number: int, title: str, budget: float | None = None):
        start = time.perf_counter()
        ok = False
        try:
            yield
            elapsed = time.perf_counter() - start
            assert budget is None or elapsed < budget, f"took {elapsed:.2f}s, budget {budget}s"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({elapsed:.2f}s)")

    return check


# -- generators -------------------------------------------------------------------

_ALPHABET = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 '\"\\,.!?-()[]"


def _text(rng: random.Random, max_len: int = 24) -> str:
    while True:
        s = "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(1, max_len))).strip()
        if s:
            return s


def random_output(rng: random.Random) -> StructuredOutput:
    verbs = sorted(default_action_set().verbs)
    plans = tuple(PlanStep(i, rng.choice(list(StepTag)), _text(rng)) for i in range(1, rng.randint(0, 8) + 1))
    actions = tuple(AtomicAction(rng.choice(verbs), tuple(_text(rng, 12) for _ in range(rng.randint(1, 2))))
                    for _ in range(rng.randint(0, 8)))
    return StructuredOutput(_text(rng), plans, actions)


def random_cells(rng: np.random.Generator, max_dim: int) -> np.ndarray:
    m, n = rng.integers(0, max_dim + 1, 2)
    return rng.random((m, n)) < rng.uniform(0.1, 0.7)


def random_box(rng: random.Random) -> BBox:
    x1, y1 = rng.uniform(0, 20), rng.uniform(0, 20)
    return BBox(x1, y1, x1 + rng.uniform(0.5, 10), y1 + rng.uniform(0.5, 10))


# -- criteria ---------------------------------------------------------------------


def test_criterion_01_parser_golden_and_round_trip(criterion):
    with criterion(1, "washing-machine golden parse + 1,000 byte-exact round trips", budget=5.0):
        out = parse_strict(WASHING_MACHINE)
        assert out.response == "I will put the dirty clothes in the washing machine"
        assert len(out.plans) == 5 and len(out.actions) == 5
        rng = random.Random(2024)
        for _ in range(1000):
            text = serialize(random_output(rng))
            assert serialize(parse_strict(text)) == text


def test_criterion_02_hungarian_oracle(criterion):
    with criterion(2, "hungarian_quantity equals brute force on 500 matrices (m,n<=6)", budget=10.0):
        rng = np.random.default_rng(2)
        for _ in range(500):
            cells = random_cells(rng, 6)
            assert hungarian_quantity(MatchMatrix(cells)) == brute_max_matching_small(cells)


def test_criterion_03_lcs_oracle(criterion):
    with criterion(3, "lcs_order equals brute force and <= hungarian on 500 triples (len<=8)", budget=10.0):
        rng = np.random.default_rng(3)
        for _ in range(500):
            cells = random_cells(rng, 8)
            m, n = cells.shape
            pred, gt = list(range(m)), list(range(n))
            M = MatchMatrix(cells)
            order = lcs_order(pred, gt, M)
            assert order == brute_lcs(cells)
            assert order <= hungarian_quantity(M)


def test_criterion_04_prf1(criterion):
    with criterion(4, "P/R/F1 boundaries and harmonic bounds on 1,000 triples"):
        for m, n in [(0, 0), (0, 4), (4, 0), (3, 5), (5, 3), (4, 4)]:
            for score in {0, min(m, n)}:
                r = prf1(score, m, n)
                p = score / m if m else 0.0
                rc = score / n if n else 0.0
                f = 2 * p * rc / (p + rc) if p + rc else 0.0
                assert (r.precision, r.recall) == (p, rc)
                assert r.f1 == pytest.approx(f, abs=1e-15)
        assert prf1(3, 3, 5).precision == 1.0 and prf1(5, 7, 5).recall == 1.0
        rng = random.Random(4)
        for _ in range(1000):
            m, n = rng.randint(1, 40), rng.randint(1, 40)
            r = prf1(rng.randint(0, min(m, n)), m, n)
            assert 0.0 <= r.f1 <= 1.0
            if r.precision + r.recall:
                assert min(r.precision, r.recall) - 1e-12 <= r.f1 <= max(r.precision, r.recall) + 1e-12


def test_criterion_05_grm_plumbing(criterion):
    with criterion(5, "GRM prompt payloads, rubric line, score extraction"):
        prompt = build_grm_prompt("QUESTION-X", "REFERENCE-Y", default_action_set(), "COMPLETION-Z")
        for payload in ("QUESTION-X", "REFERENCE-Y", "COMPLETION-Z", ", ".join(default_action_set().sorted_verbs())):
            assert payload in prompt
        assert "1.00: Nearly identical to reference" in prompt
        assert extract_grm_score("<think>Brief reasoning</think><score>0.75</score>").value == 0.75
        clamped = extract_grm_score("<score>1.4</score>")
        assert clamped.value == 1.0 and clamped.clamped
        assert extract_grm_score("<score>-3</score>").value == 0.0
        with pytest.raises(JudgeFormatError):
            extract_grm_score("<think>no score</think>")


def test_criterion_06_format_reward(criterion):
    with criterion(6, "format reward gold 1.0, conversion example 7/9, 10,000 fuzzed strings"):
        assert format_reward(WASHING_MACHINE).total == 1.0
        assert format_reward(INCORRECT_CONVERSION).total == pytest.approx(7 / 9, abs=1e-9)
        rng = random.Random(6)
        pieces = ["<response>", "</response>", "<plans>", "</plans>", "<actions>", "</actions>",
                  "[", "]", "'", '"', ",", "\n", " ", "1.[Navigate] ", "Pick", "Fridge", "\\n", "<", ">"]
        for _ in range(10_000):
            raw = "".join(rng.choice(pieces) if rng.random() < 0.8 else chr(rng.randint(0, 0x2FFF))
                          for _ in range(rng.randint(0, 60)))
            assert 0.0 <= format_reward(raw).total <= 1.0


def test_criterion_07_perception(criterion):
    with criterion(7, "IoU properties, 1/7 case, detection vs brute force, counting"):
        rng = random.Random(7)
        for _ in range(1000):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == iou(b, a)
            assert iou(a, a) == 1.0
            assert 0.0 <= iou(a, b) <= 1.0
            far = BBox(a.x2 + 1, a.y2 + 1, a.x2 + 2, a.y2 + 2)
            assert iou(a, far) == 0.0
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-9)
        done = 0
        while done < 200:
            pred = [random_box(rng) for _ in range(rng.randint(0, 5))]
            gt = [random_box(rng) for _ in range(rng.randint(0, 5))]
            if not pred and not gt:
                continue
            w = iou_matrix(pred, gt)
            w[w < 0.5] = 0.0
            expected = brute_max_iou_assignment(w) / max(len(pred), len(gt))
            assert detection_reward(pred, gt) == pytest.approx(expected, abs=1e-12)
            done += 1
        assert counting_reward(3, 3) == 1.0 and counting_reward(2, 3) == 0.0
        assert counting_reward("There are 4 cups.", 4) == 1.0 and counting_reward(None, 0) == 0.0


def test_criterion_08_difficulty(criterion):
    with criterion(8, "threshold stubs recover lambda*, identity at 0, exact mask counts"):
        assert DEFAULT_LAMBDAS == tuple(i / 10 for i in range(10))
        assert (DEFAULT_K, DEFAULT_TAU) == (10, 0.1)
        px = np.random.default_rng(8).integers(1, 256, (12, 9, 3), dtype=np.uint8)
        img = ImageBuffer(px)
        for i in range(1, 10):
            c = i / 10
            prof = masking_profile(ThresholdPredictor(c, "cube"), img, "q", "cube", seed=i)
            assert prof.lambda_star == c
        assert mask_image(img, 0.0, seed=1).tobytes() == img.tobytes()
        for shape in [(7, 5, 3), (16, 16, 1), (33, 20, 3)]:
            base = ImageBuffer(np.full(shape, 200, dtype=np.uint8))
            n = shape[0] * shape[1]
            for lam in DEFAULT_LAMBDAS:
                masked = mask_image(base, lam, seed=3).pixels
                assert int(np.all(masked == 0, axis=-1).sum()) == masked_count(lam, n)


def test_criterion_09_simulator(criterion):
    with criterion(9, "12 gold plans succeed, apple sub-goals, perturbations, determinism", budget=30.0):
        tasks = load_tasks()
        assert len(tasks) == 12
        assert success_rate([run_task(t) for t in tasks]) == 1.0
        apple = next(t for t in tasks if t.id == "kitchen_wash_apple_fridge")
        assert len(apple.gold_actions) == 11
        world = bundled_scene(apple.scene)
        five = execute_plan(world, list(apple.gold_actions[:5])).final_world
        six = execute_plan(world, list(apple.gold_actions[:6])).final_world
        assert not five.obj("Apple_1").has("clean") and six.obj("Apple_1").has("clean")
        assert run_task(apple).steps[5].skill == "ToggleOff(Faucet_1)"
        assert check_predicate(run_task(apple).final_world, ["located_in", "Apple", "Fridge"])
        for t in tasks:
            trace = run_task(t, t.perturbation.apply(t.gold_actions))
            assert not trace.final_success
            failure = trace.first_failure
            assert (failure.step, failure.reason) == (t.perturbation.expected_step, t.perturbation.expected_reason)
            assert run_task(t).trace_hash() == run_task(t).trace_hash()


def test_criterion_10_end_to_end(criterion, tmp_path):
    with criterion(10, "eval-plan gt-vs-gt, simulate gold, fault-injected judge, offline", budget=120.0):
        tasks = load_tasks(verify=False)

        def plan_text(t):
            steps = tuple(PlanStep(i, StepTag.MANIPULATE, a.verb) for i, a in enumerate(t.gold_actions, start=1))
            return serialize(StructuredOutput("ok", steps, tuple(t.gold_actions)))

        rows = [{"id": t.id, "prediction": plan_text(t), "ground_truth": plan_text(t)} for t in tasks]
        path = tmp_path / "pairs.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        out = tmp_path / "eval"
        assert main(["eval-plan", "--input", str(path), "--out", str(out)]) == 0
        agg = json.loads((out / "report.json").read_text())["aggregates"]
        for metric in ("quantity", "order"):
            assert agg[metric]["micro"]["f1"] == 1.0 and agg[metric]["macro"]["f1"] == 1.0

        out = tmp_path / "sim"
        assert main(["simulate", "--out", str(out)]) == 0
        assert json.loads((out / "report.json").read_text())["aggregates"]["success_rate"] == 1.0

        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise httpx.ReadTimeout("injected", request=request)
            prompt = json.loads(request.content)["messages"][-1]["content"]
            reply = exact_match_judge().complete(JudgeRequest("", prompt))
            return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})

        client = JudgeClient(JudgeConfig(endpoint="http://judge.invalid/v1/chat/completions", retries=2),
                             transport=httpx.MockTransport(handler), sleep=lambda s: None)
        cfg = build_config("eval-plan", cli_values={"input": str(path), "matcher": "judge"})
        report = run(cfg, judge=client)
        assert report.failures == 0 and report.exit_code == 0
        assert report.aggregates["quantity"]["micro"]["f1"] == 1.0
        assert report.aggregates["order"]["micro"]["f1"] == 1.0
        assert calls["n"] > 2
