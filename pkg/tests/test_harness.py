import json
import random

import httpx
import numpy as np
import pytest

from planbench.cli import main
from planbench.harness import (
    ConfigError,
    RunConfig,
    build_config,
    emit,
    run,
    stub_judge,
    verify_report,
)
from planbench.judge import JudgeClient, JudgeConfig
from planbench.match_metrics import RuleMatcher, build_match_matrix, filter_low_level
from planbench.plan_format import PlanStep, StepTag, StructuredOutput, parse_strict, serialize
from planbench.sim import load_tasks
from planbench.difficulty import save_image, ImageBuffer

from oracles import brute_lcs

TASKS = load_tasks(verify=False)


def structured(actions, response="ok") -> str:
    steps = [PlanStep(i, StepTag.NAVIGATE if a.verb == "Navigate" else StepTag.MANIPULATE, f"{a.verb} {' '.join(a.args)}")
             for i, a in enumerate(actions, start=1)]
    return serialize(StructuredOutput(response, tuple(steps), tuple(actions)))


def write_jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return str(path)


def report_of(out_dir):
    return json.loads((out_dir / "report.json").read_text())


# ---------------------------------------------------------------------------
# parse


def test_parse_clean_corpus(tmp_path, washing_machine):
    rows = [{"id": f"r{i}", "text": t} for i, t in
            enumerate([washing_machine, structured(TASKS[0].gold_actions), structured(TASKS[1].gold_actions)])]
    out = tmp_path / "out"
    assert main(["parse", "--input", write_jsonl(tmp_path / "in.jsonl", rows), "--out", str(out)]) == 0
    rep = report_of(out)
    assert rep["aggregates"] == {"n": 3, "n_errors": 0, "n_strict_ok": 3}
    assert all(r["report"]["structural_errors"] == [] for r in rep["records"])


def test_parse_defect_reported_at_line(tmp_path, washing_machine):
    rows = [{"id": "a", "text": washing_machine},
            {"id": "b", "text": washing_machine.replace("</plans>", "")},
            "{not json"]
    out = tmp_path / "out"
    assert main(["parse", "--input", write_jsonl(tmp_path / "in.jsonl", rows), "--out", str(out)]) == 1
    rec = {r["id"]: r for r in report_of(out)["records"]}
    assert rec["b"]["error"].startswith("line 2") and "UNCLOSED_TAG" in rec["b"]["error"]
    assert rec["line:3"]["error"].startswith("line 3: invalid JSON")


def test_parse_empty_file(tmp_path):
    out = tmp_path / "out"
    assert main(["parse", "--input", write_jsonl(tmp_path / "in.jsonl", []), "--out", str(out)]) == 0
    assert report_of(out)["records"] == []


def test_missing_input_is_config_error(tmp_path, capsys):
    assert main(["parse", "--input", str(tmp_path / "nope.jsonl")]) == 2
    assert "cannot read" in capsys.readouterr().err
    assert main(["parse"]) == 2


# ---------------------------------------------------------------------------
# eval-plan


def gold_pairs(transform=lambda acts: acts):
    return [{"id": t.id, "ground_truth": structured(t.gold_actions),
             "prediction": structured(transform(list(t.gold_actions)))} for t in TASKS]


def test_eval_gt_vs_gt(tmp_path):
    out = tmp_path / "out"
    assert main(["eval-plan", "--input", write_jsonl(tmp_path / "in.jsonl", gold_pairs()), "--out", str(out)]) == 0
    agg = report_of(out)["aggregates"]
    for metric in ("quantity", "order"):
        assert agg[metric]["macro"]["f1"] == 1.0
        assert agg[metric]["micro"]["f1"] == 1.0


def test_eval_empty_predictions(tmp_path):
    out = tmp_path / "out"
    main(["eval-plan", "--input", write_jsonl(tmp_path / "in.jsonl", gold_pairs(lambda a: [])), "--out", str(out)])
    rep = report_of(out)
    for metric in ("quantity", "order"):
        assert rep["aggregates"][metric]["macro"] == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert all("empty_prediction" in r["flags"] for r in rep["records"])


def test_eval_shuffled_matches_oracle(tmp_path):
    rng = random.Random(5)

    def shuffle(acts):
        rng.shuffle(acts)
        return acts

    pairs = gold_pairs(shuffle)
    out = tmp_path / "out"
    main(["eval-plan", "--input", write_jsonl(tmp_path / "in.jsonl", pairs), "--out", str(out)])
    records = {r["id"]: r for r in report_of(out)["records"]}
    some_below = False
    for p in pairs:
        m = records[p["id"]]["metrics"]
        assert m["quantity"]["f1"] == 1.0
        pred = filter_low_level(parse_strict(p["prediction"]).actions)
        gt = filter_low_level(parse_strict(p["ground_truth"]).actions)
        expected = brute_lcs(build_match_matrix(pred, gt, RuleMatcher()).cells)
        assert m["order"]["score"] == expected
        some_below |= m["order"]["f1"] < 1.0
    assert some_below


def test_eval_pred_gt_files_and_id_mismatch(tmp_path, capsys):
    pairs = gold_pairs()
    pred = write_jsonl(tmp_path / "pred.jsonl", [{"id": p["id"], "text": p["prediction"]} for p in pairs])
    gt = write_jsonl(tmp_path / "gt.jsonl", [{"id": p["id"], "text": p["ground_truth"]} for p in pairs])
    assert main(["eval-plan", "--pred", pred, "--gt", gt, "--out", str(tmp_path / "o")]) == 0
    short = write_jsonl(tmp_path / "short.jsonl", [{"id": p["id"], "text": p["prediction"]} for p in pairs[:-1]])
    assert main(["eval-plan", "--pred", short, "--gt", gt]) == 2
    assert pairs[-1]["id"] in capsys.readouterr().err


def test_eval_judge_matcher_needs_judge(tmp_path):
    path = write_jsonl(tmp_path / "in.jsonl", gold_pairs())
    assert main(["eval-plan", "--input", path, "--matcher", "judge"]) == 2
    out = tmp_path / "out"
    assert main(["eval-plan", "--input", path, "--matcher", "judge", "--judge-stub", "exact-match",
                 "--out", str(out)]) == 0
    assert report_of(out)["aggregates"]["order"]["micro"]["f1"] == 1.0


def flaky_client(failures: int):
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] <= failures:
            raise httpx.ReadTimeout("slow", request=request)
        prompt = json.loads(request.content)["messages"][-1]["content"]
        from planbench.judge import JudgeRequest, exact_match_judge

        reply = exact_match_judge().complete(JudgeRequest("", prompt))
        return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})

    cfg = JudgeConfig(endpoint="http://judge.test/v1/chat/completions", retries=2, max_concurrency=2)
    return JudgeClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None), calls


def test_eval_with_fault_injected_judge(tmp_path):
    client, calls = flaky_client(2)
    pairs = gold_pairs()[:3]
    cfg = build_config("eval-plan", cli_values={"input": write_jsonl(tmp_path / "in.jsonl", pairs),
                                                "matcher": "judge", "workers": 2})
    report = run(cfg, judge=client)
    assert report.failures == 0
    assert report.aggregates["quantity"]["micro"]["f1"] == 1.0
    assert report.aggregates["order"]["micro"]["f1"] == 1.0
    assert calls["n"] > 2


def test_eval_judge_failure_is_per_record(tmp_path):
    cfg = JudgeConfig(endpoint="http://judge.test/v1/chat/completions", retries=1)

    def handler(request):
        raise httpx.ConnectError("down", request=request)

    client = JudgeClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None)
    run_cfg = build_config("eval-plan", cli_values={"input": write_jsonl(tmp_path / "in.jsonl", gold_pairs()[:2]),
                                                    "matcher": "judge"})
    report = run(run_cfg, judge=client)
    assert report.failures == 2 and report.exit_code == 1
    assert all(r["error"].startswith("judge_failure") for r in report.records)


# ---------------------------------------------------------------------------
# simulate


def test_simulate_gold(tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", "--out", str(out)]) == 0
    assert report_of(out)["aggregates"] == {"n": 12, "successes": 12, "success_rate": 1.0}


def test_simulate_empty_plans(tmp_path):
    preds = write_jsonl(tmp_path / "p.jsonl", [{"id": t.id, "prediction": []} for t in TASKS])
    out = tmp_path / "out"
    main(["simulate", "--predictions", preds, "--out", str(out)])
    assert report_of(out)["aggregates"]["success_rate"] == 0.0


def test_simulate_three_perturbed(tmp_path):
    rows = []
    for i, t in enumerate(TASKS):
        acts = t.perturbation.apply(t.gold_actions) if i in (0, 4, 9) else t.gold_actions
        rows.append({"id": t.id, "prediction": [[a.verb, *a.args] for a in acts]})
    out = tmp_path / "out"
    assert main(["simulate", "--predictions", write_jsonl(tmp_path / "p.jsonl", rows), "--out", str(out)]) == 0
    rep = report_of(out)
    assert rep["aggregates"]["success_rate"] == 0.75
    failed = [r for r in rep["records"] if not r["success"]]
    assert [(r["id"], r["first_failure"]["reason"]) for r in failed] == [
        (TASKS[i].id, TASKS[i].perturbation.expected_reason) for i in (0, 4, 9)]


def test_simulate_raw_string_prediction(tmp_path, washing_machine):
    tid = "laundry_clothes_to_washer"
    preds = write_jsonl(tmp_path / "p.jsonl", [{"id": tid, "prediction": washing_machine}])
    out = tmp_path / "out"
    main(["simulate", "--predictions", preds, "--out", str(out)])
    rec = {r["id"]: r for r in report_of(out)["records"]}
    assert rec[tid]["success"] is True
    assert "missing_prediction" in rec[TASKS[0].id]["flags"]


def test_simulate_scene_failure_only_hits_that_task(tmp_path):
    tasks = [
        {"id": "ok", "instruction": "i", "scene": "kitchen", "goal": [["has_state", "Fridge", "open"]],
         "gold_actions": [["Navigate", "Fridge"], ["Open", "Fridge"]]},
        {"id": "bad", "instruction": "i", "scene": "broken", "goal": [], "gold_actions": [["Navigate", "X"]]},
    ]
    scenes = tmp_path / "scenes"
    scenes.mkdir()
    (scenes / "broken.json").write_text(json.dumps({"anchors": ["a"], "objects": [{"type": "X", "location": "Tabel"}]}))
    (tmp_path / "tasks.json").write_text(json.dumps(tasks))
    out = tmp_path / "out"
    code = main(["simulate", "--tasks", str(tmp_path / "tasks.json"), "--scenes", str(scenes), "--out", str(out)])
    assert code == 1
    rec = {r["id"]: r for r in report_of(out)["records"]}
    assert rec["ok"]["success"] is True
    assert "Tabel" in rec["bad"]["error"]


# ---------------------------------------------------------------------------
# reward


def test_reward_kinds(tmp_path, washing_machine):
    gt_boxes = [[0, 0, 2, 2], [5, 5, 8, 8]]
    rows = [
        {"id": "plan", "question": "Put the clothes in the washer.", "reference": washing_machine,
         "prediction": washing_machine},
        {"id": "det", "prediction": "[0, 0, 2, 2] [5, 5, 8, 8] [20, 20, 30, 30]", "ground_truth": gt_boxes},
        {"id": "count", "prediction": "I count 7 chairs", "ground_truth": 7},
        {"id": "spatial", "spatial_kind": "descriptive", "ground_truth": "the cup is left of the plate",
         "prediction": "the plate is right of the cup"},
    ]
    path = write_jsonl(tmp_path / "in.jsonl", rows)
    out = tmp_path / "out"
    code = main(["reward", "--input", path, "--kinds", "format,grm", "--judge-stub",
                 "fixed:<think>Brief reasoning</think><score>0.75</score>", "--out", str(out)])
    rec = {r["id"]: r for r in report_of(out)["records"]}
    assert rec["plan"]["rewards"] == {"format": 1.0, "grm": 0.75, "planning": pytest.approx(0.875)}
    assert code == 1  # the non-planning rows lack planning fields
    assert "missing_field:question" in rec["det"]["flags"]

    out2 = tmp_path / "out2"
    main(["reward", "--input", path, "--kinds", "perception,spatial", "--out", str(out2)])
    rec = {r["id"]: r for r in report_of(out2)["records"]}
    assert rec["det"]["rewards"]["perception"] == pytest.approx(2 / 3)
    assert rec["count"]["rewards"]["perception"] == 1.0
    assert rec["spatial"]["rewards"]["spatial"] == 1.0


def test_reward_instruction_with_equality_stub(tmp_path):
    rows = [{"id": "a", "question": "What colour?", "prediction": "Red.", "ground_truth": "red"},
            {"id": "b", "question": "What colour?", "prediction": "blue", "ground_truth": "red"}]
    out = tmp_path / "out"
    assert main(["reward", "--input", write_jsonl(tmp_path / "in.jsonl", rows), "--kinds", "instruction",
                 "--judge-stub", "auto", "--out", str(out)]) == 0
    rec = {r["id"]: r["rewards"]["instruction"] for r in report_of(out)["records"]}
    assert rec == {"a": 1.0, "b": 0.0}


def test_reward_requires_judge(tmp_path, capsys):
    path = write_jsonl(tmp_path / "in.jsonl", [{"id": "a"}])
    assert main(["reward", "--input", path, "--kinds", "grm"]) == 2
    assert "judge" in capsys.readouterr().err
    assert main(["reward", "--input", path, "--kinds", "format,telepathy"]) == 2


def test_reward_grm_judge_failure_flagged(tmp_path, washing_machine):
    rows = [{"id": "a", "question": "q", "reference": washing_machine, "prediction": washing_machine}]
    out = tmp_path / "out"
    main(["reward", "--input", write_jsonl(tmp_path / "in.jsonl", rows), "--kinds", "grm",
          "--judge-stub", "fixed:no score here", "--out", str(out)])
    rec = report_of(out)["records"][0]
    assert rec["rewards"]["grm"] == 0.0
    assert "grm:judge_failure" in rec["flags"]


# ---------------------------------------------------------------------------
# difficulty


@pytest.fixture
def image_corpus(tmp_path):
    rows = []
    for i, shape in enumerate([(8, 8, 3), (10, 6, 1), (5, 12, 3)]):
        px = np.random.default_rng(i).integers(1, 256, shape, dtype=np.uint8)
        save_image(ImageBuffer(px), tmp_path / f"img{i}.png")
        rows.append({"id": f"s{i}", "image": f"img{i}.png", "question": "what?", "ground_truth": "cube"})
    return tmp_path, rows


def test_difficulty_threshold_stub(image_corpus):
    base, rows = image_corpus
    out = base / "out"
    assert main(["difficulty", "--input", write_jsonl(base / "in.jsonl", rows), "--predictor",
                 "stub:threshold:0.5", "--out", str(out)]) == 0
    rep = report_of(out)
    assert all(r["lambda_star"] == 0.5 and r["bucket"] == "moderate" for r in rep["records"])
    assert rep["aggregates"]["buckets"] == {"easy": 0, "moderate": 3, "hard": 0}


def test_difficulty_always_correct(image_corpus):
    base, rows = image_corpus
    out = base / "out"
    main(["difficulty", "--input", write_jsonl(base / "in.jsonl", rows), "--predictor", "stub:correct",
          "--out", str(out)])
    assert all(r["lambda_star"] is None and r["bucket"] == "easy" for r in report_of(out)["records"])


def test_difficulty_unreadable_image(image_corpus):
    base, rows = image_corpus
    (base / "junk.png").write_bytes(b"not an image")
    rows = rows + [{"id": "junk", "image": "junk.png", "question": "q", "ground_truth": "x"},
                   {"id": "gone", "image": "missing.png", "question": "q", "ground_truth": "x"}]
    out = base / "out"
    assert main(["difficulty", "--input", write_jsonl(base / "in.jsonl", rows), "--out", str(out)]) == 1
    rec = {r["id"]: r for r in report_of(out)["records"]}
    assert rec["junk"]["error"].startswith("unreadable image")
    assert rec["gone"]["error"].startswith("unreadable image")
    assert rec["s0"]["error"] is None


def test_difficulty_k10_has_lower_variance_than_k1(image_corpus):
    base, rows = image_corpus
    path = write_jsonl(base / "in.jsonl", rows[:1])
    runs = {1: [], 10: []}
    for k in runs:
        for seed in range(25):
            cfg = build_config("difficulty", cli_values={"input": path, "predictor": "stub:stochastic",
                                                         "k": k, "seed": seed})
            runs[k].append(run(cfg).records[0]["accuracies"])
    var1 = np.var(np.array(runs[1]), axis=0).sum()
    var10 = np.var(np.array(runs[10]), axis=0).sum()
    assert var10 < var1 / 3


def test_difficulty_bad_predictor(image_corpus):
    base, rows = image_corpus
    path = write_jsonl(base / "in.jsonl", rows)
    assert main(["difficulty", "--input", path, "--predictor", "stub:oracle"]) == 2
    assert main(["difficulty", "--input", path, "--predictor", "endpoint"]) == 2


# ---------------------------------------------------------------------------
# config, determinism, report integrity


def test_config_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 7, "k": 3, "tau": 0.2}))
    from planbench.harness import read_config_file

    cfg = build_config("difficulty", read_config_file(str(cfg_path)), {"k": 5})
    assert (cfg.seed, cfg.k, cfg.tau, cfg.lambdas) == (7, 5, 0.2, tuple(i / 10 for i in range(10)))
    with pytest.raises(ConfigError, match="unknown config file keys"):
        build_config("difficulty", {"kay": 3})
    with pytest.raises(ConfigError):
        build_config("difficulty", {"judge": {"endpoint": "x", "colour": "red"}})
    cfg_path.write_text("{broken")
    assert main(["simulate", "--config", str(cfg_path)]) == 2


def test_reports_are_byte_identical(tmp_path, image_corpus):
    base, rows = image_corpus
    path = write_jsonl(base / "in.jsonl", rows)
    outs = []
    for i, workers in enumerate((1, 3)):
        out = tmp_path / f"run{i}"
        main(["difficulty", "--input", path, "--predictor", "stub:stochastic", "--seed", "11",
              "--workers", str(workers), "--out", str(out)])
        outs.append(out)
    a, b = ((o / "report.json").read_bytes() for o in outs)
    # Worker count is part of the config, so only the hash differs.
    ja, jb = json.loads(a), json.loads(b)
    assert ja["records"] == jb["records"] and ja["aggregates"] == jb["aggregates"]
    out = tmp_path / "run2"
    main(["difficulty", "--input", path, "--predictor", "stub:stochastic", "--seed", "11",
          "--workers", "1", "--out", str(out)])
    assert (out / "report.json").read_bytes() == a
    meta = json.loads((out / "report.meta.json").read_text())
    assert {"started", "finished", "config_hash"} <= set(meta)
    assert "started" not in a.decode()
    header = (out / "report.tsv").read_text().splitlines()[0].split("\t")
    assert "lambda_star" in header and "bucket" in header


def test_emit_checks_aggregates():
    report = run(RunConfig("simulate"))
    verify_report(report)
    report.aggregates["success_rate"] = 0.5
    with pytest.raises(AssertionError):
        emit(report, None)


def test_stub_judges():
    from planbench.judge import JudgeRequest

    assert stub_judge("grm:0.4").complete(JudgeRequest("", "x")).endswith("<score>0.4</score>")
    with pytest.raises(ConfigError):
        stub_judge("grm:abc")
    with pytest.raises(ConfigError):
        stub_judge("oracle")


def test_stdout_report(capsys):
    assert main(["simulate"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["aggregates"]["success_rate"] == 1.0
