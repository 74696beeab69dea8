import json
import random

import numpy as np
import pandas as pd
import pytest

from evaluation import eval_harness
from evaluation.eval_harness import (
    SUMMARY_COLUMNS,
    EvaluationHarness,
    HarnessError,
    TaskSpec,
    builtin_tasks,
    get_task,
    jitter_world,
    method_name,
    run_batch,
    summarize_trials,
)
from helpers import SCENES, scripted_config
from llm_gateway.gateway import BackendConfig
from orchestration.run_config import RunConfig
from simulation.predicates import parse_literal


def test_builtin_tasks_are_valid():
    specs = builtin_tasks()

    assert [spec.name for spec in specs] == ["apple", "mug", "table", "coffee"]
    for spec in specs:
        spec.validate()
        assert spec.scene_path.is_file()
    assert get_task("apple").goals == (parse_literal("In(apple, fridge)=true"),)


def test_unknown_task():
    with pytest.raises(HarnessError, match="apple, mug, table, coffee"):
        get_task("laundry")


def test_task_goal_must_name_scene_objects():
    spec = TaskSpec("apple", "put the banana away", SCENES / "apple.scene", (parse_literal("In(banana, fridge)"),))
    with pytest.raises(HarnessError, match="banana"):
        spec.validate()


def test_method_name_reflects_refinement():
    assert method_name(scripted_config()) == "zktp"
    assert method_name(scripted_config(max_refinements=0)) == "zktp_no_refine"


def test_golden_batch_solves_every_trial():
    summary = run_batch(get_task("apple"), scripted_config(), n=10)

    assert (summary.n, summary.successes, summary.success_rate) == (10, 10, 1.0)
    assert summary.method == "zktp"
    assert summary.mean_refinements == 0
    assert summary.errors == 0
    assert summary.knowledge_bytes == 0


def test_flawed_batch_fails_every_trial():
    summary = run_batch(get_task("mug"), scripted_config("flawed_only", max_refinements=2), n=3)

    assert (summary.successes, summary.success_rate) == (0, 0.0)
    assert summary.mean_refinements == 2
    assert summary.errors == 3


def test_empty_batch_is_rejected():
    harness = EvaluationHarness(scripted_config())
    with pytest.raises(HarnessError):
        harness.run_batch(get_task("apple"), n=0)
    harness.close()


def test_workers_must_be_positive():
    with pytest.raises(HarnessError):
        EvaluationHarness(scripted_config(), workers=0)


def test_parallel_trials_match_serial_trials():
    def outcomes(workers):
        harness = EvaluationHarness(scripted_config(), workers=workers)
        harness.run_batch(get_task("coffee"), n=4)
        harness.close()
        return [(r.trial, r.success, r.llm_calls, r.run["trace"]) for r in harness.reports]

    assert outcomes(4) == outcomes(1)


def test_missing_fixtures_become_failed_trials(tmp_path):
    harness = EvaluationHarness(RunConfig(backend=BackendConfig(mode="scripted", fixture_path=tmp_path)))

    report = harness.run_trial(get_task("apple"), trial=0, seed=0)
    harness.close()

    assert not report.success
    assert "FixtureMissing" in report.error


def test_reports_are_lossless(tmp_path):
    harness = EvaluationHarness(scripted_config())
    summaries = harness.run_all([get_task("apple"), get_task("mug")], n=2)
    paths = harness.save_reports(tmp_path / "reports", plot=True)
    harness.close()

    assert summarize_trials(paths["trials"]) == summaries
    lines = paths["trials"].read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4
    assert json.loads(lines[0])["run"]["trace"]

    csv = pd.read_csv(paths["summary_csv"], encoding="utf-8-sig")
    assert list(csv.columns) == SUMMARY_COLUMNS
    assert csv["successes"].tolist() == [2, 2]
    assert "2/2" in paths["summary_txt"].read_text(encoding="utf-8")
    assert paths["plot"].stat().st_size > 0


def test_summary_ignores_trial_order():
    records = []
    for task in ("apple", "mug"):
        for trial in range(5):
            records.append({
                "task": task, "method": "zktp", "trial": trial, "seed": 0, "success": trial % 2 == 0,
                "oracle": trial % 2 == 0, "refinement_count": trial, "planning_time_ms": 10.0 * trial,
                "action_time_ms": 1.5, "llm_calls": 5 + trial, "format_repairs": 0, "knowledge_bytes": 0,
                "interruptions": trial, "error": None if trial % 2 == 0 else "BudgetExceeded: out of budget",
            })
    shuffled = list(records)
    random.Random(3).shuffle(shuffled)

    summaries = summarize_trials(records)

    assert summarize_trials(shuffled) == summaries
    apple = summaries[0]
    assert (apple.task, apple.n, apple.successes, apple.success_rate, apple.errors) == ("apple", 5, 3, 0.6, 2)
    assert apple.mean_refinements == 2.0
    assert apple.mean_planning_time_ms == 20.0


def test_summary_of_nothing():
    assert summarize_trials([]) == []


def test_corrupt_trials_file(tmp_path):
    path = tmp_path / "trials.jsonl"
    path.write_text('{"task": "apple"}\n{"task": \n', encoding="utf-8")
    with pytest.raises(HarnessError, match="line 2"):
        summarize_trials(path)


def test_jitter_moves_free_objects_by_at_most_one_cell():
    spec = get_task("apple")
    original = spec.load_world()
    first, second = spec.load_world(), spec.load_world()

    jitter_world(first, np.random.default_rng([7, 0]))
    jitter_world(second, np.random.default_rng([7, 0]))

    assert first.state_key() == second.state_key()
    for oid, obj in first.objects.items():
        before = original.objects[oid]
        if before.parent is not None:
            assert obj.parent == before.parent
            continue
        assert max(abs(obj.pos[0] - before.pos[0]), abs(obj.pos[1] - before.pos[1])) <= 1
        assert obj.pos != first.agent.pos


def test_jittered_batch_still_runs():
    summary = run_batch(get_task("apple"), scripted_config(), n=3, seed=11, jitter=True)
    assert summary.n == 3


def test_crashed_trials_keep_the_batch_knowledge_bytes(tmp_path, monkeypatch):
    notes = tmp_path / "notes.txt"
    notes.write_text("n" * 300, encoding="utf-8")
    real_run_task = eval_harness.run_task

    def flaky_run_task(*args, **kwargs):
        if flaky_run_task.calls == 1:
            flaky_run_task.calls += 1
            raise RuntimeError("simulator crashed")
        flaky_run_task.calls += 1
        return real_run_task(*args, **kwargs)

    flaky_run_task.calls = 0
    monkeypatch.setattr(eval_harness, "run_task", flaky_run_task)
    harness = EvaluationHarness(scripted_config(task_knowledge_files=(notes,)))

    harness.run_batch(get_task("apple"), n=3)
    harness.close()

    assert [r.knowledge_bytes for r in harness.reports] == [300, 300, 300]
    assert harness.reports[1].error == "RuntimeError: simulator crashed"
    assert harness.reports[0].success and harness.reports[2].success
