"""
Evaluation harness: the four household tasks, N-trial batches and reports.

Reports written per batch run:
    trials.jsonl       one record per trial (lossless, summaries rebuild from it)
    summary.csv        one row per (task, method)
    summary.txt        the same table as plain text
    success_rates.png  optional bar chart
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from llm_gateway.gateway import ChatGateway
from orchestration.orchestrator import OrchestratorError, RunResult, measure_knowledge_bytes, run_task
from orchestration.run_config import REPO_ROOT, RunConfig
from planning.planner import TaskRequest
from planning.templates import PromptLibrary
from simulation.predicates import DEFAULT_REGISTRY, GoalLiteral, PredicateRegistry, parse_literal
from simulation.world_sim import WorldState, load_scene_file

SCENE_DIR = REPO_ROOT / "simulation" / "scenes"
TRIALS_FILE = "trials.jsonl"
SUMMARY_COLUMNS = [
    "task", "method", "n", "successes", "success_rate", "mean_planning_time_ms",
    "mean_action_time_ms", "mean_refinements", "mean_llm_calls", "knowledge_bytes", "errors",
]


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    instruction: str
    scene_path: Path
    goals: Tuple[GoalLiteral, ...]

    def load_world(self, config: Optional[RunConfig] = None) -> WorldState:
        if config is None:
            return load_scene_file(self.scene_path)
        return load_scene_file(self.scene_path, sensor=config.sensor, action_delay=config.action_delay)

    def validate(self, registry: PredicateRegistry = DEFAULT_REGISTRY):
        """Every goal names a known predicate and objects present in the scene."""
        world = self.load_world()
        for goal in self.goals:
            rule = registry.resolve(goal.predicate)
            object_args = goal.args[:1] if rule.canonical == "isFilledWith" else goal.args
            missing = [arg for arg in object_args if world.resolve(arg) is None]
            if missing:
                raise HarnessError(f"Task {self.name}: goal {goal.render()} names unknown object(s) {missing}")


def _spec(name: str, instruction: str, *goals: str) -> TaskSpec:
    return TaskSpec(name, instruction, SCENE_DIR / f"{name}.scene", tuple(parse_literal(g) for g in goals))


def builtin_tasks() -> List[TaskSpec]:
    return [
        _spec("apple", "put the apple in the fridge", "In(apple, fridge)=true"),
        _spec("mug", "soak the mug", "In(mug, sink)=true", "FaucetOn(sink)=true"),
        _spec(
            "table", "set a place at the dining table",
            "On(plate, table)=true", "On(fork, table)=true", "On(knife, table)=true",
        ),
        _spec(
            "coffee", "bring a mug of coffee to the table",
            "FilledWith(coffee_mug, coffee)=true", "On(coffee_mug, table)=true",
        ),
    ]


def get_task(name: str) -> TaskSpec:
    for spec in builtin_tasks():
        if spec.name == name:
            return spec
    raise HarnessError(f"Unknown task '{name}'; built-in tasks: {', '.join(s.name for s in builtin_tasks())}")


def method_name(config: RunConfig) -> str:
    return "zktp" if config.max_refinements > 0 else "zktp_no_refine"


def jitter_world(world: WorldState, rng: np.random.Generator):
    """Shift every free-standing object by up to one cell per axis, never onto the robot."""
    for obj in world.objects.values():
        if obj.parent is not None or obj.pos is None or world.agent.holding == obj.id:
            continue
        dx, dy = (int(v) for v in rng.integers(-1, 2, size=2))
        moved = (obj.pos[0] + dx, obj.pos[1] + dy)
        if moved != world.agent.pos:
            obj.pos = moved


# ----------------------------------------------------------------- reports

@dataclass
class TrialReport:
    task: str
    method: str
    trial: int
    seed: int
    success: bool
    oracle: bool
    refinement_count: int
    planning_time_ms: float
    action_time_ms: float
    llm_calls: int
    format_repairs: int
    knowledge_bytes: int
    interruptions: int
    error: Optional[str]
    run: Optional[Dict] = None

    @classmethod
    def from_run(cls, spec: TaskSpec, method: str, trial: int, seed: int, result: RunResult) -> "TrialReport":
        m = result.metrics
        return cls(
            task=spec.name, method=method, trial=trial, seed=seed,
            success=result.success, oracle=result.oracle,
            refinement_count=m.refinement_count, planning_time_ms=m.planning_time_ms,
            action_time_ms=m.action_time_ms, llm_calls=m.llm_calls, format_repairs=m.format_repairs,
            knowledge_bytes=m.knowledge_bytes, interruptions=len(result.interruptions),
            error=result.error, run=result.to_record(),
        )

    @classmethod
    def from_error(cls, spec: TaskSpec, method: str, trial: int, seed: int, error: Exception,
                   knowledge_bytes: int = 0) -> "TrialReport":
        return cls(
            task=spec.name, method=method, trial=trial, seed=seed, success=False, oracle=False,
            refinement_count=0, planning_time_ms=0.0, action_time_ms=0.0, llm_calls=0, format_repairs=0,
            knowledge_bytes=knowledge_bytes, interruptions=0, error=f"{type(error).__name__}: {error}",
        )

    def to_record(self) -> Dict:
        return asdict(self)


@dataclass
class BatchSummary:
    task: str
    method: str
    n: int
    successes: int
    success_rate: float
    mean_planning_time_ms: float
    mean_action_time_ms: float
    mean_refinements: float
    mean_llm_calls: float
    knowledge_bytes: int
    errors: int

    def row(self) -> Dict:
        return asdict(self)


def _read_trial_records(source: Union[str, Path, Iterable[Dict]]) -> List[Dict]:
    if not isinstance(source, (str, Path)):
        return list(source)
    records = []
    with open(source, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise HarnessError(f"{source}, line {lineno}: not a JSON record ({e.msg})") from e
    return records


def summarize_trials(source: Union[str, Path, Iterable[Dict]]) -> List[BatchSummary]:
    """Rebuild batch summaries from trial records or a trials.jsonl file."""
    records = _read_trial_records(source)
    if not records:
        return []
    df = pd.DataFrame(records)
    summaries = []
    for (task, method), group in df.groupby(["task", "method"], sort=True):
        n = len(group)
        successes = int(group["success"].astype(bool).sum())
        summaries.append(BatchSummary(
            task=task,
            method=method,
            n=n,
            successes=successes,
            success_rate=round(successes / n, 4),
            mean_planning_time_ms=round(float(group["planning_time_ms"].mean()), 3),
            mean_action_time_ms=round(float(group["action_time_ms"].mean()), 3),
            mean_refinements=round(float(group["refinement_count"].mean()), 3),
            mean_llm_calls=round(float(group["llm_calls"].mean()), 3),
            knowledge_bytes=int(group["knowledge_bytes"].max()),
            errors=int(group["error"].notna().sum()),
        ))
    return summaries


def format_summary_table(summaries: Sequence[BatchSummary]) -> str:
    if not summaries:
        return "(no trials)"
    df = pd.DataFrame([s.row() for s in summaries], columns=SUMMARY_COLUMNS)
    df.insert(4, "solved", [f"{s.successes}/{s.n}" for s in summaries])
    return df.drop(columns=["successes", "n"]).to_string(index=False)


def plot_success_rates(summaries: Sequence[BatchSummary], path: Union[str, Path]) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    df = pd.DataFrame([s.row() for s in summaries])
    table = df.pivot_table(index="task", columns="method", values="success_rate", aggfunc="mean").fillna(0.0)
    ax = table.plot(kind="bar", figsize=(8, 5), ylim=(0, 1.05), rot=0)
    ax.set_ylabel("Success rate")
    ax.set_title("Task success rate per method")
    for container in ax.containers:
        ax.bar_label(container, fmt="%.2f", fontsize=8)
    plt.tight_layout()
    path = Path(path)
    plt.savefig(path, dpi=150, bbox_inches="tight")
    plt.close()
    return path


# ----------------------------------------------------------------- harness

class EvaluationHarness:
    def __init__(self, config: RunConfig, workers: int = 1, jitter: bool = False,
                 library: Optional[PromptLibrary] = None):
        if workers < 1:
            raise HarnessError("workers must be at least 1")
        self.config = config
        self.workers = workers
        self.jitter = jitter
        self.library = library
        self.gateway = ChatGateway(config.backend)
        self.method = method_name(config)
        self.reports: List[TrialReport] = []
        self.logger = logging.getLogger(__name__)

    def _knowledge_bytes(self) -> int:
        try:
            return measure_knowledge_bytes(self.config)
        except OSError:
            return 0

    def run_trial(self, spec: TaskSpec, trial: int, seed: int) -> TrialReport:
        """One independent run on a fresh world; failures become failed reports."""
        try:
            world = spec.load_world(self.config)
            if self.jitter:
                jitter_world(world, np.random.default_rng([seed, trial]))
            session = self.gateway.new_session(spec.name)
            result = run_task(TaskRequest(spec.instruction), world, spec.goals, self.config,
                              session=session, library=self.library)
        except OrchestratorError as e:
            if e.result is None:
                return TrialReport.from_error(spec, self.method, trial, seed, e, self._knowledge_bytes())
            self.logger.error(f"❌ {spec.name} trial {trial}: {e}")
            return TrialReport.from_run(spec, self.method, trial, seed, e.result)
        except Exception as e:
            self.logger.exception(f"❌ {spec.name} trial {trial} crashed")
            return TrialReport.from_error(spec, self.method, trial, seed, e, self._knowledge_bytes())
        return TrialReport.from_run(spec, self.method, trial, seed, result)

    def run_batch(self, spec: TaskSpec, n: int, seed: int = 0) -> BatchSummary:
        if n < 1:
            raise HarnessError(f"A batch needs at least one trial, got n={n}")
        spec.validate()
        self.logger.info(f"🚀 {spec.name}: {n} trial(s), method={self.method}, workers={self.workers}")

        reports: List[TrialReport] = []
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            futures = [executor.submit(self.run_trial, spec, trial, seed) for trial in range(n)]
            for future in tqdm(as_completed(futures), total=n, desc=spec.name, disable=n < 2):
                reports.append(future.result())
        reports.sort(key=lambda r: r.trial)

        self.reports.extend(reports)
        summary = summarize_trials(r.to_record() for r in reports)[0]
        self.logger.info(f"📊 {spec.name}: {summary.successes}/{summary.n} solved")
        return summary

    def run_all(self, specs: Sequence[TaskSpec], n: int, seed: int = 0) -> List[BatchSummary]:
        return [self.run_batch(spec, n, seed) for spec in specs]

    def save_reports(self, report_dir: Union[str, Path], plot: bool = False) -> Dict[str, Path]:
        report_dir = Path(report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        paths = {"trials": report_dir / TRIALS_FILE}
        with open(paths["trials"], "w", encoding="utf-8") as f:
            for report in self.reports:
                f.write(json.dumps(report.to_record(), ensure_ascii=False) + "\n")

        summaries = summarize_trials(paths["trials"])
        paths["summary_csv"] = report_dir / "summary.csv"
        pd.DataFrame([s.row() for s in summaries], columns=SUMMARY_COLUMNS).to_csv(
            paths["summary_csv"], index=False, encoding="utf-8-sig"
        )
        paths["summary_txt"] = report_dir / "summary.txt"
        paths["summary_txt"].write_text(format_summary_table(summaries) + "\n", encoding="utf-8")
        if plot and summaries:
            paths["plot"] = plot_success_rates(summaries, report_dir / "success_rates.png")
        self.logger.info(f"💾 Reports written to {report_dir}")
        return paths

    def print_summary(self, summaries: Sequence[BatchSummary]):
        print("\n📊 === EVALUATION SUMMARY ===")
        print(format_summary_table(summaries))

    def close(self):
        self.gateway.close()


def run_batch(spec: TaskSpec, config: RunConfig, n: int, seed: int = 0, workers: int = 1,
              report_dir: Optional[Union[str, Path]] = None, jitter: bool = False, plot: bool = False) -> BatchSummary:
    harness = EvaluationHarness(config, workers=workers, jitter=jitter)
    try:
        summary = harness.run_batch(spec, n, seed)
        if report_dir is not None:
            harness.save_reports(report_dir, plot=plot)
        return summary
    finally:
        harness.close()
