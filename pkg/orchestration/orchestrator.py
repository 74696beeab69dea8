"""
Task workflow: interpret once, decompose once, then per sub-task
plan -> execute -> check -> refine until done or out of budget.

Planning time and action time are measured on separate clocks so simulated
action latency never leaks into the planning metric.
"""

import logging
import re
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from behavior_trees.bt_core import BehaviorTree, BTParseError, Status, tick
from llm_gateway.gateway import ChatGateway, GatewayError, GatewaySession, TranscriptEntry
from orchestration.run_config import RunConfig
from planning.planner import (
    DecompositionPlan,
    PlanGenerationError,
    PlannerError,
    PlanningConstraints,
    SubTask,
    SubTaskStatus,
    TaskContext,
    TaskRequest,
    decompose_task,
    interpret_task,
    plan_subtask_bt,
)
from planning.refiner import RefinementInput, UnmetCondition, refine_bt
from planning.templates import PROMPT_DIR, PromptLibrary, TemplateError, default_library
from simulation.predicates import DEFAULT_REGISTRY, GoalLiteral, PredicateRegistry, UnknownPredicate
from simulation.world_sim import (
    ActionFailure,
    ActionSuccess,
    WorldState,
    check_condition,
    eval_predicate,
    execute_action,
    oracle_check,
    render_views,
)

logger = logging.getLogger(__name__)

STAGE_ERRORS = (PlannerError, GatewayError, UnknownPredicate, BTParseError, TemplateError)


# ------------------------------------------------------------------ result

@dataclass(frozen=True)
class TraceEntry:
    subtask: str
    action: str
    attributes: Tuple[Tuple[str, str], ...]
    result: str

    @property
    def succeeded(self) -> bool:
        return self.result == "Success"


@dataclass
class ExecutionTrace:
    entries: List[TraceEntry] = field(default_factory=list)

    def append(self, entry: TraceEntry):
        self.entries.append(entry)

    def successes(self) -> List[TraceEntry]:
        return [entry for entry in self.entries if entry.succeeded]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class SubTaskOutcome:
    name: str
    layer: int
    condition: str
    status: str = SubTaskStatus.PENDING.value
    generations: int = 0
    ticks: int = 0
    generation_failures: int = 0
    interruptions: List[str] = field(default_factory=list)
    pre_satisfied: bool = False


@dataclass
class RunMetrics:
    planning_time_ms: float = 0.0
    action_time_ms: float = 0.0
    refinement_count: int = 0
    llm_calls: int = 0
    format_repairs: int = 0
    knowledge_bytes: int = 0


@dataclass
class RunResult:
    instruction: str
    task_id: Optional[str] = None
    success: bool = False
    oracle: bool = False
    subtask_outcomes: List[SubTaskOutcome] = field(default_factory=list)
    trace: ExecutionTrace = field(default_factory=ExecutionTrace)
    metrics: RunMetrics = field(default_factory=RunMetrics)
    interruptions: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_record(self, include_timing: bool = True) -> Dict:
        """JSON-ready record; without timing it is identical across deterministic runs."""
        metrics = asdict(self.metrics)
        if not include_timing:
            metrics.pop("planning_time_ms")
            metrics.pop("action_time_ms")
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "success": self.success,
            "oracle": self.oracle,
            "subtasks": [asdict(outcome) for outcome in self.subtask_outcomes],
            "trace": [
                {"subtask": e.subtask, "action": e.action, "attributes": dict(e.attributes), "result": e.result}
                for e in self.trace
            ],
            "interruptions": list(self.interruptions),
            "metrics": metrics,
            "error": self.error,
        }


class OrchestratorError(Exception):
    """Base class for run failures; carries whatever result was gathered."""

    def __init__(self, message: str, result: Optional[RunResult] = None):
        super().__init__(message)
        self.result = result


class TerminationExceeded(OrchestratorError):
    pass


class BudgetExceeded(OrchestratorError):
    pass


class StageFailed(OrchestratorError):
    pass


# ----------------------------------------------------------- measurement

class RunClock:
    def __init__(self):
        self.planning_ms = 0.0
        self.action_ms = 0.0

    @contextmanager
    def planning(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.planning_ms += (time.perf_counter() - start) * 1000

    @contextmanager
    def acting(self):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.action_ms += (time.perf_counter() - start) * 1000


def measure_knowledge_bytes(config: RunConfig, template_dir: Union[str, Path, None] = PROMPT_DIR) -> int:
    """Bytes of task-specific material fed to the planner; fixed templates are excluded."""
    template_root = Path(template_dir).resolve() if template_dir else None
    total = 0
    for path in config.task_knowledge_files:
        path = Path(path)
        if template_root is not None and template_root in path.resolve().parents:
            continue
        total += path.stat().st_size
    return total


def load_task_knowledge(config: RunConfig) -> str:
    return "\n\n".join(Path(p).read_text(encoding="utf-8") for p in config.task_knowledge_files)


def goal_literal_pattern(goal: GoalLiteral) -> re.Pattern:
    args = r"\s*,\s*".join(re.escape(arg) for arg in goal.args)
    return re.compile(rf"(?<![A-Za-z0-9_]){re.escape(goal.predicate)}\(\s*{args}\s*\)")


def scan_goal_literal_leaks(transcript: Iterable[TranscriptEntry], goals: Sequence[GoalLiteral]) -> List[Tuple[int, str]]:
    """(entry index, literal) for every request that mentions a goal literal."""
    patterns = [(goal.render(), goal_literal_pattern(goal)) for goal in goals]
    leaks = []
    for index, entry in enumerate(transcript):
        text = entry.request_text()
        leaks.extend((index, rendered) for rendered, pattern in patterns if pattern.search(text))
    return leaks


# --------------------------------------------------------------- effector

class WorldEffector:
    """Bridges ticked leaves to the simulator and records the action trace."""

    def __init__(self, world: WorldState, trace: ExecutionTrace, subtask: str, clock: RunClock,
                 registry: PredicateRegistry = DEFAULT_REGISTRY):
        self.world = world
        self.trace = trace
        self.subtask = subtask
        self.clock = clock
        self.registry = registry
        self.logger = logging.getLogger(__name__)

    def run_action(self, attributes: Dict[str, str]):
        name = attributes.get("name", "")
        with self.clock.acting():
            outcome = execute_action(self.world, name, attributes)
        self.trace.append(TraceEntry(self.subtask, name, tuple(attributes.items()), str(outcome)))
        self.logger.debug(f"{name}({attributes.get('target', '')}) -> {outcome}")
        if isinstance(outcome, ActionSuccess):
            return Status.SUCCESS
        if isinstance(outcome, ActionFailure):
            return Status.FAILURE
        return outcome

    def check_condition(self, name: str, target: str, value: str):
        return check_condition(self.world, name, target, value, self.registry)


# ----------------------------------------------------------- orchestrator

class TaskOrchestrator:
    def __init__(self, config: RunConfig, session: GatewaySession, library: Optional[PromptLibrary] = None,
                 registry: PredicateRegistry = DEFAULT_REGISTRY):
        self.config = config
        self.session = session
        self.library = library or default_library()
        self.registry = registry
        self.logger = logging.getLogger(__name__)

    def _check_deadline(self, deadline: float, result: RunResult):
        if time.monotonic() > deadline:
            raise TerminationExceeded(f"Wall-clock cap of {self.config.wall_clock_cap}s exceeded", result)

    def run(self, request: TaskRequest, world: WorldState, goals: Sequence[GoalLiteral]) -> RunResult:
        for goal in goals:
            self.registry.resolve(goal.predicate)
        world.sensor = self.config.sensor
        world.action_delay = self.config.action_delay

        clock = RunClock()
        deadline = time.monotonic() + self.config.wall_clock_cap
        result = RunResult(instruction=request.instruction)
        result.metrics.knowledge_bytes = measure_knowledge_bytes(self.config)
        constraints = PlanningConstraints.from_world(world, self.registry, load_task_knowledge(self.config))

        try:
            with clock.planning():
                views = render_views(world)
                ctx = interpret_task(request, views, self.session, self.library)
            result.task_id = ctx.task_id
            self._check_deadline(deadline, result)
            with clock.planning():
                plan = decompose_task(ctx, request, self.registry, self.session, self.library)
            result.subtask_outcomes = [
                SubTaskOutcome(s.name, s.layer, s.condition.render()) for s in plan.subtasks()
            ]
            self._run_layers(plan, ctx, request, world, constraints, clock, deadline, result)
        except BudgetExceeded as e:
            result.error = f"BudgetExceeded: {e}"
            self.logger.error(f"❌ {e}")
        except OrchestratorError as e:
            self._finish(result, world, goals, clock)
            e.result = result
            result.error = f"{type(e).__name__}: {e}"
            self.logger.error(f"❌ Run stopped: {e}")
            raise
        except STAGE_ERRORS as e:
            self._finish(result, world, goals, clock)
            result.error = f"{type(e).__name__}: {e}"
            self.logger.error(f"❌ Stage failed: {result.error}")
            raise StageFailed(result.error, result) from e

        self._finish(result, world, goals, clock)
        all_done = bool(result.subtask_outcomes) and all(
            outcome.status == SubTaskStatus.DONE.value for outcome in result.subtask_outcomes
        )
        result.success = all_done and result.oracle
        self.logger.info(
            f"{'✅' if result.success else '❌'} Run finished: success={result.success} oracle={result.oracle} "
            f"refinements={result.metrics.refinement_count} llm_calls={result.metrics.llm_calls}"
        )
        return result

    def _finish(self, result: RunResult, world: WorldState, goals: Sequence[GoalLiteral], clock: RunClock):
        result.oracle = oracle_check(world, goals, self.registry)
        result.metrics.planning_time_ms = round(clock.planning_ms, 3)
        result.metrics.action_time_ms = round(clock.action_ms, 3)
        result.metrics.llm_calls = len(self.session.transcript)
        result.metrics.format_repairs = sum(1 for entry in self.session.transcript if entry.repair)

    def _run_layers(self, plan: DecompositionPlan, ctx: TaskContext, request: TaskRequest, world: WorldState,
                    constraints: PlanningConstraints, clock: RunClock, deadline: float, result: RunResult):
        outcomes = {outcome.name: outcome for outcome in result.subtask_outcomes}
        completed: List[SubTask] = []
        for layer_index, layer in enumerate(plan.layers, 1):
            self.logger.info(f"📚 Layer {layer_index}: {', '.join(s.name for s in layer)}")
            for subtask in layer:
                self._run_subtask(subtask, outcomes[subtask.name], ctx, request, world, constraints,
                                  completed, clock, deadline, result)
                completed.append(subtask)

    def _run_subtask(self, subtask: SubTask, outcome: SubTaskOutcome, ctx: TaskContext, request: TaskRequest,
                     world: WorldState, constraints: PlanningConstraints, completed: List[SubTask],
                     clock: RunClock, deadline: float, result: RunResult):
        condition = subtask.condition.literal()
        if eval_predicate(world, condition, self.registry):
            self.logger.warning(f"⏭️ {subtask.name} already holds ({subtask.condition.render()}), skipping")
            self._mark(subtask, outcome, SubTaskStatus.DONE)
            outcome.pre_satisfied = True
            return

        tree: Optional[BehaviorTree] = None
        cause = None
        attempt = 0
        while True:
            self._check_deadline(deadline, result)
            if attempt > self.config.max_refinements:
                self._mark(subtask, outcome, SubTaskStatus.FAILED)
                raise BudgetExceeded(
                    f"{subtask.name} not done after {attempt} attempt(s) (max_refinements={self.config.max_refinements})",
                    result,
                )
            if attempt > 0:
                result.metrics.refinement_count += 1
            outcome.generations += 1
            try:
                with clock.planning():
                    if tree is None:
                        tree = plan_subtask_bt(subtask, ctx, completed, constraints, self.session, request,
                                               attempt, self.library)
                    else:
                        refinement = RefinementInput(
                            subtask=subtask, failed_tree=tree, cause=cause, completed=tuple(completed),
                            ctx=ctx, fresh_views=render_views(world), request=request, constraints=constraints,
                        )
                        tree = refine_bt(refinement, self.session, attempt, self.library)
            except (PlanGenerationError, BTParseError) as e:
                outcome.generation_failures += 1
                self.logger.warning(f"⚠️ No usable tree for {subtask.name} on attempt {attempt}: {e}")
                attempt += 1
                continue

            outcome.ticks += 1
            effector = WorldEffector(world, result.trace, subtask.name, clock, self.registry)
            tick_outcome = tick(tree, effector)
            if tick_outcome.is_interrupted:
                cause = tick_outcome.report
                outcome.interruptions.append(cause.kind.value)
                result.interruptions.append(cause.kind.value)
                self.logger.info(f"🚧 {subtask.name} interrupted by {cause}")
            elif eval_predicate(world, condition, self.registry):
                self._mark(subtask, outcome, SubTaskStatus.DONE)
                self.logger.info(f"✅ {subtask.name} done after {outcome.ticks} tick(s)")
                return
            else:
                cause = UnmetCondition(subtask.condition.render(), tick_outcome.status)
                self.logger.info(f"🔄 {subtask.name}: {cause.describe()}")
            self._check_deadline(deadline, result)
            attempt += 1

    @staticmethod
    def _mark(subtask: SubTask, outcome: SubTaskOutcome, status: SubTaskStatus):
        subtask.status = status
        outcome.status = status.value


def run_task(request: TaskRequest, scene: WorldState, goals: Sequence[GoalLiteral], config: RunConfig,
             session: Optional[GatewaySession] = None, task_key: Optional[str] = None,
             library: Optional[PromptLibrary] = None) -> RunResult:
    """Run one task on `scene` (mutated in place). A session is opened from config.backend when none is given."""
    if session is None:
        session = ChatGateway(config.backend).new_session(task_key)
    return TaskOrchestrator(config, session, library).run(request, scene, goals)
