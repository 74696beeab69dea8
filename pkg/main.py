"""
Command-line entry point.

    python main.py run --task apple --backend scripted --fixtures golden
    python main.py eval --tasks all --n 10 --backend scripted --report-dir reports/latest --plot
    python main.py validate-bt tree.xml
    python main.py render-scene simulation/scenes/mug.scene
    python main.py replay logs/apple_transcript.jsonl --task apple

Exit codes: 0 success, 1 task failure, 2 usage, configuration or parse error.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from behavior_trees.bt_core import BTParseError, parse_bt, serialize_bt
from evaluation.eval_harness import EvaluationHarness, HarnessError, builtin_tasks, get_task
from llm_gateway.gateway import ChatGateway, GatewayError, record_transcript
from orchestration.orchestrator import OrchestratorError, RunResult, run_task
from orchestration.run_config import DEFAULT_CONFIG, ConfigError, RunConfig, load_run_config
from planning.planner import PlannerError, TaskRequest
from simulation.predicates import DEFAULT_REGISTRY, UnknownPredicate, parse_literal
from simulation.world_sim import SceneError, load_scene_file, render_views

DEFAULT_LOG_FILE = Path("logs") / "zktp.log"
EXIT_OK, EXIT_TASK_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def setup_logging(log_file: Path, level: str = "INFO"):
    log_file = Path(log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.FileHandler(log_file, encoding="utf-8")],
        force=True,
    )


def _add_config_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help=f"run configuration file (default: {DEFAULT_CONFIG.name} if present)")
    parser.add_argument("--backend", choices=["http", "scripted", "replay"], help="chat-completion backend")
    parser.add_argument("--fixtures", help="fixture directory for the scripted backend")
    parser.add_argument("--max-refinements", type=int, help="refinement budget per sub-task (0 disables refinement)")
    parser.add_argument("--action-delay", type=float, help="seconds every simulated action sleeps")
    parser.add_argument("--log-file", type=Path, default=DEFAULT_LOG_FILE, help="structured log destination")
    parser.add_argument("--log-level", default="INFO", help="log level for the log file")


def _add_task_options(parser: argparse.ArgumentParser):
    parser.add_argument("--task", help="built-in task name: " + ", ".join(s.name for s in builtin_tasks()))
    parser.add_argument("--instruction", help="natural-language instruction (overrides the task's)")
    parser.add_argument("--scene", type=Path, help="scene file (overrides the task's)")
    parser.add_argument("--goal", action="append", default=[], help="goal literal for the oracle, e.g. 'In(apple, fridge)=true'")
    parser.add_argument("--transcript-out", type=Path, help="write the gateway transcript here (JSON lines)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zktp", description="Zero-knowledge task planning runtime")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single task")
    _add_task_options(run)
    _add_config_options(run)
    run.set_defaults(handler=cmd_run, command_parser=run)

    evaluate = sub.add_parser("eval", help="run evaluation batches")
    evaluate.add_argument("--tasks", default="all", help="'all' or comma-separated task names")
    evaluate.add_argument("--n", type=int, default=10, help="trials per task")
    evaluate.add_argument("--seed", type=int, default=0, help="seed for placement jitter")
    evaluate.add_argument("--workers", type=int, default=1, help="trials run in parallel")
    evaluate.add_argument("--jitter", action="store_true", help="jitter object placement per trial")
    evaluate.add_argument("--report-dir", type=Path, help="report directory (default: reports/<timestamp>)")
    evaluate.add_argument("--plot", action="store_true", help="also write success_rates.png")
    _add_config_options(evaluate)
    evaluate.set_defaults(handler=cmd_eval, command_parser=evaluate)

    validate = sub.add_parser("validate-bt", help="parse a behavior tree file and print its canonical form")
    validate.add_argument("path", type=Path)
    validate.set_defaults(handler=cmd_validate_bt, command_parser=validate)

    render = sub.add_parser("render-scene", help="print the views the robot sees in a scene")
    render.add_argument("path", type=Path)
    _add_config_options(render)
    render.set_defaults(handler=cmd_render_scene, command_parser=render)

    replay = sub.add_parser("replay", help="re-run a task against a recorded transcript")
    replay.add_argument("transcript", type=Path)
    _add_task_options(replay)
    _add_config_options(replay)
    replay.set_defaults(handler=cmd_replay, command_parser=replay)
    return parser


def _load_config(args: argparse.Namespace, **extra) -> RunConfig:
    path = args.config
    if path is None and DEFAULT_CONFIG.is_file():
        path = DEFAULT_CONFIG
    return load_run_config(
        path,
        backend=getattr(args, "backend", None),
        fixtures=getattr(args, "fixtures", None),
        max_refinements=getattr(args, "max_refinements", None),
        action_delay=getattr(args, "action_delay", None),
        **extra,
    )


def print_run_summary(result: RunResult):
    print("\n📊 === RUN SUMMARY ===")
    print(f"Task ID: {result.task_id or '-'}")
    print(f"Instruction: {result.instruction}")
    print(f"success={str(result.success).lower()} oracle={str(result.oracle).lower()}")
    for outcome in result.subtask_outcomes:
        note = " (already satisfied)" if outcome.pre_satisfied else ""
        print(f"  [{outcome.status}] L{outcome.layer} {outcome.name}: {outcome.condition}{note}")
    m = result.metrics
    print(f"Actions executed: {len(result.trace)} ({len(result.trace.successes())} succeeded)")
    print(f"Interruptions: {', '.join(result.interruptions) or 'none'}")
    print(f"Refinements: {m.refinement_count}  LLM calls: {m.llm_calls}  format repairs: {m.format_repairs}")
    print(f"Planning time: {m.planning_time_ms:.1f} ms  action time: {m.action_time_ms:.1f} ms")
    print(f"Task knowledge: {m.knowledge_bytes} bytes")
    if result.error:
        print(f"Error: {result.error}")


def _execute_run(args: argparse.Namespace, config: RunConfig) -> int:
    spec = get_task(args.task) if args.task else None
    instruction = args.instruction or (spec.instruction if spec else None)
    scene = args.scene or (spec.scene_path if spec else None)
    if not instruction or not scene:
        raise UsageError("give --task, or both --instruction and --scene")
    try:
        goals = tuple(parse_literal(g) for g in args.goal) if args.goal else (spec.goals if spec else ())
        for goal in goals:
            DEFAULT_REGISTRY.resolve(goal.predicate)
    except (ValueError, UnknownPredicate) as e:
        raise UsageError(str(e)) from e

    world = load_scene_file(scene)
    gateway = ChatGateway(config.backend)
    session = gateway.new_session(args.task)
    try:
        result = run_task(TaskRequest(instruction), world, goals, config, session=session)
    except OrchestratorError as e:
        if e.result is None:
            raise
        result = e.result
    finally:
        if args.transcript_out:
            record_transcript(session.transcript, args.transcript_out)
            print(f"💾 Transcript written to {args.transcript_out}")
        gateway.close()

    print_run_summary(result)
    return EXIT_OK if result.success else EXIT_TASK_FAILED


def cmd_run(args: argparse.Namespace) -> int:
    return _execute_run(args, _load_config(args))


def cmd_replay(args: argparse.Namespace) -> int:
    args.backend = "replay"
    return _execute_run(args, _load_config(args, transcript=str(args.transcript)))


def cmd_eval(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be at least 1, got {args.n}")
    config = _load_config(args)
    names = [name.strip() for name in args.tasks.split(",") if name.strip()]
    specs = builtin_tasks() if names == ["all"] else [get_task(name) for name in names]
    report_dir = args.report_dir or Path("reports") / datetime.now().strftime("%Y%m%d_%H%M%S")

    harness = EvaluationHarness(config, workers=args.workers, jitter=args.jitter)
    try:
        summaries = harness.run_all(specs, args.n, args.seed)
        harness.save_reports(report_dir, plot=args.plot)
    finally:
        harness.close()
    harness.print_summary(summaries)
    print(f"💾 Reports in {report_dir}")
    return EXIT_OK if all(s.successes == s.n for s in summaries) else EXIT_TASK_FAILED


def cmd_validate_bt(args: argparse.Namespace) -> int:
    tree = parse_bt(Path(args.path).read_text(encoding="utf-8"))
    print(serialize_bt(tree))
    print(f"\n✅ Valid behavior tree: {len(tree)} node(s), {len(tree.actions())} action(s)")
    return EXIT_OK


def cmd_render_scene(args: argparse.Namespace) -> int:
    config = _load_config(args)
    world = load_scene_file(args.path, sensor=config.sensor)
    print("\n\n".join(render_views(world)))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(getattr(args, "log_file", DEFAULT_LOG_FILE), getattr(args, "log_level", "INFO"))
    logger = logging.getLogger("zktp")
    logger.info(f"🎯 {args.command} {' '.join(argv if argv is not None else sys.argv[1:])}")

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        args.command_parser.print_help(sys.stderr)
        return EXIT_USAGE
    except (BTParseError, SceneError, ConfigError, HarnessError, FileNotFoundError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OrchestratorError, PlannerError, GatewayError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_TASK_FAILED
    except KeyboardInterrupt:
        print("\n⏹️ Interrupted")
        return EXIT_TASK_FAILED


if __name__ == "__main__":
    sys.exit(main())
