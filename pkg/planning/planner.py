"""
Natural language planning engine: interpret, decompose, plan.

Each stage sends one request through a gateway session and parses the answer
with a strict grammar. A response that does not parse gets one format
re-prompt before the stage gives up.
"""

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from behavior_trees.bt_core import BehaviorTree, BTParseError, parse_bt
from llm_gateway.gateway import ChatMessage, EncodedBlob, Role, Text
from planning.templates import PromptLibrary, default_library
from simulation.predicates import (
    DEFAULT_REGISTRY,
    GoalLiteral,
    LiteralValue,
    PredicateRegistry,
    UnknownPredicate,
    parse_literal,
)
from simulation.world_sim import ACTION_VOCABULARY, ActionSpec, WorldState

logger = logging.getLogger(__name__)

IDENTIFIER_PATTERN = re.compile(r"^[a-z0-9]+(_[a-z0-9]+)*$")
TASK_ID_MARKER = re.compile(r"task[\s_-]*id\s*:", re.IGNORECASE)
CONTEXT_MARKER = re.compile(r"context\s*:", re.IGNORECASE)
LAYER_LINE = re.compile(r"^Layer\s+(?P<layer>\d+)\s*:\s*(?P<name>[^|]+?)\s*\|\s*(?P<condition>.+?)\s*$", re.IGNORECASE)
BT_TAG = re.compile(
    r"<(?P<close>/?)(?P<tag>Sequence|Selector|Action|Condition)\b"
    r"(?P<attrs>(?:[^>\"']|\"[^\"]*\"|'[^']*')*?)(?P<selfclose>/?)>"
)
# Quoted values are matched whole so nothing inside them is rewritten.
ATTRIBUTE = re.compile(r"(\s[A-Za-z_][\w:.-]*)\s*=\s*(?:(?P<quoted>\"[^\"]*\"|'[^']*')|(?P<bare>[^\s\"'>/]+))")
CODE_FENCE = re.compile(r"```[A-Za-z]*")

SINGLE_OBJECT_REMINDER = "Remember that the robot can only hold one object at a time."


class PlannerError(Exception):
    """Base class for planning stage failures."""


class EmptyInstruction(PlannerError):
    pass


class MalformedResponse(PlannerError):
    pass


class MalformedDecomposition(PlannerError):
    pass


class PlanGenerationError(PlannerError):
    """A behavior tree could not be obtained from a response."""


class NoXmlFound(PlanGenerationError):
    pass


# ------------------------------------------------------------------ types

@dataclass(frozen=True)
class TaskRequest:
    instruction: str

    def __post_init__(self):
        cleaned = (self.instruction or "").strip()
        if not cleaned:
            raise EmptyInstruction("The instruction is empty")
        object.__setattr__(self, "instruction", cleaned)


@dataclass(frozen=True)
class TaskContext:
    task_id: str
    context_text: str = ""

    def __post_init__(self):
        if not IDENTIFIER_PATTERN.match(self.task_id):
            raise ValueError(f"task_id {self.task_id!r} is not an underscore-separated lowercase identifier")


@dataclass(frozen=True)
class CompletionCondition:
    predicate: str
    args: Tuple[str, ...]
    expected: LiteralValue = True

    def literal(self) -> GoalLiteral:
        return GoalLiteral(self.predicate, self.args, self.expected)

    def render(self) -> str:
        value = str(self.expected).lower() if isinstance(self.expected, bool) else self.expected
        return f"{self.predicate}({', '.join(self.args)})={value}"


class SubTaskStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass
class SubTask:
    name: str
    layer: int
    condition: CompletionCondition
    status: SubTaskStatus = SubTaskStatus.PENDING

    def summary(self) -> str:
        return f"{self.name} ({self.condition.render()})"


@dataclass
class DecompositionPlan:
    layers: List[List[SubTask]]

    def __post_init__(self):
        if not self.layers or not all(self.layers):
            raise MalformedDecomposition("A decomposition needs at least one non-empty layer")

    def subtasks(self) -> Iterator[SubTask]:
        for layer in self.layers:
            yield from layer

    def names(self) -> List[str]:
        return [subtask.name for subtask in self.subtasks()]

    def __len__(self):
        return sum(len(layer) for layer in self.layers)


@dataclass(frozen=True)
class PlanningConstraints:
    """What the robot may do and touch; all of it is derived from the environment."""

    actions: Tuple[ActionSpec, ...] = tuple(ACTION_VOCABULARY.values())
    objects: Tuple[Tuple[str, str], ...] = ()
    registry: PredicateRegistry = field(default=DEFAULT_REGISTRY, compare=False)
    reminder: str = SINGLE_OBJECT_REMINDER
    knowledge: str = ""

    @classmethod
    def from_world(cls, world: WorldState, registry: PredicateRegistry = DEFAULT_REGISTRY,
                   knowledge: str = "") -> "PlanningConstraints":
        objects = tuple((oid, obj.object_class) for oid, obj in world.objects.items())
        return cls(objects=objects, registry=registry, knowledge=knowledge)

    def action_listing(self) -> str:
        return "\n".join(f"- {spec.signature}: {spec.description}" for spec in self.actions)

    def object_listing(self) -> str:
        return ", ".join(oid if oid == cls else f"{oid} ({cls})" for oid, cls in self.objects)


# --------------------------------------------------------- interpretation

def sanitize_identifier(raw: str) -> str:
    """Lowercase, whitespace and dashes to underscores, everything else illegal dropped."""
    text = re.sub(r"[\s\-]+", "_", raw.strip().lower())
    text = re.sub(r"[^a-z0-9_]", "", text)
    return re.sub(r"_+", "_", text).strip("_")


def parse_interpretation(response: str) -> TaskContext:
    marker = TASK_ID_MARKER.search(response)
    if not marker:
        raise MalformedResponse("the answer has no 'TASK_ID:' section")
    rest = response[marker.end():]
    id_line = rest.split("\n", 1)[0]
    inline_context = CONTEXT_MARKER.search(id_line)
    if inline_context:
        id_line = id_line[:inline_context.start()]
    task_id = sanitize_identifier(id_line)
    if not task_id:
        raise MalformedResponse("the TASK_ID section is empty")

    context_marker = CONTEXT_MARKER.search(rest)
    if context_marker:
        context_text = rest[context_marker.end():].strip()
    else:
        logger.warning("⚠️ Interpretation has no CONTEXT section, continuing with an empty context")
        context_text = ""
    return TaskContext(task_id=task_id, context_text=context_text)


def _with_repair(messages: List[ChatMessage], response: str, repair_text: str) -> List[ChatMessage]:
    return messages + [ChatMessage(Role.ASSISTANT, (Text(response),)), ChatMessage.user(repair_text)]


def interpret_task(request: TaskRequest, views: Sequence[str], gateway,
                   library: Optional[PromptLibrary] = None) -> TaskContext:
    """Task id and environment description from the instruction and the encoded views."""
    if not views:
        raise PlannerError("interpret_task needs at least one view")
    library = library or default_library()
    prompt = library.render("interpret", instruction=request.instruction, view_count=str(len(views)))
    messages = [
        ChatMessage.system(library.render("system")),
        ChatMessage.user(prompt, [EncodedBlob.encode(view) for view in views]),
    ]
    response = gateway.complete(messages, stage="interpret", attempt=0)
    try:
        ctx = parse_interpretation(response)
    except MalformedResponse as e:
        logger.warning(f"🔧 Interpretation needs a format repair: {e}")
        messages = _with_repair(messages, response, library.render("repair_interpret", problem=str(e)))
        response = gateway.complete(messages, stage="interpret", attempt=0, repair=True)
        ctx = parse_interpretation(response)
    logger.info(f"🧭 Task interpreted as '{ctx.task_id}'")
    return ctx


# ---------------------------------------------------------- decomposition

def parse_decomposition(response: str, registry: PredicateRegistry = DEFAULT_REGISTRY) -> DecompositionPlan:
    by_layer: Dict[int, List[SubTask]] = {}
    seen = set()
    unknown = []
    for lineno, raw in enumerate(response.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("```"):
            continue
        match = LAYER_LINE.match(line)
        if not match:
            raise MalformedDecomposition(f"line {lineno} does not follow 'Layer <n>: <name> | <condition>': {line!r}")
        layer = int(match.group("layer"))
        name = match.group("name").strip()
        if layer < 1:
            raise MalformedDecomposition(f"line {lineno}: layers are numbered from 1")
        if not IDENTIFIER_PATTERN.match(name):
            raise MalformedDecomposition(f"line {lineno}: sub-task name {name!r} must be underscore-separated lowercase")
        if name in seen:
            raise MalformedDecomposition(f"line {lineno}: duplicate sub-task {name!r}")
        seen.add(name)
        try:
            literal = parse_literal(match.group("condition"))
        except ValueError as e:
            raise MalformedDecomposition(f"line {lineno}: {e}") from e
        if not registry.is_known(literal.predicate):
            unknown.append(literal.predicate)
            continue
        rule = registry.resolve(literal.predicate)
        spec = registry.predicates[rule.canonical]
        if not spec.accepts(len(literal.args)):
            raise MalformedDecomposition(
                f"line {lineno}: {literal.predicate} takes {spec.min_arity}-{spec.max_arity} argument(s)"
            )
        # Pairing aliases keep their own name; the device is only known to the world.
        predicate = literal.predicate if rule.via_pairing else rule.canonical
        condition = CompletionCondition(predicate, literal.args, literal.expected)
        by_layer.setdefault(layer, []).append(SubTask(name=name, layer=layer, condition=condition))

    if unknown:
        names = tuple(dict.fromkeys(unknown))
        raise UnknownPredicate(
            f"Unknown predicate(s): {', '.join(names)}. Known predicates: {', '.join(registry.predicates)}",
            names,
        )
    if not by_layer:
        raise MalformedDecomposition("the answer contains no sub-tasks")
    return DecompositionPlan(layers=[by_layer[k] for k in sorted(by_layer)])


def decompose_task(ctx: TaskContext, request: TaskRequest, registry: PredicateRegistry, gateway,
                   library: Optional[PromptLibrary] = None) -> DecompositionPlan:
    library = library or default_library()
    prompt = library.render(
        "decompose",
        instruction=request.instruction,
        task_id=ctx.task_id,
        context=ctx.context_text,
        predicates=registry.listing(),
    )
    messages = [ChatMessage.system(library.render("system")), ChatMessage.user(prompt)]
    response = gateway.complete(messages, stage="decompose", attempt=0)
    attempt, repaired, corrected = 0, False, False
    while True:
        try:
            plan = parse_decomposition(response, registry)
            break
        except MalformedDecomposition as e:
            if repaired:
                raise
            repaired = True
            logger.warning(f"🔧 Decomposition needs a format repair: {e}")
            messages = _with_repair(messages, response, library.render("repair_decompose", problem=str(e)))
            response = gateway.complete(messages, stage="decompose", attempt=attempt, repair=True)
        except UnknownPredicate as e:
            if corrected:
                raise
            corrected = True
            attempt += 1
            logger.warning(f"🔧 Decomposition used unknown predicates, asking once for a correction: {e}")
            correction = library.render("correct_predicates", unknown=", ".join(e.names) or str(e), predicates=registry.listing())
            messages = _with_repair(messages, response, correction)
            response = gateway.complete(messages, stage="decompose", attempt=attempt)

    logger.info(f"🗂️ Decomposed into {len(plan)} sub-task(s) over {len(plan.layers)} layer(s): {', '.join(plan.names())}")
    return plan


# ---------------------------------------------------------------- planning

def extract_xml(response: str) -> str:
    """First maximal BT element in the response, fences and prose stripped, bare attribute values quoted."""
    text = CODE_FENCE.sub("", response)
    tags = list(BT_TAG.finditer(text))
    for index, opening in enumerate(tags):
        if opening.group("close"):
            continue
        if opening.group("selfclose"):
            return _quote_bare_attributes(text[opening.start():opening.end()])
        depth = 1
        for tag in tags[index + 1:]:
            if tag.group("selfclose"):
                continue
            depth += -1 if tag.group("close") else 1
            if depth == 0:
                return _quote_bare_attributes(text[opening.start():tag.end()])
    raise NoXmlFound("the answer contains no complete <Sequence>, <Selector>, <Action> or <Condition> element")


def _quote_bare_attributes(xml: str) -> str:
    def quote(attribute: re.Match) -> str:
        if attribute.group("quoted"):
            return attribute.group(0)
        return f'{attribute.group(1)}="{attribute.group("bare")}"'

    def fix(tag: re.Match) -> str:
        attrs = ATTRIBUTE.sub(quote, tag.group("attrs"))
        return f"<{tag.group('close')}{tag.group('tag')}{attrs}{tag.group('selfclose')}>"

    return BT_TAG.sub(fix, xml)


def tree_from_response(response: str) -> BehaviorTree:
    return parse_bt(extract_xml(response))


def generate_tree(messages: List[ChatMessage], gateway, stage: str, attempt: int, subtask: str,
                  library: Optional[PromptLibrary] = None) -> BehaviorTree:
    """One generation with at most one format re-prompt; parse failures surface after the repair."""
    library = library or default_library()
    response = gateway.complete(messages, stage=stage, attempt=attempt, subtask=subtask)
    try:
        return tree_from_response(response)
    except (PlanGenerationError, BTParseError) as e:
        logger.warning(f"🔧 {stage} answer for {subtask} needs a format repair: {e}")
        messages = _with_repair(messages, response, library.render("repair_tree", problem=str(e)))
    response = gateway.complete(messages, stage=stage, attempt=attempt, subtask=subtask, repair=True)
    return tree_from_response(response)


def subtask_slots(request: TaskRequest, ctx: TaskContext, subtask: SubTask, completed: Sequence[SubTask],
                  constraints: PlanningConstraints) -> Dict[str, str]:
    return {
        "instruction": request.instruction,
        "task_id": ctx.task_id,
        "context": ctx.context_text,
        "subtask": subtask.name,
        "condition": subtask.condition.render(),
        "completed": ", ".join(s.summary() for s in completed) or "none",
        "actions": constraints.action_listing(),
        "conditions": constraints.registry.listing(),
        "objects": constraints.object_listing(),
        "reminder": constraints.reminder,
        "knowledge": constraints.knowledge,
    }


def plan_subtask_bt(subtask: SubTask, ctx: TaskContext, completed: Sequence[SubTask],
                    constraints: PlanningConstraints, gateway, request: TaskRequest, attempt: int = 0,
                    library: Optional[PromptLibrary] = None) -> BehaviorTree:
    library = library or default_library()
    prompt = library.render("plan", **subtask_slots(request, ctx, subtask, completed, constraints))
    messages = [ChatMessage.system(library.render("system")), ChatMessage.user(prompt)]
    tree = generate_tree(messages, gateway, "plan", attempt, subtask.name, library)
    logger.info(f"🌳 Planned {subtask.name}: {len(tree)} node(s), {len(tree.actions())} action(s)")
    return tree
