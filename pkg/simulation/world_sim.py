"""
Deterministic desk-scale household world.

Holds object and agent state on an integer grid, executes the action
vocabulary with General Error detection, evaluates General Predicates against
ground truth, renders one text view per rotation increment and checks goal
literals for the oracle.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple, Union

from simulation.general_errors import GeneralErrorKind, GeneralErrorReport
from simulation.predicates import (
    DEFAULT_REGISTRY,
    GoalLiteral,
    LiteralValue,
    PredicateRegistry,
    UnknownPredicate,
    parse_value,
)

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

CONTAINER_CLASSES = frozenset({"mug", "cup", "bowl", "pot", "kettle", "glass", "bottle"})
IN_RECEPTACLE_CLASSES = frozenset({"fridge", "sink", "cabinet", "drawer", "microwave", "box", "bin"})
FLAG_NAMES = ("pickupable", "openable", "is_open", "toggleable", "is_on", "receptacle", "sealed_container")
ORIENTATIONS = (0, 90, 180, 270)
NEAR_BAND = 3


class Relation(str, Enum):
    IN = "in"
    ON = "on"


class FailureReason(str, Enum):
    HAND_OCCUPIED = "HandOccupied"
    HAND_EMPTY = "HandEmpty"
    NOT_PICKUPABLE = "NotPickupable"
    NOT_RECEPTACLE = "NotReceptacle"
    RECEPTACLE_CLOSED = "ReceptacleClosed"
    INVALID_PLACEMENT = "InvalidPlacement"
    NOT_OPENABLE = "NotOpenable"
    ALREADY_OPEN = "AlreadyOpen"
    ALREADY_CLOSED = "AlreadyClosed"
    NOT_TOGGLEABLE = "NotToggleable"
    ALREADY_ON = "AlreadyOn"
    ALREADY_OFF = "AlreadyOff"
    TARGET_NOT_FOUND = "TargetNotFound"
    UNKNOWN_ACTION = "UnknownAction"


class WorldError(Exception):
    """Base class for simulator errors that are not execution faults."""


class SceneError(WorldError):
    def __init__(self, message: str, line: Optional[int] = None, field_name: Optional[str] = None):
        self.line = line
        self.field_name = field_name
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field_name:
            location.append(f"field '{field_name}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


# ------------------------------------------------------------------ state

@dataclass
class ObjectState:
    id: str
    object_class: str
    pos: Optional[Cell] = None
    pickupable: bool = False
    openable: bool = False
    is_open: bool = False
    toggleable: bool = False
    is_on: bool = False
    receptacle: bool = False
    sealed_container: bool = False
    fill: Optional[str] = None
    parent: Optional[Tuple[Relation, str]] = None
    paired: Optional[str] = None


@dataclass
class AgentState:
    pos: Cell = (0, 0)
    orientation: int = 0
    holding: Optional[str] = None


@dataclass(frozen=True)
class SensorConfig:
    rotation_increment: int = 90
    fov: int = 90
    view_distance: int = 8
    reach_distance: int = 1

    def __post_init__(self):
        if self.rotation_increment <= 0 or 360 % self.rotation_increment:
            raise ValueError(f"360 must be divisible by rotation_increment, got {self.rotation_increment}")
        if self.rotation_increment % 90:
            raise ValueError("rotation_increment must be a multiple of 90 degrees")
        if not 0 < self.fov < 180:
            raise ValueError(f"fov must be in (0, 180), got {self.fov}")
        if self.view_distance < 1 or self.reach_distance < 1:
            raise ValueError("view_distance and reach_distance must be positive")

    @property
    def num_views(self) -> int:
        return 360 // self.rotation_increment


@dataclass
class WorldState:
    objects: Dict[str, ObjectState]
    agent: AgentState
    sensor: SensorConfig = field(default_factory=SensorConfig)
    # Seconds every action sleeps; instrumentation only.
    action_delay: float = 0.0

    def copy(self) -> "WorldState":
        return WorldState(
            objects={oid: replace(obj) for oid, obj in self.objects.items()},
            agent=replace(self.agent),
            sensor=self.sensor,
            action_delay=self.action_delay,
        )

    def state_key(self) -> tuple:
        """Hashable identity of the observable state (positions of moved objects are derived)."""
        objects = tuple(
            (
                obj.id,
                obj.pos if obj.parent is None and self.agent.holding != obj.id else None,
                obj.is_open,
                obj.is_on,
                obj.fill,
                obj.parent,
            )
            for obj in self.objects.values()
        )
        return (self.agent.pos, self.agent.orientation, self.agent.holding, objects)

    def resolve(self, name: str) -> Optional[str]:
        """Exact id first, then the first object of that class in scene order."""
        name = (name or "").strip()
        if not name:
            return None
        if name in self.objects:
            return name
        lowered = name.lower()
        for oid, obj in self.objects.items():
            if oid.lower() == lowered:
                return oid
        for oid, obj in self.objects.items():
            if obj.object_class.lower() == lowered:
                return oid
        return None

    def position_of(self, oid: str) -> Cell:
        if self.agent.holding == oid:
            return self.agent.pos
        obj = self.objects[oid]
        if obj.parent is not None:
            return self.position_of(obj.parent[1])
        return obj.pos

    def distance_to(self, oid: str) -> int:
        x, y = self.position_of(oid)
        ax, ay = self.agent.pos
        return max(abs(x - ax), abs(y - ay))

    def is_ancestor(self, candidate: str, oid: str) -> bool:
        parent = self.objects[oid].parent
        while parent is not None:
            if parent[1] == candidate:
                return True
            parent = self.objects[parent[1]].parent
        return False


# ------------------------------------------------------------ scene files

def _parse_cell(text: str, line: int, field_name: str) -> Cell:
    try:
        x, y = (int(part) for part in text.split(","))
    except ValueError:
        raise SceneError(f"expected '<x>,<y>' integers, got '{text}'", line, field_name)
    return (x, y)


def _parse_object(tokens: List[str], line: int) -> ObjectState:
    if len(tokens) < 2 or "=" in tokens[1]:
        raise SceneError("object record needs an id", line, "id")
    obj = ObjectState(id=tokens[1], object_class="")
    for token in tokens[2:]:
        if "=" not in token:
            if token not in FLAG_NAMES:
                raise SceneError(f"unknown flag '{token}'", line, token)
            setattr(obj, token, True)
            continue
        key, value = token.split("=", 1)
        if key == "class":
            obj.object_class = value
        elif key == "pos":
            obj.pos = _parse_cell(value, line, key)
        elif key == "fill":
            obj.fill = value
        elif key == "paired":
            obj.paired = value
        elif key == "parent":
            relation, _, parent_id = value.partition(":")
            if relation not in (Relation.IN.value, Relation.ON.value) or not parent_id:
                raise SceneError(f"expected 'in:<id>' or 'on:<id>', got '{value}'", line, key)
            obj.parent = (Relation(relation), parent_id)
        else:
            raise SceneError(f"unknown field '{key}'", line, key)
    if not obj.object_class:
        raise SceneError(f"object '{obj.id}' has no class", line, "class")
    return obj


def _parse_agent(tokens: List[str], line: int) -> Tuple[AgentState, Optional[str]]:
    agent = AgentState()
    holding = None
    seen_pos = False
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep:
            raise SceneError(f"unexpected token '{token}'", line)
        if key == "pos":
            agent.pos = _parse_cell(value, line, key)
            seen_pos = True
        elif key == "facing":
            try:
                agent.orientation = int(value)
            except ValueError:
                raise SceneError(f"facing must be an integer, got '{value}'", line, key)
            if agent.orientation not in ORIENTATIONS:
                raise SceneError(f"facing must be one of {ORIENTATIONS}", line, key)
        elif key == "holding":
            holding = value
        else:
            raise SceneError(f"unknown field '{key}'", line, key)
    if not seen_pos:
        raise SceneError("agent record needs pos", line, "pos")
    return agent, holding


def _validate_scene(objects: Dict[str, ObjectState], lines: Dict[str, int], agent: AgentState):
    for oid, obj in objects.items():
        line = lines[oid]
        if obj.is_open and not obj.openable:
            raise SceneError(f"'{oid}' is_open requires openable", line, "is_open")
        if obj.is_on and not obj.toggleable:
            raise SceneError(f"'{oid}' is_on requires toggleable", line, "is_on")
        if obj.fill and obj.object_class not in CONTAINER_CLASSES:
            raise SceneError(f"'{oid}' of class {obj.object_class} cannot hold a fill", line, "fill")
        if obj.paired is not None and obj.paired not in objects:
            raise SceneError(f"'{oid}' is paired with unknown object '{obj.paired}'", line, "paired")
        if obj.parent is not None:
            relation, parent_id = obj.parent
            if parent_id not in objects:
                raise SceneError(f"'{oid}' has unknown parent '{parent_id}'", line, "parent")
            if relation is Relation.IN and not objects[parent_id].receptacle:
                raise SceneError(f"'{parent_id}' is not a receptacle, cannot contain '{oid}'", line, "parent")
        elif obj.pos is None and agent.holding != oid:
            raise SceneError(f"'{oid}' needs pos or parent", line, "pos")

    for oid in objects:
        seen = {oid}
        parent = objects[oid].parent
        while parent is not None:
            if parent[1] in seen:
                raise SceneError(f"containment cycle through '{oid}'", lines[oid], "parent")
            seen.add(parent[1])
            parent = objects[parent[1]].parent

    if agent.holding is not None:
        held = objects.get(agent.holding)
        if held is None:
            raise SceneError(f"agent holds unknown object '{agent.holding}'", field_name="holding")
        if held.parent is not None:
            raise SceneError(f"held object '{agent.holding}' cannot have a parent", field_name="holding")


def load_scene(scene_text: str, sensor: Optional[SensorConfig] = None, action_delay: float = 0.0) -> WorldState:
    """Parse and validate a scene; every invariant violation is a SceneError."""
    objects: Dict[str, ObjectState] = {}
    lines: Dict[str, int] = {}
    agent = None
    holding = None

    for lineno, raw in enumerate(scene_text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "object":
            obj = _parse_object(tokens, lineno)
            if obj.id in objects:
                raise SceneError(f"duplicate object id '{obj.id}'", lineno, "id")
            objects[obj.id] = obj
            lines[obj.id] = lineno
        elif tokens[0] == "agent":
            if agent is not None:
                raise SceneError("more than one agent record", lineno)
            agent, holding = _parse_agent(tokens, lineno)
        else:
            raise SceneError(f"unknown record '{tokens[0]}'", lineno)

    if agent is None:
        raise SceneError("scene has no agent record")
    agent.holding = holding
    _validate_scene(objects, lines, agent)
    return WorldState(objects=objects, agent=agent, sensor=sensor or SensorConfig(), action_delay=action_delay)


def load_scene_file(path: Union[str, Path], sensor: Optional[SensorConfig] = None,
                    action_delay: float = 0.0) -> WorldState:
    return load_scene(Path(path).read_text(encoding="utf-8"), sensor=sensor, action_delay=action_delay)


# -------------------------------------------------------------- geometry

def _agent_frame(dx: int, dy: int, orientation: int) -> Tuple[int, int]:
    """(forward, side) components; side is positive to the agent's left."""
    if orientation == 0:
        return dx, dy
    if orientation == 90:
        return dy, -dx
    if orientation == 180:
        return -dx, -dy
    return -dy, dx


def _facing_towards(dx: int, dy: int, current: int) -> int:
    if dx == 0 and dy == 0:
        return current
    if abs(dx) >= abs(dy):
        return 0 if dx > 0 else 180
    return 90 if dy > 0 else 270


def _sign(value: int) -> int:
    return (value > 0) - (value < 0)


def _sealed_away(world: WorldState, oid: str) -> bool:
    parent = world.objects[oid].parent
    while parent is not None:
        relation, parent_id = parent
        container = world.objects[parent_id]
        if relation is Relation.IN and container.sealed_container and not container.is_open:
            return True
        parent = container.parent
    return False


def _in_view(world: WorldState, oid: str) -> bool:
    if world.agent.holding == oid:
        return True
    if _sealed_away(world, oid):
        return False
    x, y = world.position_of(oid)
    ax, ay = world.agent.pos
    dx, dy = x - ax, y - ay
    if max(abs(dx), abs(dy)) > world.sensor.view_distance:
        return False
    if dx == 0 and dy == 0:
        return True
    forward, side = _agent_frame(dx, dy, world.agent.orientation)
    half_width = math.tan(math.radians(world.sensor.fov / 2))
    return forward > 0 and abs(side) <= forward * half_width + 1e-9


def visible_objects(world: WorldState) -> Set[str]:
    return {oid for oid in world.objects if _in_view(world, oid)}


# --------------------------------------------------------------- actions

@dataclass(frozen=True)
class ActionSuccess:
    detail: str = ""

    def __str__(self):
        return "Success"


@dataclass(frozen=True)
class ActionFailure:
    reason: FailureReason
    detail: str = ""

    def __str__(self):
        return f"Failure({self.reason.value})"


ActionOutcome = Union[ActionSuccess, ActionFailure, GeneralErrorReport]


@dataclass(frozen=True)
class ActionSpec:
    name: str
    signature: str
    description: str
    physical: bool


ACTION_VOCABULARY = {
    spec.name: spec
    for spec in (
        ActionSpec("Navigate_To", "Navigate_To(target)", "move next to a visible object and face it", False),
        ActionSpec("ScanRoom", "ScanRoom(target)", "rotate in place until the target is visible (target optional)", False),
        ActionSpec("Grab", "Grab(target)", "pick up a visible object within reach; the hand must be empty", True),
        ActionSpec("Place", "Place(target)", "put the held object in or on the target receptacle", True),
        ActionSpec("Open", "Open(target)", "open an openable object within reach", True),
        ActionSpec("Close", "Close(target)", "close an openable object within reach", True),
        ActionSpec("ToggleOn", "ToggleOn(target)", "switch on a device within reach", True),
        ActionSpec("ToggleOff", "ToggleOff(target)", "switch off a device within reach", True),
    )
}


@dataclass(frozen=True)
class DeviceRule:
    device_class: str
    turned_on: bool
    description: str
    effect: Callable[[WorldState, ObjectState], None]


def _fill_paired_sink(world: WorldState, device: ObjectState):
    if device.paired is None:
        return
    for obj in world.objects.values():
        if obj.parent == (Relation.IN, device.paired) and obj.object_class in CONTAINER_CLASSES:
            obj.fill = "water"


def _brew_into_containers(world: WorldState, device: ObjectState):
    for obj in world.objects.values():
        if obj.parent is not None and obj.parent[1] == device.id and obj.object_class in CONTAINER_CLASSES:
            obj.fill = "coffee"


DEVICE_RULES = (
    DeviceRule("faucet", True, "fills containers inside the paired sink with water", _fill_paired_sink),
    DeviceRule("coffee_machine", True, "fills containers in or on the machine with coffee", _brew_into_containers),
)


def _fire_device_rules(world: WorldState, device: ObjectState):
    for rule in DEVICE_RULES:
        if rule.device_class == device.object_class and rule.turned_on == device.is_on:
            logger.debug(f"Device rule fired on {device.id}: {rule.description}")
            rule.effect(world, device)


def _check_target(world: WorldState, action: str, target: str, need_visible: bool,
                  need_close: bool) -> Union[str, GeneralErrorReport]:
    """General Error precedence: doesNotExist, then notVisible, then notClose."""
    oid = world.resolve(target)
    if oid is None:
        return GeneralErrorReport.build(GeneralErrorKind.DOES_NOT_EXIST, action, target)
    if need_visible and not _in_view(world, oid):
        return GeneralErrorReport.build(GeneralErrorKind.NOT_VISIBLE, action, target)
    if need_close and world.distance_to(oid) > world.sensor.reach_distance:
        return GeneralErrorReport.build(GeneralErrorKind.NOT_CLOSE, action, target)
    return oid


def _navigate_to(world: WorldState, target: str) -> ActionOutcome:
    oid = _check_target(world, "Navigate_To", target, need_visible=True, need_close=False)
    if isinstance(oid, GeneralErrorReport):
        return oid
    tx, ty = world.position_of(oid)
    ax, ay = world.agent.pos
    if max(abs(tx - ax), abs(ty - ay)) > world.sensor.reach_distance:
        ax, ay = tx - _sign(tx - ax), ty - _sign(ty - ay)
        world.agent.pos = (ax, ay)
    world.agent.orientation = _facing_towards(tx - ax, ty - ay, world.agent.orientation)
    return ActionSuccess(f"at {world.agent.pos} facing {world.agent.orientation}")


def _scan_room(world: WorldState, target: str) -> ActionOutcome:
    oid = None
    if target:
        oid = _check_target(world, "ScanRoom", target, need_visible=False, need_close=False)
        if isinstance(oid, GeneralErrorReport):
            return oid
    start = world.agent.orientation
    increment = world.sensor.rotation_increment
    for step in range(world.sensor.num_views):
        world.agent.orientation = (start + step * increment) % 360
        if oid is not None and _in_view(world, oid):
            return ActionSuccess(f"found {oid} facing {world.agent.orientation}")
    world.agent.orientation = start
    if oid is None:
        return ActionSuccess("completed a full rotation")
    return ActionFailure(FailureReason.TARGET_NOT_FOUND, f"{target} not seen in a full rotation")


def _grab(world: WorldState, target: str) -> ActionOutcome:
    oid = _check_target(world, "Grab", target, need_visible=True, need_close=True)
    if isinstance(oid, GeneralErrorReport):
        return oid
    if world.agent.holding is not None:
        return ActionFailure(FailureReason.HAND_OCCUPIED, f"already holding {world.agent.holding}")
    obj = world.objects[oid]
    if not obj.pickupable:
        return ActionFailure(FailureReason.NOT_PICKUPABLE, oid)
    obj.parent = None
    world.agent.holding = oid
    return ActionSuccess(f"holding {oid}")


def _place(world: WorldState, target: str) -> ActionOutcome:
    rid = _check_target(world, "Place", target, need_visible=True, need_close=True)
    if isinstance(rid, GeneralErrorReport):
        return rid
    held = world.agent.holding
    if held is None:
        return ActionFailure(FailureReason.HAND_EMPTY)
    receptacle = world.objects[rid]
    if not receptacle.receptacle:
        return ActionFailure(FailureReason.NOT_RECEPTACLE, rid)
    relation = Relation.IN if receptacle.object_class in IN_RECEPTACLE_CLASSES else Relation.ON
    if relation is Relation.IN and receptacle.openable and not receptacle.is_open:
        return ActionFailure(FailureReason.RECEPTACLE_CLOSED, rid)
    if rid == held or world.is_ancestor(held, rid):
        return ActionFailure(FailureReason.INVALID_PLACEMENT, f"{held} cannot go {relation.value} {rid}")
    world.objects[held].parent = (relation, rid)
    world.agent.holding = None
    return ActionSuccess(f"{held} {relation.value} {rid}")


def _set_open(opened: bool):
    action = "Open" if opened else "Close"

    def handler(world: WorldState, target: str) -> ActionOutcome:
        oid = _check_target(world, action, target, need_visible=True, need_close=True)
        if isinstance(oid, GeneralErrorReport):
            return oid
        obj = world.objects[oid]
        if not obj.openable:
            return ActionFailure(FailureReason.NOT_OPENABLE, oid)
        if obj.is_open == opened:
            return ActionFailure(FailureReason.ALREADY_OPEN if opened else FailureReason.ALREADY_CLOSED, oid)
        obj.is_open = opened
        return ActionSuccess(f"{oid} {'open' if opened else 'closed'}")

    return handler


def _set_power(turned_on: bool):
    action = "ToggleOn" if turned_on else "ToggleOff"

    def handler(world: WorldState, target: str) -> ActionOutcome:
        oid = _check_target(world, action, target, need_visible=True, need_close=True)
        if isinstance(oid, GeneralErrorReport):
            return oid
        obj = world.objects[oid]
        if not obj.toggleable:
            return ActionFailure(FailureReason.NOT_TOGGLEABLE, oid)
        if obj.is_on == turned_on:
            return ActionFailure(FailureReason.ALREADY_ON if turned_on else FailureReason.ALREADY_OFF, oid)
        obj.is_on = turned_on
        _fire_device_rules(world, obj)
        return ActionSuccess(f"{oid} {'on' if turned_on else 'off'}")

    return handler


_ACTION_HANDLERS: Dict[str, Callable[[WorldState, str], ActionOutcome]] = {
    "Navigate_To": _navigate_to,
    "ScanRoom": _scan_room,
    "Grab": _grab,
    "Place": _place,
    "Open": _set_open(True),
    "Close": _set_open(False),
    "ToggleOn": _set_power(True),
    "ToggleOff": _set_power(False),
}
_HANDLERS_BY_LOWER = {name.lower(): handler for name, handler in _ACTION_HANDLERS.items()}


def execute_action(world: WorldState, name: str, attributes: Optional[Dict[str, str]] = None) -> ActionOutcome:
    """Run one action; the world only changes when the result is ActionSuccess."""
    attributes = attributes or {}
    if world.action_delay:
        time.sleep(world.action_delay)
    handler = _HANDLERS_BY_LOWER.get((name or "").lower())
    if handler is None:
        return ActionFailure(FailureReason.UNKNOWN_ACTION, name)
    return handler(world, attributes.get("target", "").strip())


# ------------------------------------------------------------ predicates

def _paired_device(world: WorldState, oid: str) -> Optional[str]:
    for candidate, obj in world.objects.items():
        if obj.paired == oid:
            return candidate
    return oid if world.objects[oid].toggleable else None


def _contained_in(world: WorldState, oid: str, container: str) -> bool:
    parent = world.objects[oid].parent
    while parent is not None:
        relation, parent_id = parent
        if parent_id == container:
            return relation is Relation.IN
        parent = world.objects[parent_id].parent
    return False


def _matches(actual: bool, expected: LiteralValue) -> bool:
    if isinstance(expected, bool):
        return actual == expected
    return False


def eval_predicate(world: WorldState, literal: GoalLiteral, registry: PredicateRegistry = DEFAULT_REGISTRY) -> bool:
    """Ground-truth evaluation after alias resolution; unresolvable objects evaluate false."""
    rule = registry.resolve(literal.predicate)
    spec = registry.predicates[rule.canonical]
    if not spec.accepts(len(literal.args)):
        raise UnknownPredicate(
            f"{literal.predicate} takes {spec.min_arity}-{spec.max_arity} argument(s), got {len(literal.args)}"
        )
    subject = world.resolve(literal.args[0])
    if subject is not None and rule.via_pairing:
        subject = _paired_device(world, subject)
    if subject is None:
        return False
    expected = literal.expected
    obj = world.objects[subject]
    canonical = rule.canonical

    if canonical == "isFilledWith":
        if len(literal.args) == 2:
            holds = obj.fill is not None and obj.fill == literal.args[1]
            return holds == expected if isinstance(expected, bool) else holds and obj.fill == expected
        if isinstance(expected, bool):
            return (obj.fill is not None) == expected
        return obj.fill == expected

    if spec.max_arity == 2:
        other = world.resolve(literal.args[1])
        if other is None:
            return False
        if canonical == "isOnTop":
            actual = obj.parent == (Relation.ON, other)
        else:
            actual = _contained_in(world, subject, other)
        return _matches(actual, expected)

    if canonical == "isVisible":
        actual = _in_view(world, subject)
    elif canonical == "isClose":
        actual = world.distance_to(subject) <= world.sensor.reach_distance
    elif canonical == "isOpen":
        actual = obj.is_open
    elif canonical == "isToggledOn":
        actual = obj.is_on
    elif canonical == "isHolding":
        actual = world.agent.holding == subject
    else:
        raise UnknownPredicate(f"No evaluator for predicate {canonical}")
    return _matches(actual, expected)


def check_condition(world: WorldState, name: str, target: str, value: str,
                    registry: PredicateRegistry = DEFAULT_REGISTRY) -> Union[bool, GeneralErrorReport]:
    """Condition leaf evaluation with the perception rules of General Errors."""
    try:
        rule = registry.resolve(name)
    except UnknownPredicate as e:
        logger.warning(f"Condition uses unknown predicate: {e}")
        return False
    spec = registry.predicates[rule.canonical]
    args = [part.strip() for part in (target or "").split(",") if part.strip()]
    expected = parse_value(value)
    if len(args) < spec.max_arity and isinstance(expected, str) and rule.canonical != "isFilledWith":
        args.append(expected)
        expected = True
    if not args:
        return GeneralErrorReport.build(GeneralErrorKind.DOES_NOT_EXIST, name, target or "")

    object_args = args[:1] if rule.canonical == "isFilledWith" else args
    for arg in object_args:
        if world.resolve(arg) is None:
            return GeneralErrorReport.build(GeneralErrorKind.DOES_NOT_EXIST, name, arg)
    if rule.canonical != "isVisible" and not _in_view(world, world.resolve(args[0])):
        return GeneralErrorReport.build(GeneralErrorKind.NOT_VISIBLE, name, args[0])

    try:
        return eval_predicate(world, GoalLiteral(name, tuple(args), expected), registry)
    except UnknownPredicate as e:
        logger.warning(f"Condition {name}({target}) rejected: {e}")
        return False


def oracle_check(world: WorldState, goals: Iterable[GoalLiteral],
                 registry: PredicateRegistry = DEFAULT_REGISTRY) -> bool:
    """Conjunction of goal literals over ground truth; independent of the agent's pose."""
    return all(eval_predicate(world, goal, registry) for goal in goals)


# ---------------------------------------------------------------- views

def _describe(world: WorldState, oid: str) -> str:
    obj = world.objects[oid]
    label = oid if oid == obj.object_class else f"{oid} ({obj.object_class})"
    x, y = world.position_of(oid)
    ax, ay = world.agent.pos
    forward, side = _agent_frame(x - ax, y - ay, world.agent.orientation)
    if forward == 0 and side == 0:
        bearing = "here"
    elif abs(side) * 3 <= forward:
        bearing = "ahead"
    else:
        bearing = "ahead-left" if side > 0 else "ahead-right"

    distance = world.distance_to(oid)
    if distance <= world.sensor.reach_distance:
        band = "within reach"
    elif distance <= NEAR_BAND:
        band = "near"
    else:
        band = "far"

    state = []
    if obj.openable:
        state.append("open" if obj.is_open else "closed")
    if obj.toggleable:
        state.append("on" if obj.is_on else "off")
    if obj.fill:
        state.append(f"filled with {obj.fill}")
    elif obj.object_class in CONTAINER_CLASSES:
        state.append("empty")
    if obj.parent is not None:
        state.append(f"{obj.parent[0].value} {obj.parent[1]}")
    suffix = f" [{', '.join(state)}]" if state else ""
    return f"- {label}: {bearing}, {band} ({distance} cells){suffix}"


def render_views(world: WorldState) -> List[str]:
    """One text rendering per rotation increment; the starting orientation is restored."""
    start = world.agent.orientation
    count = world.sensor.num_views
    views = []
    try:
        for step in range(count):
            world.agent.orientation = (start + step * world.sensor.rotation_increment) % 360
            lines = [f"View {step + 1}/{count} facing {world.agent.orientation} degrees"]
            seen = [oid for oid in world.objects if oid != world.agent.holding and _in_view(world, oid)]
            if seen:
                lines.extend(_describe(world, oid) for oid in seen)
            else:
                lines.append("no objects visible")
            if world.agent.holding is not None:
                lines.append(f"Holding: {world.agent.holding}")
            views.append("\n".join(lines))
    finally:
        world.agent.orientation = start
    return views
