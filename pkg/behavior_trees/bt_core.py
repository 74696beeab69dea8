"""
XML behavior trees: parsing, canonical serialization and ticking.

Vocabulary is fixed to four tags. Composites (Sequence, Selector) order the
execution flow, leaves (Action, Condition) talk to an effector. An effector
reports faults as GeneralErrorReport values; the first one aborts the tick.
Ticking builds a fresh py_trees tree per call (memory-less composites).
"""

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Protocol, Tuple, Union
from xml.sax.saxutils import escape

import py_trees

from simulation.general_errors import GeneralErrorReport

logger = logging.getLogger(__name__)

INDENT = "    "
BOOLEAN_TOKENS = {"1": True, "true": True, "0": False, "false": False}
# Whitespace other than spaces would be normalized away by any XML parser.
ATTRIBUTE_ENTITIES = {"\"": "&quot;", "\n": "&#10;", "\r": "&#13;", "\t": "&#9;"}


class NodeKind(str, Enum):
    SEQUENCE = "Sequence"
    SELECTOR = "Selector"
    ACTION = "Action"
    CONDITION = "Condition"

    @property
    def is_composite(self) -> bool:
        return self in (NodeKind.SEQUENCE, NodeKind.SELECTOR)


ALLOWED_TAGS = tuple(kind.value for kind in NodeKind)
REQUIRED_ATTRIBUTES = {
    NodeKind.ACTION: ("name",),
    NodeKind.CONDITION: ("name", "target", "value"),
}


class Status(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    # Reserved for asynchronous effectors; the simulator never produces it.
    RUNNING = "Running"


class BTParseError(ValueError):
    """Base class for every behavior tree parse failure."""


class MalformedXml(BTParseError):
    pass


class UnsupportedNode(BTParseError):
    pass


class EmptyComposite(BTParseError):
    pass


class MissingAttribute(BTParseError):
    pass


class InvalidStructure(BTParseError):
    pass


@dataclass(frozen=True)
class BTNode:
    kind: NodeKind
    attributes: Tuple[Tuple[str, str], ...] = ()
    children: Tuple["BTNode", ...] = ()

    @property
    def attrs(self) -> Dict[str, str]:
        return dict(self.attributes)

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.attrs.get(key, default)

    def iter_nodes(self) -> Iterator["BTNode"]:
        yield self
        for child in self.children:
            yield from child.iter_nodes()

    def describe(self) -> str:
        attrs = ", ".join(f"{k}={v}" for k, v in self.attributes)
        return f"{self.kind.value}({attrs})"


@dataclass(frozen=True)
class BehaviorTree:
    root: BTNode
    # Equality is structural; the verbatim text is kept for prompts and logs only.
    source_text: str = field(default="", compare=False)

    def iter_nodes(self) -> Iterator[BTNode]:
        return self.root.iter_nodes()

    def actions(self) -> List[BTNode]:
        return [node for node in self.iter_nodes() if node.kind is NodeKind.ACTION]

    def __len__(self):
        return sum(1 for _ in self.iter_nodes())


@dataclass(frozen=True)
class TickOutcome:
    status: Optional[Status] = None
    report: Optional[GeneralErrorReport] = None

    @classmethod
    def completed(cls, status: Status) -> "TickOutcome":
        return cls(status=status)

    @classmethod
    def interrupted(cls, report: GeneralErrorReport) -> "TickOutcome":
        return cls(report=report)

    @property
    def is_interrupted(self) -> bool:
        return self.report is not None

    def __str__(self):
        if self.is_interrupted:
            return f"Interrupted({self.report.kind.value})"
        return f"Completed({self.status.value})"


ActionResult = Union[Status, GeneralErrorReport]
ConditionResult = Union[bool, GeneralErrorReport]


class Effector(Protocol):
    def run_action(self, attributes: Dict[str, str]) -> ActionResult:
        ...

    def check_condition(self, name: str, target: str, value: str) -> ConditionResult:
        ...


def parse_condition_value(value: str) -> Union[bool, str]:
    """Boolean tokens become bools, anything else stays a text literal."""
    token = value.strip()
    return BOOLEAN_TOKENS.get(token.lower(), token)


# ---------------------------------------------------------------- parsing

def _build_node(element: ET.Element) -> BTNode:
    if element.tag not in ALLOWED_TAGS:
        raise UnsupportedNode(
            f"Unsupported node <{element.tag}>; allowed tags are: {', '.join(ALLOWED_TAGS)}"
        )
    kind = NodeKind(element.tag)
    attributes = tuple((key, value) for key, value in element.attrib.items())
    children = [_build_node(child) for child in element]

    if kind.is_composite:
        if not children:
            raise EmptyComposite(f"<{kind.value}> must have at least one child")
        extra = [key for key, _ in attributes if key != "name"]
        if extra:
            raise InvalidStructure(
                f"<{kind.value}> only accepts an optional name attribute, got: {', '.join(extra)}"
            )
    else:
        if children:
            raise InvalidStructure(f"<{kind.value}> is a leaf and cannot have children")
        present = dict(attributes)
        missing = [key for key in REQUIRED_ATTRIBUTES[kind] if not present.get(key, "").strip()]
        if missing:
            raise MissingAttribute(f"<{kind.value}> is missing required attribute(s): {', '.join(missing)}")

    return BTNode(kind=kind, attributes=attributes, children=tuple(children))


def parse_bt(xml: str) -> BehaviorTree:
    """Parse exactly one well-formed BT element."""
    try:
        element = ET.fromstring(xml.strip())
    except ET.ParseError as e:
        raise MalformedXml(f"Behavior tree XML is not well-formed: {e}") from e
    return BehaviorTree(root=_build_node(element), source_text=xml)


# ---------------------------------------------------------- serialization

def _quote(value: str) -> str:
    return escape(value, ATTRIBUTE_ENTITIES)


def _format_attributes(attributes: Tuple[Tuple[str, str], ...]) -> str:
    return "".join(f' {key}="{_quote(value)}"' for key, value in attributes)


def _serialize_node(node: BTNode, depth: int, lines: List[str]):
    pad = INDENT * depth
    attrs = _format_attributes(node.attributes)
    if not node.children:
        lines.append(f"{pad}<{node.kind.value}{attrs}/>")
        return
    lines.append(f"{pad}<{node.kind.value}{attrs}>")
    for child in node.children:
        _serialize_node(child, depth + 1, lines)
    lines.append(f"{pad}</{node.kind.value}>")


def serialize_bt(tree: BehaviorTree) -> str:
    """Canonical XML: 4-space indentation, attributes in received order, self-closing leaves."""
    lines: List[str] = []
    _serialize_node(tree.root, 0, lines)
    return "\n".join(lines)


# ---------------------------------------------------------------- ticking


PY_TREES_STATUS = {
    Status.SUCCESS: py_trees.common.Status.SUCCESS,
    Status.FAILURE: py_trees.common.Status.FAILURE,
    Status.RUNNING: py_trees.common.Status.RUNNING,
}
FROM_PY_TREES = {value: key for key, value in PY_TREES_STATUS.items()}


class GeneralErrorInterrupt(Exception):
    """Unwinds a py_trees tick from the leaf that hit a General Error."""

    def __init__(self, report: GeneralErrorReport):
        super().__init__(str(report))
        self.report = report


class EffectorAction(py_trees.behaviour.Behaviour):
    def __init__(self, node: BTNode, effector: Effector):
        super().__init__(name=node.describe())
        self.node = node
        self.effector = effector

    def update(self) -> py_trees.common.Status:
        result = self.effector.run_action(self.node.attrs)
        if isinstance(result, GeneralErrorReport):
            raise GeneralErrorInterrupt(result)
        return PY_TREES_STATUS[result]


class EffectorCondition(py_trees.behaviour.Behaviour):
    def __init__(self, node: BTNode, effector: Effector):
        super().__init__(name=node.describe())
        self.node = node
        self.effector = effector

    def update(self) -> py_trees.common.Status:
        attrs = self.node.attrs
        result = self.effector.check_condition(attrs["name"], attrs["target"], attrs["value"])
        if isinstance(result, GeneralErrorReport):
            raise GeneralErrorInterrupt(result)
        return py_trees.common.Status.SUCCESS if result else py_trees.common.Status.FAILURE


def create_behaviour(node: BTNode, effector: Effector) -> py_trees.behaviour.Behaviour:
    name = node.describe()
    if node.kind is NodeKind.SEQUENCE:
        return py_trees.composites.Sequence(name=name, memory=False)
    if node.kind is NodeKind.SELECTOR:
        return py_trees.composites.Selector(name=name, memory=False)
    if node.kind is NodeKind.ACTION:
        return EffectorAction(node, effector)
    return EffectorCondition(node, effector)


def _build_subtree(parent: py_trees.behaviour.Behaviour, node: BTNode, effector: Effector):
    for child in node.children:
        behaviour = create_behaviour(child, effector)
        parent.add_child(behaviour)
        _build_subtree(behaviour, child, effector)


def build_behaviour_tree(tree: BehaviorTree, effector: Effector) -> py_trees.trees.BehaviourTree:
    """Fresh py_trees tree wired to the effector; nothing is shared between builds."""
    root = create_behaviour(tree.root, effector)
    _build_subtree(root, tree.root, effector)
    return py_trees.trees.BehaviourTree(root)


def tick(tree: BehaviorTree, effector: Effector) -> TickOutcome:
    """One depth-first pass; the first General Error aborts the whole tick."""
    behaviour_tree = build_behaviour_tree(tree, effector)
    try:
        behaviour_tree.tick()
    except GeneralErrorInterrupt as interrupt:
        logger.info(f"⛔ Tick interrupted: {interrupt.report}")
        return TickOutcome.interrupted(interrupt.report)
    status = FROM_PY_TREES[behaviour_tree.root.status]
    logger.debug(f"Tick completed with {status.value}")
    return TickOutcome.completed(status)
