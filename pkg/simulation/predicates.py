"""
General Predicates: the fixed registry shared by the simulator and the planner.

The registry is built once at import time and never changes at runtime, so it
carries no task-specific knowledge.
"""

import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import List, Mapping, Optional, Tuple, Union

LiteralValue = Union[bool, str]

LITERAL_PATTERN = re.compile(
    r"^\s*(?P<predicate>[A-Za-z_][A-Za-z0-9_]*)\s*\((?P<args>[^)]*)\)\s*(?:=\s*(?P<value>[^\s]+))?\s*$"
)


class UnknownPredicate(LookupError):
    def __init__(self, message: str, names: Tuple[str, ...] = ()):
        super().__init__(message)
        self.names = tuple(names)


@dataclass(frozen=True)
class PredicateSpec:
    name: str
    min_arity: int
    max_arity: int
    description: str

    def accepts(self, arity: int) -> bool:
        return self.min_arity <= arity <= self.max_arity

    def signature(self) -> str:
        params = ["object"] if self.max_arity == 1 else ["object", "other"]
        if self.min_arity != self.max_arity:
            params[-1] = f"[{params[-1]}]"
        return f"{self.name}({', '.join(params)})"


@dataclass(frozen=True)
class AliasRule:
    canonical: str
    # Evaluate on the device paired with the argument instead of the argument itself.
    via_pairing: bool = False


@dataclass(frozen=True)
class GoalLiteral:
    predicate: str
    args: Tuple[str, ...]
    expected: LiteralValue = True

    def render(self) -> str:
        value = str(self.expected).lower() if isinstance(self.expected, bool) else self.expected
        return f"{self.predicate}({', '.join(self.args)}) = {value}"


def parse_value(token: Optional[str]) -> LiteralValue:
    if token is None:
        return True
    lowered = token.strip().lower()
    if lowered in ("true", "1"):
        return True
    if lowered in ("false", "0"):
        return False
    return token.strip()


def parse_literal(text: str) -> GoalLiteral:
    """Parse `Pred(a, b)=value`; the value defaults to true."""
    match = LITERAL_PATTERN.match(text)
    if not match:
        raise ValueError(f"Not a predicate literal: {text!r}")
    args = tuple(arg.strip() for arg in match.group("args").split(",") if arg.strip())
    return GoalLiteral(match.group("predicate"), args, parse_value(match.group("value")))


class PredicateRegistry:
    def __init__(self, predicates: List[PredicateSpec], aliases: Mapping[str, AliasRule]):
        self._predicates = MappingProxyType({spec.name: spec for spec in predicates})
        for alias, rule in aliases.items():
            if rule.canonical not in self._predicates:
                raise ValueError(f"Alias {alias} points to unknown predicate {rule.canonical}")
        self._aliases = MappingProxyType(dict(aliases))

    @property
    def predicates(self) -> Mapping[str, PredicateSpec]:
        return self._predicates

    @property
    def aliases(self) -> Mapping[str, AliasRule]:
        return self._aliases

    def resolve(self, name: str) -> AliasRule:
        if name in self._predicates:
            return AliasRule(canonical=name)
        if name in self._aliases:
            return self._aliases[name]
        raise UnknownPredicate(
            f"Unknown predicate '{name}'. Known predicates: {', '.join(self._predicates)}"
        )

    def is_known(self, name: str) -> bool:
        return name in self._predicates or name in self._aliases

    def listing(self) -> str:
        """Text block listing the canonical predicates, used verbatim in prompts."""
        return "\n".join(f"- {spec.signature()}: {spec.description}" for spec in self._predicates.values())


GENERAL_PREDICATES = [
    PredicateSpec("isVisible", 1, 1, "the object is in the robot's current field of view"),
    PredicateSpec("isClose", 1, 1, "the object is within the robot's reaching distance"),
    PredicateSpec("isOpen", 1, 1, "the object is open"),
    PredicateSpec("isToggledOn", 1, 1, "the device is switched on"),
    PredicateSpec("isOnTop", 2, 2, "the object rests on top of the other object"),
    PredicateSpec("isContainedIn", 2, 2, "the object is inside the other object"),
    PredicateSpec("isFilledWith", 1, 2, "the container is filled (value names the substance, or pass it as second argument)"),
    PredicateSpec("isHolding", 1, 1, "the robot is holding the object"),
]

PREDICATE_ALIASES = {
    "On": AliasRule("isOnTop"),
    "isOn": AliasRule("isOnTop"),
    "In": AliasRule("isContainedIn"),
    "Inside": AliasRule("isContainedIn"),
    "FilledWith": AliasRule("isFilledWith"),
    "Filled": AliasRule("isFilledWith"),
    "Holding": AliasRule("isHolding"),
    "visible": AliasRule("isVisible"),
    "Visible": AliasRule("isVisible"),
    "Open": AliasRule("isOpen"),
    "ToggledOn": AliasRule("isToggledOn"),
    "isOnState": AliasRule("isToggledOn"),
    "FaucetOn": AliasRule("isToggledOn", via_pairing=True),
}

DEFAULT_REGISTRY = PredicateRegistry(GENERAL_PREDICATES, PREDICATE_ALIASES)
