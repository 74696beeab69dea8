"""Error-driven refinement: feedback prompt construction and whole-tree replacement."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

from behavior_trees.bt_core import BehaviorTree, Status, serialize_bt
from llm_gateway.gateway import ChatMessage, EncodedBlob
from planning.planner import (
    PlanningConstraints,
    SubTask,
    TaskContext,
    TaskRequest,
    generate_tree,
    subtask_slots,
)
from planning.templates import PromptLibrary, default_library
from simulation.general_errors import GeneralErrorReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnmetCondition:
    """The tree ran to completion but the sub-task condition is still false."""

    condition_text: str
    final_status: Status

    def describe(self) -> str:
        return (
            f"The Behavior Tree finished with {self.final_status.value}, "
            f"but the completion condition {self.condition_text} evaluated false afterwards."
        )


Cause = Union[GeneralErrorReport, UnmetCondition]


def describe_cause(cause: Cause) -> str:
    if isinstance(cause, GeneralErrorReport):
        return (
            f"General Error {cause.kind.value} while running "
            f"{cause.action_name}(target={cause.target}). {cause.message}"
        )
    return cause.describe()


@dataclass(frozen=True)
class RefinementInput:
    subtask: SubTask
    failed_tree: BehaviorTree
    cause: Cause
    completed: Sequence[SubTask]
    ctx: TaskContext
    fresh_views: Sequence[str]
    request: TaskRequest
    constraints: PlanningConstraints


def build_refinement_prompt(refinement: RefinementInput, library: Optional[PromptLibrary] = None) -> List[ChatMessage]:
    library = library or default_library()
    slots = subtask_slots(
        refinement.request, refinement.ctx, refinement.subtask, refinement.completed, refinement.constraints
    )
    failed_xml = refinement.failed_tree.source_text.strip() or serialize_bt(refinement.failed_tree)
    prompt = library.render(
        "refine",
        failed_tree=failed_xml,
        cause=describe_cause(refinement.cause),
        view_count=str(len(refinement.fresh_views)),
        **slots,
    )
    return [
        ChatMessage.system(library.render("system")),
        ChatMessage.user(prompt, [EncodedBlob.encode(view) for view in refinement.fresh_views]),
    ]


def refine_bt(refinement: RefinementInput, gateway, attempt: int,
              library: Optional[PromptLibrary] = None) -> BehaviorTree:
    """Ask for a corrected whole tree; the caller enforces the refinement budget."""
    messages = build_refinement_prompt(refinement, library)
    tree = generate_tree(messages, gateway, "refine", attempt, refinement.subtask.name, library)
    logger.info(f"🛠️ Refined {refinement.subtask.name} (attempt {attempt}): {len(tree.actions())} action(s)")
    return tree
