"""General Errors: the fixed, task-agnostic fault classes raised while executing a plan."""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict

FEEDBACK_DIR = Path(__file__).resolve().parent.parent / "templates" / "feedback"


class GeneralErrorKind(str, Enum):
    NOT_CLOSE = "notClose"
    NOT_VISIBLE = "notVisible"
    DOES_NOT_EXIST = "doesNotExist"


@dataclass(frozen=True)
class FeedbackTemplate:
    """One feedback text per General Error kind, with a {target} placeholder."""

    kind: GeneralErrorKind
    template_text: str
    version: str = "1"

    def render(self, target: str) -> str:
        return self.template_text.format(target=target)


def _read_versioned(path: Path):
    lines = path.read_text(encoding="utf-8").splitlines()
    version = "0"
    if lines and lines[0].startswith("# version:"):
        version = lines[0].split(":", 1)[1].strip()
        lines = lines[1:]
    return version, "\n".join(lines).strip()


@lru_cache(maxsize=None)
def load_feedback_templates(feedback_dir: Path = FEEDBACK_DIR) -> Dict[GeneralErrorKind, FeedbackTemplate]:
    """Load exactly one template per kind; a missing file is a packaging error."""
    templates = {}
    for kind in GeneralErrorKind:
        path = Path(feedback_dir) / f"{kind.value}.txt"
        if not path.exists():
            raise FileNotFoundError(f"Missing feedback template for {kind.value}: {path}")
        version, text = _read_versioned(path)
        templates[kind] = FeedbackTemplate(kind=kind, template_text=text, version=version)
    return templates


@dataclass(frozen=True)
class GeneralErrorReport:
    kind: GeneralErrorKind
    action_name: str
    target: str
    message: str

    @classmethod
    def build(cls, kind: GeneralErrorKind, action_name: str, target: str) -> "GeneralErrorReport":
        message = load_feedback_templates()[kind].render(target)
        return cls(kind=kind, action_name=action_name, target=target, message=message)

    def to_dict(self) -> Dict[str, str]:
        return {
            "kind": self.kind.value,
            "action_name": self.action_name,
            "target": self.target,
            "message": self.message,
        }

    def __str__(self):
        return f"{self.kind.value}({self.action_name} -> {self.target})"
