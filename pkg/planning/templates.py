"""Versioned prompt templates shared by every task."""

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from string import Template
from typing import Dict, Union

PROMPT_DIR = Path(__file__).resolve().parent.parent / "templates" / "prompts"
TEMPLATE_NAMES = (
    "system",
    "interpret",
    "decompose",
    "plan",
    "refine",
    "repair_interpret",
    "repair_decompose",
    "repair_tree",
    "correct_predicates",
)


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str
    version: str

    def render(self, **slots: str) -> str:
        try:
            return Template(self.text).substitute(**slots)
        except KeyError as e:
            raise TemplateError(f"Template '{self.name}' needs slot {e}") from e


def _load(path: Path) -> PromptTemplate:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# version:"):
        raise TemplateError(f"{path} has no '# version:' header")
    version = lines[0].split(":", 1)[1].strip()
    return PromptTemplate(name=path.stem, text="\n".join(lines[1:]).strip(), version=version)


class PromptLibrary:
    def __init__(self, template_dir: Union[str, Path] = PROMPT_DIR):
        self.template_dir = Path(template_dir)
        self.templates: Dict[str, PromptTemplate] = {}
        for name in TEMPLATE_NAMES:
            path = self.template_dir / f"{name}.txt"
            if not path.is_file():
                raise TemplateError(f"Missing prompt template {path}")
            self.templates[name] = _load(path)

    def render(self, name: str, **slots: str) -> str:
        return self.templates[name].render(**slots)

    def digests(self) -> Dict[str, str]:
        return {
            name: hashlib.sha256(f"{t.version}\n{t.text}".encode("utf-8")).hexdigest()
            for name, t in sorted(self.templates.items())
        }

    def fingerprint(self) -> str:
        """One hash over every template; identical for all tasks of a run."""
        joined = "\n".join(f"{name}:{digest}" for name, digest in self.digests().items())
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def default_library() -> PromptLibrary:
    return PromptLibrary()
