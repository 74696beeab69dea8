"""Shared test doubles and paths."""

import time
from pathlib import Path
from typing import List, Optional

from llm_gateway.gateway import BackendConfig, ChatGateway, ChatMessage, Transcript, TranscriptEntry
from orchestration.run_config import RunConfig

ROOT = Path(__file__).resolve().parent.parent
SCENES = ROOT / "simulation" / "scenes"
FIXTURES = ROOT / "fixtures"


class QueueGateway:
    """Stands in for a GatewaySession: answers from a queue and records every call."""

    def __init__(self, responses: List[str]):
        self.responses = list(responses)
        self.calls = []
        self.transcript = Transcript()

    def complete(self, messages: List[ChatMessage], stage: str, attempt: int,
                 subtask: Optional[str] = None, repair: bool = False) -> str:
        self.calls.append(
            {"stage": stage, "attempt": attempt, "subtask": subtask, "repair": repair, "messages": messages}
        )
        if not self.responses:
            raise AssertionError(f"unexpected call: {stage} attempt={attempt} repair={repair}")
        response = self.responses.pop(0)
        self.transcript.append(TranscriptEntry(
            stage=stage, attempt=attempt, request=list(messages), response=response,
            latency_ms=0.0, timestamp=time.time(), subtask=subtask, repair=repair,
        ))
        return response

    def prompt(self, index: int = -1) -> str:
        return self.calls[index]["messages"][-1].text()


def scripted_config(fixture_set: str = "golden", **changes) -> RunConfig:
    backend = BackendConfig(mode="scripted", fixture_path=FIXTURES / fixture_set)
    return RunConfig(backend=backend, **changes)


def scripted_session(task: str, fixture_set: str = "golden"):
    return ChatGateway(scripted_config(fixture_set).backend).new_session(task)
