"""
Chat-completion gateway with three interchangeable backends.

http      - live chat-completion endpoint over a shared requests.Session
scripted  - fixture files keyed by (stage, sub-task, attempt)
replay    - a recorded transcript played back in order

Every complete() call, successful or not, appends one TranscriptEntry to the
session's transcript.
"""

import base64
import binascii
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import requests

STAGES = ("interpret", "decompose", "plan", "refine")
MODES = ("http", "scripted", "replay")
RETRYABLE_STATUS = {429, 500, 502, 503, 504}
HEADERS = {
    "Content-Type": "application/json",
    "User-Agent": "zktp-runtime/0.1",
}


class GatewayError(Exception):
    """Base class for every gateway failure."""


class TransportError(GatewayError):
    pass


class FixtureMissing(GatewayError):
    pass


class ReplayExhausted(GatewayError):
    pass


class ReplayMismatch(GatewayError):
    pass


class BackendConfigError(GatewayError):
    pass


class TranscriptFormatError(GatewayError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


# --------------------------------------------------------------- messages

class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class EncodedBlob:
    data: str
    media: str = "text/plain"

    def __post_init__(self):
        try:
            base64.b64decode(self.data, validate=True)
        except (binascii.Error, ValueError) as e:
            raise ValueError(f"Blob payload is not valid base64: {e}") from e

    @classmethod
    def encode(cls, text: str, media: str = "text/plain") -> "EncodedBlob":
        return cls(base64.b64encode(text.encode("utf-8")).decode("ascii"), media)

    def decoded(self) -> str:
        return base64.b64decode(self.data).decode("utf-8")


Part = Union[Text, EncodedBlob]


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    parts: Tuple[Part, ...]

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("A chat message needs at least one part")

    @classmethod
    def system(cls, text: str) -> "ChatMessage":
        return cls(Role.SYSTEM, (Text(text),))

    @classmethod
    def user(cls, text: str, blobs: Sequence[EncodedBlob] = ()) -> "ChatMessage":
        return cls(Role.USER, (Text(text), *blobs))

    def text(self) -> str:
        return "\n".join(part.text for part in self.parts if isinstance(part, Text))

    def blobs(self) -> List[EncodedBlob]:
        return [part for part in self.parts if isinstance(part, EncodedBlob)]

    def to_dict(self) -> Dict:
        parts = []
        for part in self.parts:
            if isinstance(part, Text):
                parts.append({"type": "text", "text": part.text})
            else:
                parts.append({"type": "blob", "media": part.media, "data": part.data})
        return {"role": self.role.value, "parts": parts}

    @classmethod
    def from_dict(cls, record: Dict) -> "ChatMessage":
        parts = []
        for part in record["parts"]:
            if part["type"] == "text":
                parts.append(Text(part["text"]))
            elif part["type"] == "blob":
                parts.append(EncodedBlob(part["data"], part.get("media", "text/plain")))
            else:
                raise ValueError(f"unknown part type {part['type']!r}")
        return cls(Role(record["role"]), tuple(parts))

    def to_wire(self) -> Dict:
        """OpenAI-style content list; blobs travel inline as data URLs."""
        content = []
        for part in self.parts:
            if isinstance(part, Text):
                content.append({"type": "text", "text": part.text})
            elif part.media.startswith("image/"):
                content.append({"type": "image_url", "image_url": {"url": f"data:{part.media};base64,{part.data}"}})
            else:
                content.append({"type": "text", "text": f"data:{part.media};base64,{part.data}"})
        return {"role": self.role.value, "content": content}


def request_digest(messages: Sequence[ChatMessage]) -> str:
    payload = json.dumps([m.to_dict() for m in messages], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ------------------------------------------------------------- transcript

@dataclass(frozen=True)
class CallKey:
    stage: str
    attempt: int
    subtask: Optional[str] = None
    repair: bool = False

    def describe(self) -> str:
        parts = [self.stage]
        if self.subtask:
            parts.append(self.subtask)
        parts.append(str(self.attempt))
        return "/".join(parts) + (" (format repair)" if self.repair else "")

    def fixture_names(self) -> List[str]:
        base = self.stage if not self.subtask else f"{self.stage}__{self.subtask}"
        suffix = ".repair" if self.repair else ""
        names = [f"{base}__{self.attempt}{suffix}.txt"]
        if self.repair:
            names.append(f"{base}.repair.txt")
        names.append(f"{base}.txt")
        if self.subtask:
            names.append(f"{self.stage}.txt")
        return names


@dataclass
class TranscriptEntry:
    stage: str
    attempt: int
    request: List[ChatMessage]
    response: str
    latency_ms: float
    timestamp: float
    subtask: Optional[str] = None
    repair: bool = False
    error: Optional[str] = None
    request_digest: str = ""

    def __post_init__(self):
        if not self.request_digest:
            self.request_digest = request_digest(self.request)

    @property
    def key(self) -> CallKey:
        return CallKey(self.stage, self.attempt, self.subtask, self.repair)

    def request_text(self) -> str:
        """All text a backend saw for this entry, blobs decoded."""
        chunks = []
        for message in self.request:
            for part in message.parts:
                chunks.append(part.text if isinstance(part, Text) else part.decoded())
        return "\n".join(chunks)

    def to_record(self) -> Dict:
        return {
            "stage": self.stage,
            "subtask": self.subtask,
            "attempt": self.attempt,
            "repair": self.repair,
            "request_digest": self.request_digest,
            "request": [m.to_dict() for m in self.request],
            "response": self.response,
            "error": self.error,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, record: Dict, line: int) -> "TranscriptEntry":
        required = ("stage", "attempt", "request", "response", "latency_ms", "timestamp")
        missing = [key for key in required if key not in record]
        if missing:
            raise TranscriptFormatError(f"missing field(s): {', '.join(missing)}", line)
        if record["stage"] not in STAGES:
            raise TranscriptFormatError(f"unknown stage {record['stage']!r}", line)
        if not isinstance(record["attempt"], int) or record["attempt"] < 0:
            raise TranscriptFormatError("attempt must be a non-negative integer", line)
        try:
            request = [ChatMessage.from_dict(m) for m in record["request"]]
        except (KeyError, TypeError, ValueError) as e:
            raise TranscriptFormatError(f"invalid request message: {e}", line) from e
        entry = cls(
            stage=record["stage"],
            attempt=record["attempt"],
            request=request,
            response=record["response"],
            latency_ms=float(record["latency_ms"]),
            timestamp=float(record["timestamp"]),
            subtask=record.get("subtask"),
            repair=bool(record.get("repair", False)),
            error=record.get("error"),
        )
        stored_digest = record.get("request_digest")
        if stored_digest and stored_digest != entry.request_digest:
            raise TranscriptFormatError("request_digest does not match the recorded request", line)
        return entry


class Transcript:
    """Append-only, thread-safe list of exchanges with monotonic timestamps."""

    def __init__(self, entries: Optional[List[TranscriptEntry]] = None):
        self._entries: List[TranscriptEntry] = list(entries or [])
        self._lock = threading.Lock()

    def append(self, entry: TranscriptEntry):
        with self._lock:
            if self._entries and entry.timestamp < self._entries[-1].timestamp:
                entry.timestamp = self._entries[-1].timestamp
            self._entries.append(entry)

    @property
    def entries(self) -> List[TranscriptEntry]:
        return list(self._entries)

    def count(self, *stages: str) -> int:
        return sum(1 for entry in self._entries if not stages or entry.stage in stages)

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[TranscriptEntry]:
        return iter(list(self._entries))


def record_transcript(transcript: Union[Transcript, Sequence[TranscriptEntry]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in transcript:
            f.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")
    return path


def load_transcript(path: Union[str, Path]) -> Transcript:
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise TranscriptFormatError(f"not a JSON record ({e.msg})", lineno) from e
            if not isinstance(record, dict):
                raise TranscriptFormatError("record must be a JSON object", lineno)
            entries.append(TranscriptEntry.from_record(record, lineno))
    return Transcript(entries)


# ----------------------------------------------------------------- config

@dataclass
class BackendConfig:
    mode: str = "scripted"
    endpoint: Optional[str] = None
    model_name: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    max_attempts: int = 3
    backoff: Tuple[float, ...] = (1.0, 2.0, 4.0)
    timeout: float = 60.0
    temperature: float = 0.0
    fixture_path: Optional[Path] = None
    transcript_path: Optional[Path] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise BackendConfigError(f"backend mode must be one of {MODES}, got {self.mode!r}")
        self.backoff = tuple(float(delay) for delay in self.backoff)
        if self.fixture_path is not None:
            self.fixture_path = Path(self.fixture_path)
        if self.transcript_path is not None:
            self.transcript_path = Path(self.transcript_path)
        if self.max_attempts < 1:
            raise BackendConfigError("max_attempts must be at least 1")
        if self.mode == "http" and (not self.endpoint or not self.api_key_env):
            raise BackendConfigError("http backend needs an endpoint and a credential environment variable")
        if self.mode == "scripted" and self.fixture_path is None:
            raise BackendConfigError("scripted backend needs a fixture path")
        if self.mode == "replay" and self.transcript_path is None:
            raise BackendConfigError("replay backend needs a transcript path")

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise BackendConfigError(f"Environment variable {self.api_key_env} is not set")
        return key

    def delay_before_retry(self, retry_index: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(retry_index, len(self.backoff) - 1)]


# --------------------------------------------------------------- backends

class HttpBackend:
    def __init__(self, config: BackendConfig, session: requests.Session):
        self.config = config
        self.session = session
        self.logger = logging.getLogger(__name__)

    def send(self, messages: Sequence[ChatMessage], key: CallKey) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [m.to_wire() for m in messages],
            "temperature": self.config.temperature,
        }
        headers = {"Authorization": f"Bearer {self.config.api_key()}"}
        last_error = ""
        for attempt_no in range(self.config.max_attempts):
            if attempt_no:
                delay = self.config.delay_before_retry(attempt_no - 1)
                self.logger.warning(f"🔁 Retrying {key.describe()} in {delay:.1f}s ({last_error})")
                time.sleep(delay)
            try:
                resp = self.session.post(self.config.endpoint, json=payload, headers=headers,
                                         timeout=self.config.timeout)
            except (requests.ConnectionError, requests.Timeout) as e:
                last_error = f"{type(e).__name__}: {e}"
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if not resp.ok:
                raise TransportError(f"HTTP {resp.status_code} from {self.config.endpoint}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise TransportError(f"Unexpected response body: {e}") from e
        raise TransportError(f"{key.describe()} failed after {self.config.max_attempts} attempt(s): {last_error}")


class ScriptedBackend:
    def __init__(self, fixture_root: Path, task_key: Optional[str] = None):
        fixture_root = Path(fixture_root)
        if task_key and (fixture_root / task_key).is_dir():
            fixture_root = fixture_root / task_key
        self.fixture_root = fixture_root

    def send(self, messages: Sequence[ChatMessage], key: CallKey) -> str:
        names = key.fixture_names()
        for name in names:
            path = self.fixture_root / name
            if path.is_file():
                return path.read_text(encoding="utf-8")
        raise FixtureMissing(f"No fixture for {key.describe()} in {self.fixture_root} (tried {', '.join(names)})")


class ReplayBackend:
    def __init__(self, entries: Sequence[TranscriptEntry]):
        self.entries = list(entries)
        self.cursor = 0

    def send(self, messages: Sequence[ChatMessage], key: CallKey) -> str:
        if self.cursor >= len(self.entries):
            raise ReplayExhausted(f"Transcript has {len(self.entries)} entries; {key.describe()} asked for one more")
        entry = self.entries[self.cursor]
        position = self.cursor
        self.cursor += 1
        if entry.key != key:
            raise ReplayMismatch(f"Entry {position} was recorded for {entry.key.describe()}, got {key.describe()}")
        if entry.request_digest != request_digest(messages):
            raise ReplayMismatch(f"Entry {position} ({key.describe()}) was recorded for a different request")
        if entry.error:
            raise TransportError(entry.error)
        return entry.response


# ---------------------------------------------------------------- gateway

class GatewaySession:
    """One trial's view of the gateway: its own backend cursor and transcript."""

    def __init__(self, backend, transcript: Optional[Transcript] = None):
        self.backend = backend
        self.transcript = transcript if transcript is not None else Transcript()
        self.logger = logging.getLogger(__name__)

    def complete(self, messages: Sequence[ChatMessage], stage: str, attempt: int,
                 subtask: Optional[str] = None, repair: bool = False) -> str:
        messages = list(messages)
        key = CallKey(stage, attempt, subtask, repair)
        start = time.perf_counter()
        response, error = "", None
        try:
            if stage not in STAGES:
                raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
            response = self.backend.send(messages, key)
            return response
        except Exception as e:
            error = f"{type(e).__name__}: {e}"
            self.logger.error(f"❌ Gateway call {key.describe()} failed: {error}")
            raise
        finally:
            latency_ms = (time.perf_counter() - start) * 1000
            self.transcript.append(TranscriptEntry(
                stage=stage, attempt=attempt, request=messages, response=response,
                latency_ms=round(latency_ms, 3), timestamp=time.time(),
                subtask=subtask, repair=repair, error=error,
            ))
            if error is None:
                self.logger.info(f"💬 {key.describe()} answered in {latency_ms:.1f} ms ({len(response)} chars)")


class ChatGateway:
    """Shared backend factory; the HTTP connection pool is reused by every session."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self._http: Optional[requests.Session] = None
        self._replay: Optional[Transcript] = None
        if config.mode == "http":
            self._http = requests.Session()
            self._http.headers.update(HEADERS)
        elif config.mode == "replay":
            self._replay = load_transcript(config.transcript_path)
            self.logger.info(f"📼 Loaded {len(self._replay)} transcript entries from {config.transcript_path}")

    def new_session(self, task_key: Optional[str] = None) -> GatewaySession:
        if self.config.mode == "http":
            backend = HttpBackend(self.config, self._http)
        elif self.config.mode == "scripted":
            backend = ScriptedBackend(self.config.fixture_path, task_key)
        else:
            backend = ReplayBackend(self._replay.entries)
        return GatewaySession(backend)

    def close(self):
        if self._http is not None:
            self._http.close()
