import json

import pytest
import requests

import llm_gateway.gateway as gateway
from llm_gateway.gateway import (
    BackendConfig,
    BackendConfigError,
    CallKey,
    ChatGateway,
    ChatMessage,
    EncodedBlob,
    FixtureMissing,
    GatewaySession,
    ReplayBackend,
    ReplayExhausted,
    ReplayMismatch,
    ScriptedBackend,
    TranscriptFormatError,
    TransportError,
    load_transcript,
    record_transcript,
)

MESSAGES = [ChatMessage.system("You plan robot tasks."), ChatMessage.user("hello", [EncodedBlob.encode("View 1/4")])]


class FakeResponse:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self.ok = status_code < 400
        self._body = body
        self.text = json.dumps(body) if body is not None else "error"

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


def _answer(content):
    return FakeResponse(200, {"choices": [{"message": {"content": content}}]})


@pytest.fixture
def http_gateway(monkeypatch):
    monkeypatch.setenv("ZKTP_TEST_KEY", "sk-test")
    monkeypatch.setattr(gateway.time, "sleep", lambda seconds: None)
    config = BackendConfig(mode="http", endpoint="https://llm.example/v1/chat/completions",
                           api_key_env="ZKTP_TEST_KEY", backoff=(0.1, 0.2))
    chat = ChatGateway(config)
    yield chat
    chat.close()


def _fake_post(monkeypatch, responses):
    calls = []

    def fake_post(self, url, json=None, headers=None, timeout=None):
        calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        response = responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response

    monkeypatch.setattr(requests.Session, "post", fake_post)
    return calls


def test_http_backend_sends_openai_style_payload(http_gateway, monkeypatch):
    calls = _fake_post(monkeypatch, [_answer("TASK_ID: x")])
    session = http_gateway.new_session()

    assert session.complete(MESSAGES, "interpret", 0) == "TASK_ID: x"

    payload = calls[0]["json"]
    assert payload["model"] == "gpt-4o"
    assert payload["temperature"] == 0.0
    assert payload["messages"][0] == {"role": "system", "content": [{"type": "text", "text": "You plan robot tasks."}]}
    assert payload["messages"][1]["content"][1]["text"].startswith("data:text/plain;base64,")
    assert calls[0]["headers"] == {"Authorization": "Bearer sk-test"}


def test_http_backend_retries_transient_failures(http_gateway, monkeypatch):
    sleeps = []
    monkeypatch.setattr(gateway.time, "sleep", sleeps.append)
    calls = _fake_post(monkeypatch, [FakeResponse(503), requests.ConnectionError("reset"), _answer("ok")])
    session = http_gateway.new_session()

    assert session.complete(MESSAGES, "plan", 0, subtask="grab_mug") == "ok"
    assert len(calls) == 3
    assert sleeps == [0.1, 0.2]
    assert session.transcript.entries[0].error is None


def test_http_backend_gives_up_after_max_attempts(http_gateway, monkeypatch):
    _fake_post(monkeypatch, [FakeResponse(429), FakeResponse(500), FakeResponse(502)])
    session = http_gateway.new_session()

    with pytest.raises(TransportError, match="3 attempt"):
        session.complete(MESSAGES, "plan", 0)

    entry = session.transcript.entries[0]
    assert entry.error.startswith("TransportError")
    assert entry.response == ""


def test_http_backend_does_not_retry_client_errors(http_gateway, monkeypatch):
    calls = _fake_post(monkeypatch, [FakeResponse(401), _answer("never")])

    with pytest.raises(TransportError, match="HTTP 401"):
        http_gateway.new_session().complete(MESSAGES, "plan", 0)
    assert len(calls) == 1


def test_http_backend_needs_credential_from_environment(monkeypatch):
    monkeypatch.delenv("ZKTP_MISSING_KEY", raising=False)
    config = BackendConfig(mode="http", endpoint="https://llm.example", api_key_env="ZKTP_MISSING_KEY")

    with pytest.raises(BackendConfigError, match="ZKTP_MISSING_KEY"):
        config.api_key()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"mode": "carrier-pigeon"},
        {"mode": "http"},
        {"mode": "scripted", "fixture_path": None},
        {"mode": "replay"},
        {"mode": "scripted", "fixture_path": "fixtures", "max_attempts": 0},
    ],
)
def test_backend_config_validation(kwargs):
    with pytest.raises(BackendConfigError):
        BackendConfig(**kwargs)


def test_backoff_schedule_saturates():
    config = BackendConfig(fixture_path="fixtures", backoff=(1, 2, 4))
    assert [config.delay_before_retry(i) for i in range(5)] == [1.0, 2.0, 4.0, 4.0, 4.0]


def test_fixture_names_in_lookup_order():
    assert CallKey("interpret", 0).fixture_names() == ["interpret__0.txt", "interpret.txt"]
    assert CallKey("plan", 2, "grab_mug", repair=True).fixture_names() == [
        "plan__grab_mug__2.repair.txt",
        "plan__grab_mug.repair.txt",
        "plan__grab_mug.txt",
        "plan.txt",
    ]


def test_scripted_backend_uses_task_directory_and_fallbacks(tmp_path):
    task_dir = tmp_path / "apple"
    task_dir.mkdir()
    (task_dir / "plan__grab__0.txt").write_text("exact", encoding="utf-8")
    (task_dir / "plan.txt").write_text("stage default", encoding="utf-8")
    (task_dir / "refine__grab.txt").write_text("any attempt", encoding="utf-8")
    backend = ScriptedBackend(tmp_path, "apple")

    assert backend.send(MESSAGES, CallKey("plan", 0, "grab")) == "exact"
    assert backend.send(MESSAGES, CallKey("plan", 0, "place")) == "stage default"
    assert backend.send(MESSAGES, CallKey("refine", 3, "grab")) == "any attempt"


def test_scripted_backend_missing_fixture(tmp_path):
    session = GatewaySession(ScriptedBackend(tmp_path))

    with pytest.raises(FixtureMissing) as excinfo:
        session.complete(MESSAGES, "decompose", 0)

    assert "decompose__0.txt" in str(excinfo.value)
    assert len(session.transcript) == 1
    assert session.transcript.entries[0].error.startswith("FixtureMissing")


def test_unknown_stage_is_rejected_and_transcribed(tmp_path):
    session = GatewaySession(ScriptedBackend(tmp_path))

    with pytest.raises(ValueError):
        session.complete(MESSAGES, "summarize", 0)

    assert len(session.transcript) == 1
    entry = session.transcript.entries[0]
    assert entry.stage == "summarize"
    assert entry.error.startswith("ValueError")


def _recorded_session(tmp_path):
    (tmp_path / "interpret__0.txt").write_text("TASK_ID: t", encoding="utf-8")
    (tmp_path / "plan__grab__0.txt").write_text("<Action name='Grab' target='mug'/>", encoding="utf-8")
    session = GatewaySession(ScriptedBackend(tmp_path))
    session.complete(MESSAGES, "interpret", 0)
    session.complete(MESSAGES, "plan", 0, subtask="grab")
    return session


def test_transcript_round_trip(tmp_path):
    session = _recorded_session(tmp_path)
    path = record_transcript(session.transcript, tmp_path / "logs" / "transcript.jsonl")

    loaded = load_transcript(path)

    assert [e.to_record() for e in loaded] == [e.to_record() for e in session.transcript]
    first = loaded.entries[0]
    assert first.request == MESSAGES
    assert "View 1/4" in first.request_text()
    assert loaded.count("plan") == 1
    timestamps = [e.timestamp for e in loaded]
    assert timestamps == sorted(timestamps)


def test_replay_reproduces_recorded_responses(tmp_path):
    session = _recorded_session(tmp_path)
    replay = GatewaySession(ReplayBackend(session.transcript.entries))

    assert replay.complete(MESSAGES, "interpret", 0) == "TASK_ID: t"
    assert replay.complete(MESSAGES, "plan", 0, subtask="grab") == "<Action name='Grab' target='mug'/>"
    with pytest.raises(ReplayExhausted):
        replay.complete(MESSAGES, "refine", 1, subtask="grab")


def test_replay_detects_key_mismatch(tmp_path):
    session = _recorded_session(tmp_path)
    replay = GatewaySession(ReplayBackend(session.transcript.entries))

    with pytest.raises(ReplayMismatch, match="interpret/0"):
        replay.complete(MESSAGES, "decompose", 0)


def test_replay_detects_changed_request(tmp_path):
    session = _recorded_session(tmp_path)
    replay = GatewaySession(ReplayBackend(session.transcript.entries))

    with pytest.raises(ReplayMismatch, match="different request"):
        replay.complete([ChatMessage.user("something else")], "interpret", 0)


def test_replay_reraises_recorded_failures(tmp_path):
    session = GatewaySession(ScriptedBackend(tmp_path))
    with pytest.raises(FixtureMissing):
        session.complete(MESSAGES, "interpret", 0)

    replay = GatewaySession(ReplayBackend(session.transcript.entries))
    with pytest.raises(TransportError, match="FixtureMissing"):
        replay.complete(MESSAGES, "interpret", 0)


def test_replay_gateway_loads_transcript_file(tmp_path):
    session = _recorded_session(tmp_path)
    path = record_transcript(session.transcript, tmp_path / "t.jsonl")

    chat = ChatGateway(BackendConfig(mode="replay", transcript_path=path))

    assert chat.new_session().complete(MESSAGES, "interpret", 0) == "TASK_ID: t"


def test_truncated_transcript_reports_line(tmp_path):
    session = _recorded_session(tmp_path)
    path = record_transcript(session.transcript, tmp_path / "t.jsonl")
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text(lines[0] + "\n" + lines[1][: len(lines[1]) // 2] + "\n", encoding="utf-8")

    with pytest.raises(TranscriptFormatError) as excinfo:
        load_transcript(path)
    assert excinfo.value.line == 2


def test_transcript_record_with_missing_fields(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('\n{"stage": "plan", "attempt": 0}\n', encoding="utf-8")

    with pytest.raises(TranscriptFormatError, match="line 2: missing field"):
        load_transcript(path)


def test_empty_transcript_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert len(load_transcript(path)) == 0


def test_blob_payload_must_be_base64():
    with pytest.raises(ValueError):
        EncodedBlob("not base64!!")
    assert EncodedBlob.encode("View 2/4").decoded() == "View 2/4"


def test_message_needs_a_part():
    with pytest.raises(ValueError):
        ChatMessage("user", ())
