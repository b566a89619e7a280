"""LLM clients: live chat-completion over HTTPS, transcript replay and scripted mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from ..errors import LlmTransportError, TranscriptMiss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LlmRequest:
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def canonical(self) -> str:
        return json.dumps(
            {"system": self.system_text, "user": self.user_text,
             "temperature": self.temperature, "max_tokens": self.max_tokens},
            sort_keys=True, ensure_ascii=False, separators=(",", ":"),
        )

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmResponse:
    text: str
    token_usage: dict = field(default_factory=lambda: {"prompt": 0, "completion": 0})


class LlmClient(Protocol):
    model: str

    def complete(self, request: LlmRequest) -> LlmResponse: ...


class TransientLlmError(LlmTransportError):
    """Retryable failure (network error, 429, 5xx)."""


def estimate_usage(request: LlmRequest, text: str) -> dict:
    return {
        "prompt": len(request.system_text.split()) + len(request.user_text.split()),
        "completion": len(text.split()),
    }


def llm_complete(client: LlmClient, request: LlmRequest, attempts: int = 3, base_delay: float = 0.5,
                 sleep: Callable[[float], None] = time.sleep) -> LlmResponse:
    """Call ``client`` with exponential backoff on transient failures."""
    for attempt in range(1, attempts + 1):
        try:
            response = client.complete(request)
            if attempt > 1:
                log.info("llm call succeeded after %d attempts", attempt)
            return response
        except TransientLlmError as exc:
            log.warning("llm attempt %d/%d failed: %s", attempt, attempts, exc)
            if attempt == attempts:
                raise LlmTransportError(f"giving up after {attempts} attempts: {exc}") from exc
            sleep(base_delay * 2 ** (attempt - 1))
    raise AssertionError("unreachable")


class ReplayClient:
    """Replays a recorded transcript; unknown requests raise ``TranscriptMiss``."""

    model = "mock-transcript"

    def __init__(self, transcript: dict[str, str] | list[dict]):
        if isinstance(transcript, list):
            transcript = {e["request_hash"]: e["response_text"] for e in transcript}
        self.transcript = dict(transcript)

    @classmethod
    def from_file(cls, path) -> "ReplayClient":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = request.hash()
        try:
            text = self.transcript[key]
        except KeyError:
            raise TranscriptMiss(f"no recorded response for request {key[:16]}") from None
        return LlmResponse(text, estimate_usage(request, text))


class ScriptedClient:
    """Answers through a Python callable ``(request) -> text``; thread-safe call log."""

    def __init__(self, responder: Callable[[LlmRequest], str], model: str = "scripted-mock"):
        self.responder = responder
        self.model = model
        self.calls: list[LlmRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            self.calls.append(request)
        text = self.responder(request)
        return LlmResponse(text, estimate_usage(request, text))


class RecordingClient:
    """Wraps another client and records every exchange as a replayable transcript."""

    def __init__(self, inner: LlmClient):
        self.inner = inner
        self.model = getattr(inner, "model", "unknown")
        self.entries: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.entries[request.hash()] = response.text
        return response

    def transcript(self) -> list[dict]:
        return [{"request_hash": k, "response_text": v} for k, v in sorted(self.entries.items())]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.transcript(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


Transport = Callable[[str, bytes, dict, float], tuple[int, bytes]]


def _urllib_transport(url: str, body: bytes, headers: dict, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


class HttpChatClient:
    """OpenAI-style ``/chat/completions`` client.

    The credential is read from the environment variable named by
    ``api_key_env`` at call time; it never lives in a config file.
    """

    def __init__(self, endpoint: str, model: str, api_key_env: str = "LQAUDIT_API_KEY",
                 timeout: float = 120.0, transport: Transport | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.transport = transport or _urllib_transport

    def complete(self, request: LlmRequest) -> LlmResponse:
        body = json.dumps({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            status, raw = self.transport(self.endpoint, body, headers, self.timeout)
        except (OSError, urllib.error.URLError) as exc:
            raise TransientLlmError(str(exc)) from exc
        if status == 429 or status >= 500:
            raise TransientLlmError(f"HTTP {status}")
        if status >= 400:
            raise LlmTransportError(f"HTTP {status}: {raw[:200]!r}")
        try:
            payload = json.loads(raw)
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmTransportError(f"unexpected response body: {exc}") from exc
        usage = payload.get("usage") or {}
        return LlmResponse(text, {
            "prompt": int(usage.get("prompt_tokens", 0)),
            "completion": int(usage.get("completion_tokens", 0)),
        })
