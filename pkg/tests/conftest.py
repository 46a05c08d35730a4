"""Shared fixtures: scripted oracles and a deterministic completions stub server."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

import pytest

from stepspec.core import ReasoningContext, Step
from stepspec.oracle import (
    ModelOracle,
    Tier,
    VerificationError,
    VerificationQuery,
    VerificationVerdict,
)


class ScriptedVerifier:
    """Returns a fixed sequence of verdicts (cycling), recording queries."""

    def __init__(self, verdicts: list[VerificationVerdict]):
        self.verdicts = verdicts
        self.calls = 0
        self.queries: list[VerificationQuery] = []

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        self.queries.append(query)
        verdict = self.verdicts[self.calls % len(self.verdicts)]
        self.calls += 1
        return verdict


class FailingVerifier:
    """Raises VerificationError on every call."""

    def __init__(self) -> None:
        self.calls = 0

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        self.calls += 1
        raise VerificationError("scripted failure")


def make_context(prompt: str = "prompt text here", budget: int = 10_000) -> ReasoningContext:
    return ReasoningContext.create(prompt, budget)


def make_query(context: ReasoningContext | None = None) -> VerificationQuery:
    ctx = context if context is not None else make_context()
    return VerificationQuery(ctx, Step("draft step"), Step("target step"))


# ----------------------------------------------------------------------
# Deterministic OpenAI-compatible completions stub
# ----------------------------------------------------------------------


@dataclass
class StubBehavior:
    """What the stub answers; tests mutate this between requests.

    ``gen_text`` produces the raw continuation for a generation request;
    the stub applies the request's stop sequences itself, like a real
    server.  ``verify_top_logprobs`` maps a verification prompt to the
    top-k token log-probabilities of the single answer token.
    """

    gen_text: Callable[[str, dict[str, Any]], str] = lambda prompt, payload: "stub step\n\n"
    verify_top_logprobs: Callable[[str], dict[str, float]] = lambda prompt: {
        "Yes": -0.05,
        "No": -3.2,
    }
    fail_next: int = 0
    omit_logprobs: bool = False
    requests: list[dict[str, Any]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class _StubHandler(BaseHTTPRequestHandler):
    def log_message(self, fmt: str, *args: Any) -> None:  # quiet
        pass

    def do_POST(self) -> None:  # noqa: N802 - http.server API
        behavior: StubBehavior = self.server.behavior  # type: ignore[attr-defined]
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length) or b"{}")
        with behavior.lock:
            behavior.requests.append(payload)
            if behavior.fail_next > 0:
                behavior.fail_next -= 1
                self.send_response(500)
                self.end_headers()
                self.wfile.write(b"injected failure")
                return
        if self.path != "/v1/completions":
            self.send_response(404)
            self.end_headers()
            return
        prompt = payload.get("prompt", "")
        max_tokens = payload.get("max_tokens", 16)
        wants_logprobs = payload.get("logprobs")
        if max_tokens == 1 and wants_logprobs:
            if behavior.omit_logprobs:
                choice: dict[str, Any] = {"text": " Yes", "finish_reason": "stop"}
            else:
                top = behavior.verify_top_logprobs(prompt)
                first = max(top, key=top.get)
                choice = {
                    "text": first,
                    "finish_reason": "stop",
                    "logprobs": {"tokens": [first], "top_logprobs": [top]},
                }
            body = {"choices": [choice]}
        else:
            raw = behavior.gen_text(prompt, payload)
            finish = "stop"
            emitted = raw
            for stop in payload.get("stop") or []:
                idx = emitted.find(stop)
                if idx != -1:
                    emitted = emitted[:idx]
            words = emitted.split()
            if len(words) > max_tokens:
                emitted = " ".join(words[:max_tokens])
                finish = "length"
            elif emitted == raw:
                finish = "length" if len(words) >= max_tokens else "stop"
            body = {
                "choices": [{"text": emitted, "finish_reason": finish}],
                "usage": {"completion_tokens": max(1, len(emitted.split()))},
            }
        data = json.dumps(body).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class StubServer:
    def __init__(self) -> None:
        self.behavior = StubBehavior()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._server.behavior = self.behavior  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


@pytest.fixture
def second_stub_server():
    server = StubServer()
    yield server
    server.close()
