"""Client for inference engines speaking the OpenAI-compatible
``/v1/completions`` wire protocol, implementing the generator and verifier
contracts for live runs.

Generation sends the rendered context as the prompt and stops at the step
boundary delimiter.  Verification renders a fixed question about the two
candidate steps, requests exactly one token with log-probabilities, and
normalises the probability mass of the Yes/No token variants into a binary
accept-probability.  When neither class token appears in the returned
top-k, the query is unverifiable and the cascade treats it as a forced
escalation.

The client retries transient transport failures and 5xx responses with a
configurable backoff, caps concurrent requests with a semaphore, and
probes each endpoint's log-probability capability once per process.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any

import httpx

from .core import ReasoningContext, Step, StepOrigin, ValidationError, estimate_tokens
from .oracle import (
    GenerationError,
    ModelOracle,
    OracleError,
    Tier,
    VerificationError,
    VerificationQuery,
    VerificationVerdict,
    verdict_from_decision_probability,
)

DEFAULT_API_KEY_ENV = "STEPSPEC_API_KEY"


class BackendError(OracleError):
    """Base class for wire-protocol client failures."""


class TransportError(BackendError, GenerationError):
    """The endpoint could not be reached (after retries)."""


class ProtocolError(BackendError):
    """The endpoint answered with something that is not a completion."""


class CapabilityError(BackendError):
    """The endpoint lacks a required feature (found at the startup probe)."""


class UnverifiableError(VerificationError, BackendError):
    """Neither class token appeared in the top-k; treated as escalation."""


@dataclass(frozen=True)
class VerificationPromptTemplate:
    """The fixed question shown to a verifier model.

    The wording presents the rival (target) step as Candidate A and the
    drafted step as Candidate B after a short context tail, and asks for a
    one-token Yes/No answer.  ``yes_variants`` / ``no_variants`` enumerate
    the tokenizer spellings credited to each class; anything else in the
    top-k is ignored, and a top-k containing neither class is
    unverifiable.
    """

    version: str = "v1"
    yes_variants: tuple[str, ...] = ("Yes", " Yes", "yes", " yes")
    no_variants: tuple[str, ...] = ("No", " No", "no", " no")

    def render(self, context_tail: str, draft_text: str, target_text: str) -> str:
        return (
            "You are checking one step of a reasoning trace.\n"
            f"Context:\n{context_tail}\n\n"
            f"Candidate A (reference next step):\n{target_text}\n\n"
            f"Candidate B (proposed next step):\n{draft_text}\n\n"
            "Are these two steps semantically equivalent as the next "
            "reasoning step? Answer Yes or No.\nAnswer:"
        )


DEFAULT_TEMPLATE = VerificationPromptTemplate()


@dataclass(frozen=True)
class EndpointConfig:
    """Connection and decoding settings for one completions endpoint."""

    base_url: str
    model_name: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    request_timeout: float = 30.0
    max_retries: int = 2
    retry_backoff: float = 0.05
    stop_sequences: tuple[str, ...] = ("\n\n",)
    max_step_tokens: int = 256
    logprob_top_k: int = 5
    max_in_flight: int = 4
    candidate_temperature: float = 0.8
    context_tail_steps: int = 2
    context_tail_prompt_tokens: int = 512

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValidationError("base_url must be non-empty")
        if not self.model_name:
            raise ValidationError("model_name must be non-empty")
        if self.request_timeout <= 0:
            raise ValidationError("request_timeout must be positive")
        if not self.stop_sequences:
            raise ValidationError("stop_sequences must be non-empty")
        if self.max_step_tokens < 1:
            raise ValidationError("max_step_tokens must be >= 1")
        if self.logprob_top_k < 2:
            raise ValidationError("logprob_top_k must be >= 2 (both class tokens)")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "api_key_env": self.api_key_env,
            "request_timeout": self.request_timeout,
            "max_retries": self.max_retries,
            "retry_backoff": self.retry_backoff,
            "stop_sequences": list(self.stop_sequences),
            "max_step_tokens": self.max_step_tokens,
            "logprob_top_k": self.logprob_top_k,
            "max_in_flight": self.max_in_flight,
            "candidate_temperature": self.candidate_temperature,
            "context_tail_steps": self.context_tail_steps,
            "context_tail_prompt_tokens": self.context_tail_prompt_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EndpointConfig":
        stop = data.get("stop_sequences")
        kwargs: dict[str, Any] = {
            "base_url": data["base_url"],
            "model_name": data["model_name"],
        }
        for key in (
            "api_key_env",
            "request_timeout",
            "max_retries",
            "retry_backoff",
            "max_step_tokens",
            "logprob_top_k",
            "max_in_flight",
            "candidate_temperature",
            "context_tail_steps",
            "context_tail_prompt_tokens",
        ):
            if key in data:
                kwargs[key] = data[key]
        if stop is not None:
            kwargs["stop_sequences"] = tuple(stop)
        return cls(**kwargs)


@dataclass
class ClientStats:
    requests: int = 0
    retries: int = 0


class CompletionClient:
    """Minimal ``/v1/completions`` POST with retries and an in-flight cap."""

    def __init__(self, config: EndpointConfig):
        self.config = config
        self.stats = ClientStats()
        headers = {}
        api_key = os.environ.get(config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.request_timeout,
            headers=headers,
        )
        self._gate = threading.BoundedSemaphore(config.max_in_flight)

    def close(self) -> None:
        self._client.close()

    def complete(self, payload: dict[str, Any]) -> dict[str, Any]:
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self.stats.retries += 1
                if self.config.retry_backoff > 0:
                    time.sleep(self.config.retry_backoff * attempt)
            try:
                with self._gate:
                    self.stats.requests += 1
                    response = self._client.post("/v1/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ProtocolError(
                    f"server error {response.status_code}: {response.text[:200]}"
                )
                continue
            if response.status_code >= 400:
                raise ProtocolError(
                    f"request rejected ({response.status_code}): {response.text[:200]}"
                )
            try:
                data = response.json()
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from exc
            if not isinstance(data, dict) or "choices" not in data or not data["choices"]:
                raise ProtocolError("response has no choices")
            return data
        raise TransportError(
            f"endpoint {self.config.base_url} failed after "
            f"{self.config.max_retries + 1} attempts: {last_error}"
        )


_PROBED_ENDPOINTS: set[tuple[str, str]] = set()
_PROBE_LOCK = threading.Lock()


def reset_probe_cache() -> None:
    """Forget probed endpoints (test isolation)."""
    with _PROBE_LOCK:
        _PROBED_ENDPOINTS.clear()


class RemoteModel(ModelOracle):
    """Generator + verifier backed by one completions endpoint."""

    def __init__(
        self,
        config: EndpointConfig,
        tier: Tier,
        template: VerificationPromptTemplate = DEFAULT_TEMPLATE,
        client: CompletionClient | None = None,
    ):
        self.config = config
        self.tier = tier
        self.template = template
        self.client = client or CompletionClient(config)

    # -- capability probe ------------------------------------------------

    def probe(self) -> None:
        """One 1-token log-probability request, once per endpoint per process.

        Raises :class:`CapabilityError` when the endpoint is reachable but
        does not return per-token log-probabilities; transport failures
        propagate as :class:`TransportError`.
        """
        key = (self.config.base_url, self.config.model_name)
        with _PROBE_LOCK:
            if key in _PROBED_ENDPOINTS:
                return
        data = self.client.complete(
            {
                "model": self.config.model_name,
                "prompt": "probe:",
                "max_tokens": 1,
                "logprobs": self.config.logprob_top_k,
                "temperature": 0.0,
            }
        )
        logprobs = data["choices"][0].get("logprobs")
        if not logprobs or not logprobs.get("top_logprobs"):
            raise CapabilityError(
                f"{self.config.base_url} ({self.config.model_name}) does not "
                "return top log-probabilities; verification is impossible"
            )
        with _PROBE_LOCK:
            _PROBED_ENDPOINTS.add(key)

    # -- generation -------------------------------------------------------

    def _step_from_choice(self, choice: dict[str, Any], usage: dict[str, Any] | None) -> Step | None:
        text = choice.get("text", "")
        for stop in self.config.stop_sequences:
            text = text.removesuffix(stop)
        if not text.strip():
            return None
        incomplete = choice.get("finish_reason") == "length"
        tokens: int | None = None
        if usage and isinstance(usage.get("completion_tokens"), int):
            tokens = max(1, usage["completion_tokens"])
        origin = StepOrigin.DRAFT if self.tier is Tier.DRAFT else StepOrigin.TARGET
        return Step(
            text=text,
            estimated_tokens=tokens if tokens is not None else estimate_tokens(text),
            origin=origin,
            incomplete=incomplete,
        )

    def generate_step(self, context: ReasoningContext) -> Step | None:
        data = self.client.complete(
            {
                "model": self.config.model_name,
                "prompt": context.rendered(),
                "max_tokens": min(self.config.max_step_tokens, max(1, context.tokens_remaining)),
                "stop": list(self.config.stop_sequences),
                "temperature": 0.0,
            }
        )
        return self._step_from_choice(data["choices"][0], data.get("usage"))

    def generate_candidates(self, context: ReasoningContext, width: int) -> list[Step]:
        if width == 1:
            step = self.generate_step(context)
            return [] if step is None else [step]
        data = self.client.complete(
            {
                "model": self.config.model_name,
                "prompt": context.rendered(),
                "max_tokens": min(self.config.max_step_tokens, max(1, context.tokens_remaining)),
                "stop": list(self.config.stop_sequences),
                "temperature": self.config.candidate_temperature,
                "n": width,
            }
        )
        steps = []
        for choice in data["choices"]:
            step = self._step_from_choice(choice, None)
            if step is not None:
                steps.append(step)
        return steps

    # -- verification -----------------------------------------------------

    def _context_tail(self, context: ReasoningContext) -> str:
        prompt_words = context.prompt.split()
        tail = " ".join(prompt_words[-self.config.context_tail_prompt_tokens :])
        steps = context.accepted_steps[-self.config.context_tail_steps :]
        return "\n".join([tail, *(step.text for step in steps)])

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        prompt = self.template.render(
            self._context_tail(query.context),
            query.draft_step.text,
            query.target_step.text,
        )
        data = self.client.complete(
            {
                "model": self.config.model_name,
                "prompt": prompt,
                "max_tokens": 1,
                "logprobs": self.config.logprob_top_k,
                "temperature": 0.0,
            }
        )
        logprobs = data["choices"][0].get("logprobs") or {}
        top_list = logprobs.get("top_logprobs") or []
        if not top_list or not isinstance(top_list[0], dict):
            raise ProtocolError("verification response carries no top_logprobs")
        top: dict[str, float] = top_list[0]
        yes_mass = sum(math.exp(top[v]) for v in self.template.yes_variants if v in top)
        no_mass = sum(math.exp(top[v]) for v in self.template.no_variants if v in top)
        if yes_mass == 0.0 and no_mass == 0.0:
            raise UnverifiableError(
                f"top-{self.config.logprob_top_k} contains neither class token: "
                f"{sorted(top)[:8]}"
            )
        p_accept = yes_mass / (yes_mass + no_mass)
        return verdict_from_decision_probability(p_accept, self.tier)


def remote_generate_step(
    config: EndpointConfig, context: ReasoningContext, tier: Tier = Tier.TARGET
) -> Step | None:
    """One-shot convenience wrapper; prefer holding a :class:`RemoteModel`."""
    model = RemoteModel(config, tier)
    try:
        return model.generate_step(context)
    finally:
        model.client.close()


def remote_verify(
    config: EndpointConfig,
    query: VerificationQuery,
    template: VerificationPromptTemplate = DEFAULT_TEMPLATE,
    tier: Tier = Tier.DRAFT,
) -> VerificationVerdict:
    """One-shot convenience wrapper around :meth:`RemoteModel.verify`."""
    model = RemoteModel(config, tier, template)
    try:
        return model.verify(query)
    finally:
        model.client.close()
