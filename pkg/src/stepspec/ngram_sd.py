"""Draft-model-free token speculation by n-gram lookup.

Reasoning traces repeat themselves: notation, connective phrases, restated
quantities.  This layer exploits that by matching the current suffix
against everything emitted so far (prompt included) and proposing the
tokens that followed the most recent earlier occurrence.  One target
forward pass verifies the whole proposal and supplies the next token, so
the emitted sequence is exactly what the target alone would have produced
("lossless") while the number of forward passes drops on repetitive text.

Tokens here are whitespace-delimited words, which keeps the mechanism
meaningful without a real tokenizer.  Composition happens beneath the step
engine's target-role generations only; the draft model is already cheap.
Proposals are deterministic string matching and consume no randomness, so
enabling the layer can never change a deterministic target's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .core import ReasoningContext, Step, ValidationError
from .oracle import ModelOracle, VerificationQuery, VerificationVerdict


@dataclass
class NgramIndex:
    """Append-only token cache with match parameters.

    ``n`` is the suffix length to match; ``max_draft`` caps how many
    follow-on tokens a single hit proposes.
    """

    cache: list[str] = field(default_factory=list)
    n: int = 2
    max_draft: int = 8

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.max_draft < 1:
            raise ValidationError("max_draft must be >= 1")

    def append(self, tokens: Sequence[str]) -> None:
        self.cache.extend(tokens)


def propose(index: NgramIndex, suffix: Sequence[str]) -> list[str]:
    """Tokens that followed the most recent earlier occurrence of ``suffix``.

    The cache is expected to end with the suffix (it is the tail of the
    current sequence), so the terminal position is never a match; on
    multiple earlier occurrences the most recent one wins.  Returns up to
    ``max_draft`` tokens, truncated at the cache end, or an empty list on
    no hit.
    """
    if len(suffix) != index.n:
        raise ValidationError(f"suffix must have exactly n={index.n} tokens")
    cache = index.cache
    suffix = list(suffix)
    for start in range(len(cache) - index.n - 1, -1, -1):
        if cache[start : start + index.n] == suffix:
            follow_from = start + index.n
            return cache[follow_from : follow_from + index.max_draft]
    return []


class TokenStream:
    """Deterministic token oracle over a known continuation.

    ``peek(offset)`` inspects without consuming; ``advance(count)`` moves
    the cursor after a verification round accepted tokens.
    """

    def __init__(self, tokens: Sequence[str]):
        self._tokens = list(tokens)
        self._pos = 0

    def peek(self, offset: int = 0) -> str | None:
        idx = self._pos + offset
        return self._tokens[idx] if idx < len(self._tokens) else None

    def advance(self, count: int) -> None:
        self._pos += count

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._tokens)

    @property
    def remaining(self) -> int:
        return len(self._tokens) - self._pos


def verify_tokens(proposal: Sequence[str], target_stream: TokenStream) -> int:
    """Length of the longest proposal prefix matching the target stream.

    Pure measurement: the stream is not advanced.  The composed generator
    emits that prefix plus the one correcting target token, so composed
    output is token-identical to the target stream alone.
    """
    accepted = 0
    for offset, token in enumerate(proposal):
        if target_stream.peek(offset) != token:
            break
        accepted += 1
    return accepted


def emit_with_lookup(
    step_tokens: Sequence[str],
    context_tokens: Sequence[str],
    n: int = 2,
    max_draft: int = 8,
) -> tuple[list[str], int]:
    """Re-emit a known token sequence through propose/verify rounds.

    Returns the emitted tokens (always exactly ``step_tokens``) and the
    number of target forward passes spent: one per round, where a round
    emits the accepted proposal prefix plus one correcting token.  Without
    any cache hit this degrades to one pass per token.
    """
    index = NgramIndex(cache=list(context_tokens), n=n, max_draft=max_draft)
    stream = TokenStream(step_tokens)
    emitted: list[str] = []
    calls = 0
    while not stream.exhausted:
        proposal: list[str] = []
        if len(index.cache) >= n:
            proposal = propose(index, index.cache[-n:])
        accepted = verify_tokens(proposal, stream)
        take = min(accepted + 1, stream.remaining)
        round_tokens = [stream.peek(i) for i in range(take)]
        stream.advance(take)
        calls += 1
        emitted.extend(round_tokens)  # type: ignore[arg-type]
        index.append(round_tokens)  # type: ignore[arg-type]
    return emitted, calls


def context_tokens(context: ReasoningContext) -> list[str]:
    """The emitted-so-far token sequence: prompt plus every context step."""
    tokens = context.prompt.split()
    for step in context.accepted_steps:
        tokens.extend(step.text.split())
    return tokens


class LookupComposedOracle(ModelOracle):
    """Wrap a target-role oracle so its generations are token-speculated.

    The wrapped oracle's steps are re-emitted through n-gram lookup
    against everything generated before them; the resulting forward-pass
    count is recorded on the step (``generation_calls``).  Step content is
    untouched — the layer is lossless by construction — and verification
    passes straight through.
    """

    def __init__(self, inner: ModelOracle, n: int = 2, max_draft: int = 8):
        if n < 1 or max_draft < 1:
            raise ValidationError("n and max_draft must be >= 1")
        self.inner = inner
        self.n = n
        self.max_draft = max_draft

    def generate_step(self, context: ReasoningContext) -> Step | None:
        step = self.inner.generate_step(context)
        if step is None or step.is_empty:
            return step
        emitted, calls = emit_with_lookup(
            step.text.split(), context_tokens(context), self.n, self.max_draft
        )
        assert emitted == step.text.split()
        return replace(step, generation_calls=calls)

    def generate_candidates(self, context: ReasoningContext, width: int) -> list[Step]:
        return self.inner.generate_candidates(context, width)

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        return self.inner.verify(query)
