"""Value types for step-segmented reasoning traces.

A reasoning trace is an ordered sequence of *steps*: spans of text that end
at a boundary delimiter during generation.  Everything in this module is an
immutable value; engines advance by constructing new contexts rather than
mutating shared state, so these types can be handed to concurrent workers
freely.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Sequence

if TYPE_CHECKING:
    from .cascade import IterationRecord
    from .metrics import CostLedger

TRACE_SCHEMA_VERSION = 1

DEFAULT_DELIMITER_LITERAL = "\n\n"


class ValidationError(ValueError):
    """A field value violates its documented range or structure."""


class BudgetExceededError(RuntimeError):
    """Appending a step would push the context past its token budget."""


class StepOrigin(str, Enum):
    """Which model role produced a step."""

    DRAFT = "draft"
    TARGET = "target"
    FALLBACK = "fallback"


class RejectPolicy(str, Enum):
    """What the engine does with the position where verification rejected.

    ``REGENERATE`` follows the literal three-stage procedure: on a full
    rejection the target regenerates the step from the unmodified context.
    ``ADOPT_TARGET_STEP`` reuses the target's already-generated rival step
    for the rejected position instead of discarding it.
    """

    REGENERATE = "regenerate"
    ADOPT_TARGET_STEP = "adopt_target_step"


class Termination(str, Enum):
    """Why a trace stopped."""

    ANSWER_MARKER = "answer_marker"
    END_OF_SEQUENCE = "end_of_sequence"
    BUDGET_EXHAUSTED = "budget_exhausted"


def estimate_tokens(text: str) -> int:
    """Whitespace token count; the fallback when no backend supplies exact counts."""
    return len(text.split())


@dataclass(frozen=True)
class BoundaryDelimiter:
    """The literal string that terminates a reasoning step.

    Configurable because the double-newline convention is an adopted
    formatting choice of long reasoning traces, not a requirement.
    """

    literal: str = DEFAULT_DELIMITER_LITERAL

    def __post_init__(self) -> None:
        if not self.literal:
            raise ValidationError("boundary delimiter must be non-empty")


DEFAULT_DELIMITER = BoundaryDelimiter()


@dataclass(frozen=True)
class Step:
    """One reasoning unit: a text span with its boundary delimiter stripped.

    Attributes:
        text: The span content.  Must not contain the boundary delimiter.
        estimated_tokens: Whitespace-token count unless a backend supplied
            an exact count.  ``0`` only for the empty step, which is never
            valid trace content.
        origin: Which model role produced the step.
        incomplete: True when generation stopped mid-step (token cap or
            budget exhaustion) instead of at a delimiter.
        generation_calls: Forward passes spent producing the step, when a
            speculation layer makes that fewer than one per token.  ``None``
            means one call per token.
    """

    text: str
    estimated_tokens: int | None = None
    origin: StepOrigin = StepOrigin.DRAFT
    incomplete: bool = False
    generation_calls: int | None = None

    def __post_init__(self) -> None:
        if self.estimated_tokens is None:
            object.__setattr__(self, "estimated_tokens", estimate_tokens(self.text))
        if self.estimated_tokens < 0:
            raise ValidationError("estimated_tokens must be non-negative")
        if self.text and self.estimated_tokens < 1:
            raise ValidationError("non-empty step must have estimated_tokens >= 1")
        if not self.text and self.estimated_tokens != 0:
            raise ValidationError("empty step must have estimated_tokens == 0")

    @property
    def is_empty(self) -> bool:
        return not self.text

    def check_delimiter_free(self, delimiter: BoundaryDelimiter = DEFAULT_DELIMITER) -> None:
        """Raise if the step text contains the boundary delimiter."""
        if delimiter.literal in self.text:
            raise ValidationError(
                f"step text contains the boundary delimiter {delimiter.literal!r}"
            )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "text": self.text,
            "estimated_tokens": self.estimated_tokens,
            "origin": self.origin.value,
            "incomplete": self.incomplete,
        }
        if self.generation_calls is not None:
            out["generation_calls"] = self.generation_calls
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Step":
        return cls(
            text=data["text"],
            estimated_tokens=data.get("estimated_tokens"),
            origin=StepOrigin(data.get("origin", "draft")),
            incomplete=bool(data.get("incomplete", False)),
            generation_calls=data.get("generation_calls"),
        )


@dataclass(frozen=True)
class SplitResult:
    """Output of :func:`split_into_steps`.

    ``dropped_empty`` counts segments that were empty after trimming
    (consecutive delimiters); they are diagnostics, not steps.
    """

    steps: tuple[Step, ...]
    dropped_empty: int = 0


def split_into_steps(
    text: str,
    delimiter: BoundaryDelimiter = DEFAULT_DELIMITER,
    origin: StepOrigin = StepOrigin.DRAFT,
) -> SplitResult:
    """Segment generated text into steps at the boundary delimiter.

    A trailing fragment without a closing delimiter is returned as a final
    step flagged ``incomplete``; callers decide whether to keep it.  Joining
    the complete steps with the delimiter and appending one trailing
    delimiter per step reconstructs the input exactly, as long as no
    segment was dropped as empty.

    Delimiters inside content (for example a blank line within a code
    block) split naively; this is a known fidelity limit of the whitespace
    convention.
    """
    if not text:
        return SplitResult(steps=())
    pieces = text.split(delimiter.literal)
    # An empty final piece means the text ended at a consumed delimiter
    # (text.endswith would disagree for overlapping delimiters like "\n\n\n").
    ends_complete = pieces[-1] == ""
    if ends_complete:
        pieces = pieces[:-1]
    steps: list[Step] = []
    dropped = 0
    for idx, piece in enumerate(pieces):
        last = idx == len(pieces) - 1
        if not piece.strip():
            dropped += 1
            continue
        steps.append(Step(piece, origin=origin, incomplete=(last and not ends_complete)))
    return SplitResult(steps=tuple(steps), dropped_empty=dropped)


@dataclass(frozen=True)
class ReasoningContext:
    """The prompt plus every accepted step, with budget accounting.

    ``tokens_used`` counts the prompt once (at creation) plus the estimated
    tokens of every accepted step, and can never exceed ``token_budget``.
    """

    prompt: str
    accepted_steps: tuple[Step, ...] = ()
    tokens_used: int = 0
    token_budget: int = 1
    prompt_tokens: int = 0

    def __post_init__(self) -> None:
        if self.token_budget < 1:
            raise ValidationError("token_budget must be positive")
        if self.tokens_used < 0:
            raise ValidationError("tokens_used must be non-negative")
        if self.tokens_used > self.token_budget:
            raise BudgetExceededError(
                f"tokens_used {self.tokens_used} exceeds budget {self.token_budget}"
            )

    @classmethod
    def create(
        cls, prompt: str, token_budget: int, prompt_tokens: int | None = None
    ) -> "ReasoningContext":
        if prompt_tokens is None:
            prompt_tokens = estimate_tokens(prompt)
        return cls(
            prompt=prompt,
            accepted_steps=(),
            tokens_used=prompt_tokens,
            token_budget=token_budget,
            prompt_tokens=prompt_tokens,
        )

    @property
    def tokens_remaining(self) -> int:
        return self.token_budget - self.tokens_used

    def append(self, step: Step) -> "ReasoningContext":
        """Return a new context extended by ``step``; see :func:`append_step`."""
        return append_step(self, step)

    def extend_speculative(self, steps: Sequence[Step]) -> "ReasoningContext":
        """Extend with unverified steps for conditioning only.

        Speculative views skip the budget check: they exist so generators
        and verifiers can condition on a draft prefix that may never be
        accepted.  The real context still goes through :func:`append_step`.
        """
        if not steps:
            return self
        used = self.tokens_used + sum(s.estimated_tokens for s in steps)
        return replace(
            self,
            accepted_steps=self.accepted_steps + tuple(steps),
            tokens_used=used,
            token_budget=max(self.token_budget, used),
        )

    def rendered(self, delimiter: BoundaryDelimiter = DEFAULT_DELIMITER) -> str:
        """The textual form a completion backend would be prompted with."""
        parts = [self.prompt]
        parts.extend(step.text for step in self.accepted_steps)
        return delimiter.literal.join(parts) + (delimiter.literal if self.accepted_steps else "")

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "accepted_steps": [s.to_dict() for s in self.accepted_steps],
            "tokens_used": self.tokens_used,
            "token_budget": self.token_budget,
            "prompt_tokens": self.prompt_tokens,
        }


def append_step(context: ReasoningContext, step: Step) -> ReasoningContext:
    """Extend the context by one accepted step, refusing budget overruns.

    Raises:
        ValidationError: the step is empty.
        BudgetExceededError: the step does not fit; the context is unchanged.
    """
    if step.is_empty:
        raise ValidationError("cannot append an empty step")
    used = context.tokens_used + step.estimated_tokens
    if used > context.token_budget:
        raise BudgetExceededError(
            f"appending {step.estimated_tokens} tokens would use {used} "
            f"of {context.token_budget}"
        )
    return replace(
        context,
        accepted_steps=context.accepted_steps + (step,),
        tokens_used=used,
    )


@dataclass(frozen=True)
class RunConfig:
    """Engine configuration for one run.

    Attributes:
        gamma: Confidence threshold gating escalation to the target
            verifier; the comparison is inclusive (confidence >= gamma
            keeps the draft verdict).
        draft_steps: Steps speculated per iteration (k).
        tree_width: Candidate steps drafted per layer (W); 1 is linear mode.
        token_budget: Hard cap on context size, prompt included.
        seed: Seeds the simulated world; ignored by remote backends.
        reject_policy: See :class:`RejectPolicy`.
        always_escalate: Force every verification to the target tier (the
            draft verifier is still consulted first and counted, but its
            verdict never decides).  No gamma in [0,1] can express this
            because reported confidences live in [0.5, 1] and the
            comparison is inclusive.
        answer_marker: Substring whose appearance in the latest step
            terminates the trace; task convention.
    """

    gamma: float
    token_budget: int
    draft_steps: int = 5
    tree_width: int = 1
    seed: int = 0
    reject_policy: RejectPolicy = RejectPolicy.REGENERATE
    always_escalate: bool = False
    answer_marker: str = "final answer"

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.draft_steps < 1:
            raise ValidationError("draft_steps must be >= 1")
        if self.tree_width < 1:
            raise ValidationError("tree_width must be >= 1")
        if self.token_budget < 1:
            raise ValidationError("token_budget must be positive")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "token_budget": self.token_budget,
            "draft_steps": self.draft_steps,
            "tree_width": self.tree_width,
            "seed": self.seed,
            "reject_policy": self.reject_policy.value,
            "always_escalate": self.always_escalate,
            "answer_marker": self.answer_marker,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return cls(
            gamma=float(data["gamma"]),
            token_budget=int(data["token_budget"]),
            draft_steps=int(data.get("draft_steps", 5)),
            tree_width=int(data.get("tree_width", 1)),
            seed=int(data.get("seed", 0)),
            reject_policy=RejectPolicy(data.get("reject_policy", "regenerate")),
            always_escalate=bool(data.get("always_escalate", False)),
            answer_marker=str(data.get("answer_marker", "final answer")),
        )


def extract_final_answer(context: ReasoningContext, marker: str) -> str:
    """Pull the answer token following the marker in the latest step.

    Returns an empty string when the trace ended without announcing an
    answer (budget exhaustion, end of sequence).
    """
    if not context.accepted_steps:
        return ""
    match = re.search(re.escape(marker) + r"\s+(\S+)", context.accepted_steps[-1].text)
    return match.group(1) if match else ""


@dataclass(frozen=True)
class ReasoningTrace:
    """A completed run: final context, answer, per-iteration records, costs."""

    context: ReasoningContext
    final_answer: str
    iterations: tuple["IterationRecord", ...]
    ledger: "CostLedger"
    termination: Termination

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "context": self.context.to_dict(),
            "final_answer": self.final_answer,
            "iterations": [record.to_dict() for record in self.iterations],
            "ledger": self.ledger.to_dict(),
            "termination": self.termination.value,
        }

    @property
    def step_texts(self) -> tuple[str, ...]:
        return tuple(step.text for step in self.context.accepted_steps)
