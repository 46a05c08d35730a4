"""Generator and verifier contracts shared by simulated and remote backends.

A backend plays one of two roles per model: propose the next reasoning step
(generator) or judge whether a drafted step is semantically equivalent to
the rival step the stronger model produced for the same position
(verifier).  Both roles are bundled on one object per model so the engine
can be handed exactly two oracles, a draft and a target.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum

from .core import ReasoningContext, Step, ValidationError


class OracleError(Exception):
    """Base class for backend failures."""


class GenerationError(OracleError):
    """A generator could not produce a step."""


class VerificationError(OracleError):
    """A verifier could not produce a verdict."""


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Tier(str, Enum):
    """Which model answered: the cheap draft or the expensive target."""

    DRAFT = "draft"
    TARGET = "target"


@dataclass(frozen=True)
class VerificationQuery:
    """One equivalence question: is the drafted step as good as the rival?

    ``context`` is the conditioning prefix both steps continue from: the
    accepted trace plus any draft prefix already speculated this iteration.
    """

    context: ReasoningContext
    draft_step: Step
    target_step: Step

    def __post_init__(self) -> None:
        if self.draft_step.is_empty or self.target_step.is_empty:
            raise ValidationError("verification requires two non-empty steps")


@dataclass(frozen=True)
class VerificationVerdict:
    """A verifier's decision, its confidence, and the tier that decided."""

    decision: Decision
    confidence: float
    tier: Tier

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"confidence must be in [0, 1], got {self.confidence}"
            )

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT

    def to_dict(self) -> dict[str, object]:
        return {
            "decision": self.decision.value,
            "confidence": self.confidence,
            "tier": self.tier.value,
        }


def verdict_from_decision_probability(p_accept: float, tier: Tier) -> VerificationVerdict:
    """Turn a binary accept-probability into a verdict.

    The decision is the majority class and the confidence is the
    probability mass assigned to it, so confidence is always >= 0.5 here.
    A tie at exactly 0.5 resolves to accept; arbitrary but fixed.
    """
    if math.isnan(p_accept) or not 0.0 <= p_accept <= 1.0:
        raise ValidationError(f"p_accept must be in [0, 1], got {p_accept}")
    decision = Decision.ACCEPT if p_accept >= 0.5 else Decision.REJECT
    return VerificationVerdict(
        decision=decision,
        confidence=max(p_accept, 1.0 - p_accept),
        tier=tier,
    )


class StepGenerator(ABC):
    """Proposes reasoning steps; returns ``None`` at end of sequence."""

    @abstractmethod
    def generate_step(self, context: ReasoningContext) -> Step | None:
        """One step conditioned on the context, or ``None`` if done."""

    def generate_steps(self, context: ReasoningContext, k: int) -> list[Step]:
        """Up to ``k`` steps, each conditioned on the ones before it.

        Stops early at end of sequence.  ``generate_steps(ctx, 1)`` behaves
        identically to ``generate_step(ctx)``.
        """
        if k < 1:
            raise ValidationError("k must be >= 1")
        steps: list[Step] = []
        for _ in range(k):
            step = self.generate_step(context.extend_speculative(steps))
            if step is None:
                break
            steps.append(step)
        return steps

    def generate_candidates(self, context: ReasoningContext, width: int) -> list[Step]:
        """``width`` alternative next steps for tree-structured drafting.

        The default supports only width 1 (a single deterministic
        proposal); backends capable of diverse sampling override this.
        """
        if width < 1:
            raise ValidationError("width must be >= 1")
        if width != 1:
            raise GenerationError(
                f"{type(self).__name__} cannot draft {width} distinct candidates"
            )
        step = self.generate_step(context)
        return [] if step is None else [step]


class StepVerifier(ABC):
    """Judges semantic equivalence of a drafted step against its rival."""

    @abstractmethod
    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        """Deterministic given (query, seed) for simulated verifiers."""


class ModelOracle(StepGenerator, StepVerifier, ABC):
    """One model exposing both roles; what the cascade engine consumes."""
