"""A synthetic reasoning environment with computable ground truth.

Tasks are modular-arithmetic chains: from a start state, apply a fixed list
of operations (``add n`` / ``mul n``) and report the final state.  Every
reasoning step states one transition, e.g. ``apply add 5 to 17 gives 22``,
so two steps are semantically equivalent exactly when they claim the same
resulting state from the same prior state — a brute-forceable equivalence
relation that stands in for "the two steps lead the rest of the reasoning
to the same place".

The simulated draft model is correct with a configurable probability and
sometimes paraphrases a correct transition with a different operation that
reaches the same state (so exact-match acceptance would wrongly reject
it).  The simulated target model is always correct: its output is the
accuracy ceiling, and giving it errors would confound every
verification-quality measurement.  Verifiers are two-class (easy/hard
instances) with per-class accuracy and reported-confidence centers, which
is enough to shape any coverage/accuracy operating point.

All randomness is counter-based: every draw is derived by hashing the
world seed together with the draw's coordinates (position, candidate slot,
step texts).  Nothing holds mutable generator state, so oracles are safe
to call from concurrent workers and identical inputs always reproduce
identical outputs.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from .core import ReasoningContext, Step, StepOrigin, ValidationError
from .metrics import CalibrationRecord
from .oracle import (
    Decision,
    ModelOracle,
    OracleError,
    Tier,
    VerificationQuery,
    VerificationVerdict,
)

_U64 = 1 << 64


class SimOracleError(OracleError):
    """A step fed to the simulated world could not be interpreted."""


def derive_u64(*parts: object) -> int:
    """Stable 64-bit value from a tuple of coordinates (counter-based RNG)."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def _unit(*parts: object) -> float:
    """Uniform [0, 1) draw keyed by coordinates."""
    return derive_u64(*parts) / _U64


def derive_seed(seed: int, *parts: object) -> int:
    """Child seed for an indexed sub-experiment (one trace of a sweep)."""
    return derive_u64(seed, "child", *parts)


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-class accuracy and reported confidence of a simulated verifier.

    With the confidence centers left at their defaults (the class
    accuracies) and zero noise, the verifier is calibrated by
    construction: verdicts reporting confidence ``c`` are correct with
    probability exactly ``c``.  Setting a center above its class accuracy
    models overconfidence, which some coverage/accuracy shapes require.
    Reported confidence is clamped to [0.5, 1], matching the binary
    verdict convention.
    """

    easy_accuracy: float
    hard_accuracy: float
    confidence_noise: float = 0.0
    easy_confidence: float | None = None
    hard_confidence: float | None = None

    def __post_init__(self) -> None:
        for name in ("easy_accuracy", "hard_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if self.easy_accuracy < self.hard_accuracy:
            raise ValidationError("easy_accuracy must be >= hard_accuracy")
        if self.confidence_noise < 0:
            raise ValidationError("confidence_noise must be non-negative")
        for name in ("easy_confidence", "hard_confidence"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")

    @property
    def easy_center(self) -> float:
        return self.easy_accuracy if self.easy_confidence is None else self.easy_confidence

    @property
    def hard_center(self) -> float:
        return self.hard_accuracy if self.hard_confidence is None else self.hard_confidence

    def to_dict(self) -> dict[str, Any]:
        return {
            "easy_accuracy": self.easy_accuracy,
            "hard_accuracy": self.hard_accuracy,
            "confidence_noise": self.confidence_noise,
            "easy_confidence": self.easy_confidence,
            "hard_confidence": self.hard_confidence,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CalibrationProfile":
        return cls(
            easy_accuracy=float(data["easy_accuracy"]),
            hard_accuracy=float(data["hard_accuracy"]),
            confidence_noise=float(data.get("confidence_noise", 0.0)),
            easy_confidence=None
            if data.get("easy_confidence") is None
            else float(data["easy_confidence"]),
            hard_confidence=None
            if data.get("hard_confidence") is None
            else float(data["hard_confidence"]),
        )


GROUND_TRUTH_PROFILE = CalibrationProfile(easy_accuracy=1.0, hard_accuracy=1.0)


@dataclass(frozen=True)
class SimWorldSpec:
    """Parameters of one synthetic reasoning task and its oracles."""

    chain_length: int
    modulus: int = 97
    draft_step_accuracy: float = 0.9
    draft_verifier: CalibrationProfile = GROUND_TRUTH_PROFILE
    target_verifier: CalibrationProfile = GROUND_TRUTH_PROFILE
    difficulty_mix: float = 0.3
    paraphrase_rate: float = 0.25
    operand_pool: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chain_length < 1:
            raise ValidationError("chain_length must be >= 1")
        if self.modulus < 2:
            raise ValidationError("modulus must be >= 2")
        for name in ("draft_step_accuracy", "difficulty_mix", "paraphrase_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")
        if self.operand_pool is not None and not self.operand_pool:
            raise ValidationError("operand_pool must be None or non-empty")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "chain_length": self.chain_length,
            "modulus": self.modulus,
            "draft_step_accuracy": self.draft_step_accuracy,
            "draft_verifier": self.draft_verifier.to_dict(),
            "target_verifier": self.target_verifier.to_dict(),
            "difficulty_mix": self.difficulty_mix,
            "paraphrase_rate": self.paraphrase_rate,
            "operand_pool": None if self.operand_pool is None else list(self.operand_pool),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimWorldSpec":
        pool = data.get("operand_pool")
        return cls(
            chain_length=int(data["chain_length"]),
            modulus=int(data.get("modulus", 97)),
            draft_step_accuracy=float(data.get("draft_step_accuracy", 0.9)),
            draft_verifier=CalibrationProfile.from_dict(
                data.get("draft_verifier", GROUND_TRUTH_PROFILE.to_dict())
            ),
            target_verifier=CalibrationProfile.from_dict(
                data.get("target_verifier", GROUND_TRUTH_PROFILE.to_dict())
            ),
            difficulty_mix=float(data.get("difficulty_mix", 0.3)),
            paraphrase_rate=float(data.get("paraphrase_rate", 0.25)),
            operand_pool=None if pool is None else tuple(int(x) for x in pool),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class SimStep:
    """A parsed state transition: ``apply <op> <operand> to <prior> gives <result>``."""

    operation: str
    operand: int
    prior_state: int
    resulting_state: int
    final_answer: int | None = None


_TRANSITION_RE = re.compile(
    r"^apply (add|mul) (\d+) to (\d+) gives (\d+)(?: ; final answer (\d+))?$"
)

ANSWER_MARKER = "final answer"


def parse_transition(text: str) -> SimStep:
    """Parse a step text into its transition; raises for anything else."""
    match = _TRANSITION_RE.match(text)
    if match is None:
        raise SimOracleError(f"not a state-transition step: {text!r}")
    return SimStep(
        operation=match.group(1),
        operand=int(match.group(2)),
        prior_state=int(match.group(3)),
        resulting_state=int(match.group(4)),
        final_answer=None if match.group(5) is None else int(match.group(5)),
    )


def render_transition(
    operation: str, operand: int, prior: int, result: int, *, with_marker: bool = False
) -> str:
    text = f"apply {operation} {operand} to {prior} gives {result}"
    if with_marker:
        text += f" ; {ANSWER_MARKER} {result}"
    return text


def apply_operation(operation: str, operand: int, state: int, modulus: int) -> int:
    if operation == "add":
        return (state + operand) % modulus
    if operation == "mul":
        return (state * operand) % modulus
    raise SimOracleError(f"unknown operation {operation!r}")


def ground_truth_equivalent(step_a: Step, step_b: Step, prior_state: int) -> bool:
    """Brute-force equivalence: both steps claim the same resulting state.

    This is the strongest computable form of "the two steps leave the rest
    of the reasoning in the same place": in a world where each step's only
    semantic content is its claimed state transition, two steps are
    interchangeable exactly when their resulting states match.  Every
    simulated verifier is scored against this oracle.
    """
    parsed_a = parse_transition(step_a.text)
    parsed_b = parse_transition(step_b.text)
    if parsed_a.prior_state != prior_state or parsed_b.prior_state != prior_state:
        raise SimOracleError(
            f"steps do not start from prior state {prior_state}: "
            f"{parsed_a.prior_state} vs {parsed_b.prior_state}"
        )
    return parsed_a.resulting_state == parsed_b.resulting_state


class SimWorld:
    """One task instance plus its simulated draft/target oracles."""

    def __init__(self, spec: SimWorldSpec):
        self.spec = spec
        m = spec.modulus
        seed = spec.seed
        self.start_state = derive_u64(seed, "start") % m
        self.operations: list[tuple[str, int]] = []
        for i in range(spec.chain_length):
            kind = "add" if _unit(seed, "op-kind", i) < 0.5 else "mul"
            self.operations.append((kind, self._sample_operand(kind, i)))
        self.difficulty_hard = [
            _unit(seed, "difficulty", i) < spec.difficulty_mix
            for i in range(spec.chain_length)
        ]
        states = [self.start_state]
        for kind, operand in self.operations:
            states.append(apply_operation(kind, operand, states[-1], m))
        self.ground_truth_states = states

    def _sample_operand(self, kind: str, index: int) -> int:
        m = self.spec.modulus
        pool = self.spec.operand_pool
        if pool is not None:
            usable = [c for c in pool if kind == "add" or math.gcd(c % m, m) == 1]
            if not usable:
                usable = list(pool) if kind == "add" else [1]
            return usable[derive_u64(self.spec.seed, "operand", index) % len(usable)] % m
        if kind == "add":
            return derive_u64(self.spec.seed, "operand", index) % m
        # Multiplication operands are kept invertible so one wrong state can
        # never silently merge back onto the ground-truth trajectory.
        units = [c for c in range(1, m) if math.gcd(c, m) == 1]
        return units[derive_u64(self.spec.seed, "operand", index) % len(units)]

    # ------------------------------------------------------------------
    # Task surface
    # ------------------------------------------------------------------

    @property
    def answer_marker(self) -> str:
        return ANSWER_MARKER

    @property
    def ground_truth_answer(self) -> int:
        return self.ground_truth_states[-1]

    @property
    def prompt_text(self) -> str:
        ops = " ".join(f"apply {kind} {operand}" for kind, operand in self.operations)
        return (
            f"start {self.start_state} mod {self.spec.modulus} then {ops} "
            f"report final state"
        )

    def trace_answer_correct(self, final_answer: str) -> bool:
        return final_answer == str(self.ground_truth_answer)

    # ------------------------------------------------------------------
    # Context decoding
    # ------------------------------------------------------------------

    def position_of(self, context: ReasoningContext) -> int:
        return len(context.accepted_steps)

    def state_at(self, context: ReasoningContext) -> int:
        if not context.accepted_steps:
            return self.start_state
        return parse_transition(context.accepted_steps[-1].text).resulting_state

    # ------------------------------------------------------------------
    # Generation
    # ------------------------------------------------------------------

    def draft_step_at(self, position: int, prior: int, slot: int) -> Step | None:
        """The draft model's proposal for ``position`` from state ``prior``.

        Correct with probability ``draft_step_accuracy``; otherwise states
        a perturbed resulting state.  Correct proposals sometimes
        paraphrase the task operation with a different one reaching the
        same state.  Fully determined by (seed, position, slot, prior).
        """
        spec = self.spec
        if position >= spec.chain_length:
            return None
        kind, operand = self.operations[position]
        correct = apply_operation(kind, operand, prior, spec.modulus)
        is_last = position == spec.chain_length - 1
        if _unit(spec.seed, "draft-ok", position, slot) < spec.draft_step_accuracy:
            result = correct
            if _unit(spec.seed, "draft-para", position, slot) < spec.paraphrase_rate:
                kind, operand = self._paraphrase(kind, operand, prior, result, position, slot)
        else:
            delta = 1 + derive_u64(spec.seed, "draft-delta", position, slot) % (spec.modulus - 1)
            result = (correct + delta) % spec.modulus
        text = render_transition(kind, operand, prior, result, with_marker=is_last)
        return Step(text, origin=StepOrigin.DRAFT)

    def _paraphrase(
        self, kind: str, operand: int, prior: int, result: int, position: int, slot: int
    ) -> tuple[str, int]:
        """An alternative (operation, operand) claiming the same transition."""
        m = self.spec.modulus
        alternatives: list[tuple[str, int]] = []
        if kind == "mul":
            alternatives.append(("add", (result - prior) % m))
        elif prior != 0 and math.gcd(prior, m) == 1:
            alternatives.append(("mul", (result * pow(prior, -1, m)) % m))
        if not alternatives:
            return kind, operand
        pick = derive_u64(self.spec.seed, "draft-alt", position, slot) % len(alternatives)
        return alternatives[pick]

    def target_step_at(self, position: int, prior: int) -> Step | None:
        """The target model's step: always the ground-truth-correct transition."""
        spec = self.spec
        if position >= spec.chain_length:
            return None
        kind, operand = self.operations[position]
        result = apply_operation(kind, operand, prior, spec.modulus)
        is_last = position == spec.chain_length - 1
        text = render_transition(kind, operand, prior, result, with_marker=is_last)
        return Step(text, origin=StepOrigin.TARGET)

    def draft_step(self, context: ReasoningContext, slot: int = 0) -> Step | None:
        return self.draft_step_at(self.position_of(context), self.state_at(context), slot)

    def target_step(self, context: ReasoningContext) -> Step | None:
        return self.target_step_at(self.position_of(context), self.state_at(context))

    # ------------------------------------------------------------------
    # Verification
    # ------------------------------------------------------------------

    def verify_at(
        self,
        position: int,
        prior: int,
        draft_step: Step,
        target_step: Step,
        profile: CalibrationProfile,
        tier: Tier,
    ) -> VerificationVerdict:
        """Noisy two-class verdict scored against the brute-force oracle.

        The decision matches ground truth with the class accuracy of the
        instance's difficulty; the reported confidence is the class
        center perturbed by the noise spread, clamped to [0.5, 1].  Draws
        are keyed by (seed, tier, position, step texts), so the same query
        always gets the same verdict.
        """
        spec = self.spec
        truth = ground_truth_equivalent(draft_step, target_step, prior)
        hard = position < spec.chain_length and self.difficulty_hard[position]
        accuracy = profile.hard_accuracy if hard else profile.easy_accuracy
        center = profile.hard_center if hard else profile.easy_center
        key = (spec.seed, tier.value, position, draft_step.text, target_step.text)
        decision_correct = _unit("verify-ok", *key) < accuracy
        equivalent = truth if decision_correct else not truth
        confidence = center
        if profile.confidence_noise > 0:
            eps = (2.0 * _unit("verify-noise", *key) - 1.0) * profile.confidence_noise
            confidence = center + eps
        confidence = min(1.0, max(0.5, confidence))
        return VerificationVerdict(
            decision=Decision.ACCEPT if equivalent else Decision.REJECT,
            confidence=confidence,
            tier=tier,
        )

    def verify(
        self, query: VerificationQuery, profile: CalibrationProfile, tier: Tier
    ) -> VerificationVerdict:
        return self.verify_at(
            self.position_of(query.context),
            self.state_at(query.context),
            query.draft_step,
            query.target_step,
            profile,
            tier,
        )

    # ------------------------------------------------------------------
    # Oracles
    # ------------------------------------------------------------------

    def draft_model(self) -> "SimDraftModel":
        return SimDraftModel(self)

    def target_model(self) -> "SimTargetModel":
        return SimTargetModel(self)


class SimDraftModel(ModelOracle):
    """Draft role: fallible stochastic generator + first-tier verifier."""

    def __init__(self, world: SimWorld):
        self.world = world

    def generate_step(self, context: ReasoningContext) -> Step | None:
        return self.world.draft_step(context, slot=0)

    def generate_candidates(self, context: ReasoningContext, width: int) -> list[Step]:
        if width < 1:
            raise ValidationError("width must be >= 1")
        steps = [self.world.draft_step(context, slot=slot) for slot in range(width)]
        return [step for step in steps if step is not None]

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        return self.world.verify(query, self.world.spec.draft_verifier, Tier.DRAFT)


class SimTargetModel(ModelOracle):
    """Target role: error-free generator + second-tier verifier."""

    def __init__(self, world: SimWorld):
        self.world = world

    def generate_step(self, context: ReasoningContext) -> Step | None:
        return self.world.target_step(context)

    def verify(self, query: VerificationQuery) -> VerificationVerdict:
        return self.world.verify(query, self.world.spec.target_verifier, Tier.TARGET)


# ----------------------------------------------------------------------
# Calibration sampling and coverage/accuracy presets
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ProfilePreset:
    """A verifier profile plus the difficulty mixture it was fitted with."""

    profile: CalibrationProfile
    difficulty_mix: float
    note: str = ""


# Two-class operating points fitted by mixture arithmetic so that, at a 0.9
# threshold, (overall accuracy, hi-confidence accuracy, coverage) land on
# the published behaviour of a small verifier paired with a 32B target:
# roughly (0.56, 0.81, 0.61) for the weaker pairing and (0.71, 0.87, 0.85)
# for the stronger one.  The stronger triple is not exactly realisable
# (coverage x hiconf already exceeds the overall figure), so its preset
# aims at the nearest feasible point (0.725, 0.85, 0.84).
FIGURE_SHAPED_PRESETS: dict[str, ProfilePreset] = {
    "deepseek-1.5b": ProfilePreset(
        profile=CalibrationProfile(
            easy_accuracy=0.81,
            hard_accuracy=0.169,
            easy_confidence=0.95,
            hard_confidence=0.60,
        ),
        difficulty_mix=0.39,
        note="weak draft verifier, overconfident on easy instances",
    ),
    "qwen3-1.7b": ProfilePreset(
        profile=CalibrationProfile(
            easy_accuracy=0.85,
            hard_accuracy=0.06875,
            easy_confidence=0.95,
            hard_confidence=0.60,
        ),
        difficulty_mix=0.16,
        note="stronger draft verifier, high easy-class coverage",
    ),
}


def sample_calibration_records(
    profile: CalibrationProfile,
    difficulty_mix: float,
    n: int,
    seed: int,
    *,
    draft_step_accuracy: float = 0.7,
    modulus: int = 97,
    paraphrase_rate: float = 0.25,
) -> list[CalibrationRecord]:
    """Score ``n`` verifier decisions against the brute-force oracle.

    Each sample is a real verification instance: the draft proposal and
    the ground-truth target step for one position of a long synthetic
    chain, pushed through the simulated verifier end to end.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    spec = SimWorldSpec(
        chain_length=n,
        modulus=modulus,
        draft_step_accuracy=draft_step_accuracy,
        draft_verifier=profile,
        target_verifier=GROUND_TRUTH_PROFILE,
        difficulty_mix=difficulty_mix,
        paraphrase_rate=paraphrase_rate,
        seed=seed,
    )
    world = SimWorld(spec)
    records: list[CalibrationRecord] = []
    for position in range(n):
        prior = world.ground_truth_states[position]
        draft = world.draft_step_at(position, prior, slot=0)
        target = world.target_step_at(position, prior)
        assert draft is not None and target is not None
        verdict = world.verify_at(position, prior, draft, target, profile, Tier.DRAFT)
        truth = ground_truth_equivalent(draft, target, prior)
        correct = (verdict.decision is Decision.ACCEPT) == truth
        records.append(CalibrationRecord(confidence=verdict.confidence, correct=correct))
    return records
