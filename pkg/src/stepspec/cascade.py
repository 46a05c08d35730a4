"""The speculation engine: draft k steps, verify through a two-tier cascade,
keep the accepted prefix, fall back to the target on full rejection.

Linear mode follows the three-stage procedure exactly:

* Stage 1 — the draft model proposes ``k`` steps autoregressively.
* Stage 2 — for each position ``j`` the target generates a rival step
  conditioned on the context plus the draft prefix before ``j`` (so the
  rival and the draft are competing versions of the *same* step), then
  verdicts are computed sequentially until the first rejection.  Each
  verdict comes from :func:`cascaded_verify`: the draft verifier decides
  when its confidence clears the threshold, otherwise the target verifier
  decides.
* Stage 3 — accepted drafts are appended; on a full rejection the target
  generates one fresh step from the unmodified context (or, under the
  adopt policy, its already-generated rival is reused).

Tree mode widens Stage 1 to ``W`` candidates per layer and extends the
context along the accepted candidate with the highest verification
confidence.

Rival generations within an iteration are independent given their prefixes
and may be dispatched concurrently to backends; verdict processing and
context mutation are strictly sequential.  This implementation dispatches
them in order (the cost model already charges the batch as one parallel
round), and multiple traces can run concurrently with independent engines
sharing stateless backends.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Sequence

from .core import (
    BudgetExceededError,
    ReasoningContext,
    ReasoningTrace,
    RejectPolicy,
    RunConfig,
    Step,
    StepOrigin,
    Termination,
    ValidationError,
    extract_final_answer,
)
from .metrics import CostLedger
from .oracle import (
    Decision,
    ModelOracle,
    OracleError,
    StepVerifier,
    Tier,
    VerificationError,
    VerificationQuery,
    VerificationVerdict,
)


class EscalationError(OracleError):
    """A verifier tier failed in a way the cascade cannot absorb."""

    def __init__(self, tier: Tier, message: str):
        super().__init__(message)
        self.tier = tier


def cascaded_verify(
    query: VerificationQuery,
    gamma: float,
    draft_verifier: StepVerifier,
    target_verifier: StepVerifier,
    *,
    always_escalate: bool = False,
) -> VerificationVerdict:
    """Two-tier verdict: the draft decides iff its confidence >= gamma.

    The comparison is inclusive, so at confidence exactly gamma the draft
    verdict stands and the target verifier is not invoked.  A draft-tier
    failure escalates (it is counted like any other escalation, not
    fatal); a target-tier failure raises :class:`EscalationError`.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    draft_verdict: VerificationVerdict | None = None
    try:
        draft_verdict = draft_verifier.verify(query)
    except VerificationError:
        draft_verdict = None
    if (
        draft_verdict is not None
        and not always_escalate
        and draft_verdict.confidence >= gamma
    ):
        if draft_verdict.tier is not Tier.DRAFT:
            draft_verdict = replace(draft_verdict, tier=Tier.DRAFT)
        return draft_verdict
    try:
        target_verdict = target_verifier.verify(query)
    except VerificationError as exc:
        raise EscalationError(Tier.TARGET, f"target verifier failed: {exc}") from exc
    if target_verdict.tier is not Tier.TARGET:
        target_verdict = replace(target_verdict, tier=Tier.TARGET)
    return target_verdict


def select_best_candidate(
    candidates: Sequence[tuple[Step, VerificationVerdict]],
) -> Step:
    """Return the accepted candidate with maximal verification confidence.

    Ties break toward the lowest index, deterministically.  Every
    candidate must carry an accepting verdict; an empty list is a
    contract violation.
    """
    if not candidates:
        raise ValidationError("candidate set is empty")
    best = 0
    for i, (_, verdict) in enumerate(candidates):
        if verdict.decision is not Decision.ACCEPT:
            raise ValidationError("candidates must all carry accepting verdicts")
        if verdict.confidence > candidates[best][1].confidence:
            best = i
    return candidates[best][0]


@dataclass(frozen=True)
class TreeLayerRecord:
    """All candidates of one tree layer, their verdicts, and the pick.

    ``selected_index`` is None when every candidate was rejected (the
    layer that ended the iteration).
    """

    candidates: tuple[Step, ...]
    verdicts: tuple[VerificationVerdict, ...]
    selected_index: int | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "selected_index": self.selected_index,
        }


@dataclass(frozen=True)
class IterationRecord:
    """What one engine iteration drafted, verified, and kept.

    ``accepted_count`` is the number of verification acceptances (m);
    ``appended_count`` is how many steps actually fit the budget, which
    can differ only when ``budget_truncated`` is set (or exceed m by one
    under the adopt policy).  In tree mode ``drafted`` holds the selected
    candidate chain and ``layers`` carries the full per-layer detail.
    """

    drafted: tuple[Step, ...]
    target_steps: tuple[Step, ...]
    verdicts: tuple[VerificationVerdict, ...]
    accepted_count: int
    appended_count: int
    fallback_used: bool
    candidate_set_size: int = 1
    budget_truncated: bool = False
    layers: tuple[TreeLayerRecord, ...] | None = None

    def __post_init__(self) -> None:
        if self.accepted_count > len(self.drafted):
            raise ValidationError("accepted_count exceeds drafted steps")
        if self.fallback_used != (self.accepted_count == 0):
            raise ValidationError("fallback_used must hold exactly when nothing was accepted")
        if len(self.verdicts) not in (self.accepted_count, self.accepted_count + 1):
            raise ValidationError(
                "verdicts must cover the accepted prefix plus at most the terminal rejection"
            )
        if self.candidate_set_size < 1:
            raise ValidationError("candidate_set_size must be positive")

    @property
    def rejection_occurred(self) -> bool:
        return len(self.verdicts) == self.accepted_count + 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "drafted": [s.to_dict() for s in self.drafted],
            "target_steps": [s.to_dict() for s in self.target_steps],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "accepted_count": self.accepted_count,
            "appended_count": self.appended_count,
            "fallback_used": self.fallback_used,
            "candidate_set_size": self.candidate_set_size,
            "budget_truncated": self.budget_truncated,
            "layers": None if self.layers is None else [l.to_dict() for l in self.layers],
        }


def _gen_calls(step: Step) -> int:
    """Forward passes spent on a step; one per token unless a layer said otherwise."""
    return step.generation_calls if step.generation_calls is not None else step.estimated_tokens


class _Stage3:
    """Context management shared by the linear and tree iteration paths."""

    def __init__(self, context: ReasoningContext, ledger: CostLedger):
        self.context = context
        self.ledger = ledger
        self.appended = 0
        self.truncated = False

    def try_append(self, step: Step) -> bool:
        try:
            self.context = self.context.append(step)
        except BudgetExceededError:
            self.truncated = True
            return False
        self.appended += 1
        self.ledger.accepted_tokens += step.estimated_tokens
        return True

    def append_accepted(self, steps: Sequence[Step]) -> None:
        for step in steps:
            if not self.try_append(step):
                break

    def adopt_rival(self, rival: Step) -> None:
        # Already generated (and charged) in Stage 2; only the append is new.
        self.try_append(replace(rival, origin=StepOrigin.TARGET))

    def regenerate_fallback(self, target: ModelOracle, base: ReasoningContext) -> bool:
        """Fresh target step from the unmodified context; False at end of sequence."""
        step = target.generate_step(base)
        if step is None:
            return False
        step = replace(step, origin=StepOrigin.FALLBACK)
        self.ledger.fallback_gen_tokens += step.estimated_tokens
        self.ledger.fallback_gen_calls += _gen_calls(step)
        self.try_append(step)
        return True


def run_iteration(
    context: ReasoningContext,
    config: RunConfig,
    draft: ModelOracle,
    target: ModelOracle,
    ledger: CostLedger,
) -> tuple[ReasoningContext, IterationRecord | None]:
    """One linear speculation iteration.

    Returns the advanced context and its record, or ``(context, None)``
    when both models signalled end of sequence and nothing could be
    generated at all.
    """
    drafted = draft.generate_steps(context, config.draft_steps)
    ledger.draft_gen_tokens += sum(s.estimated_tokens for s in drafted)

    # Stage 2: rival steps, one per drafted position, each conditioned on
    # the draft prefix before it.  The batch is charged as one parallel
    # round (the longest member) plus its total tokens.
    rivals: list[Step] = []
    for j in range(len(drafted)):
        rival = target.generate_step(context.extend_speculative(drafted[:j]))
        if rival is None:
            break
        rivals.append(rival)
    if rivals:
        ledger.target_gen_tokens += sum(r.estimated_tokens for r in rivals)
        ledger.target_gen_calls += sum(_gen_calls(r) for r in rivals)
        ledger.target_parallel_units += max(_gen_calls(r) for r in rivals)

    verdicts: list[VerificationVerdict] = []
    m = 0
    rejected = False
    for j, (draft_step, rival) in enumerate(zip(drafted, rivals)):
        query = VerificationQuery(
            context=context.extend_speculative(drafted[:j]),
            draft_step=draft_step,
            target_step=rival,
        )
        verdict = cascaded_verify(
            query, config.gamma, draft, target, always_escalate=config.always_escalate
        )
        ledger.draft_verify_calls += 1
        if verdict.tier is Tier.TARGET:
            ledger.target_verify_calls += 1
        verdicts.append(verdict)
        if verdict.decision is Decision.ACCEPT:
            m += 1
        else:
            rejected = True
            break
    ledger.steps_accepted += m
    if rejected:
        ledger.steps_rejected += 1

    stage3 = _Stage3(context, ledger)
    fallback_used = False
    if m > 0:
        stage3.append_accepted(drafted[:m])
        if (
            rejected
            and not stage3.truncated
            and config.reject_policy is RejectPolicy.ADOPT_TARGET_STEP
        ):
            stage3.adopt_rival(rivals[m])
    else:
        fallback_used = True
        ledger.fallbacks += 1
        if config.reject_policy is RejectPolicy.ADOPT_TARGET_STEP and rivals:
            stage3.adopt_rival(rivals[0])
        elif not stage3.regenerate_fallback(target, context):
            if not drafted:
                # Nothing drafted and nothing to fall back on: end of sequence.
                ledger.fallbacks -= 1
                return context, None

    record = IterationRecord(
        drafted=tuple(drafted),
        target_steps=tuple(rivals),
        verdicts=tuple(verdicts),
        accepted_count=m,
        appended_count=stage3.appended,
        fallback_used=fallback_used,
        candidate_set_size=1,
        budget_truncated=stage3.truncated,
    )
    return stage3.context, record


def run_tree_iteration(
    context: ReasoningContext,
    config: RunConfig,
    draft: ModelOracle,
    target: ModelOracle,
    ledger: CostLedger,
) -> tuple[ReasoningContext, IterationRecord | None]:
    """One tree-structured iteration: W candidates per layer, argmax extension.

    Each layer drafts ``tree_width`` candidates from the selected prefix,
    generates one rival step from that same prefix, verifies every
    candidate against the rival through the cascade (all W verifications
    are charged), and extends along the accepted candidate with the
    highest confidence.  A layer with no accepted candidate triggers the
    linear fallback policy and ends the iteration.

    Width 1 is the degenerate case and is delegated to
    :func:`run_iteration`, which it must match exactly.
    """
    if config.tree_width == 1:
        return run_iteration(context, config, draft, target, ledger)

    selected: list[Step] = []
    layers: list[TreeLayerRecord] = []
    verdict_summary: list[VerificationVerdict] = []
    rivals: list[Step] = []
    rejected = False
    for _ in range(config.draft_steps):
        prefix = context.extend_speculative(selected)
        candidates = draft.generate_candidates(prefix, config.tree_width)
        if not candidates:
            break
        ledger.draft_gen_tokens += sum(c.estimated_tokens for c in candidates)
        rival = target.generate_step(prefix)
        if rival is None:
            break
        rivals.append(rival)
        rival_calls = _gen_calls(rival)
        ledger.target_gen_tokens += rival.estimated_tokens
        ledger.target_gen_calls += rival_calls
        ledger.target_parallel_units += rival_calls

        layer_verdicts: list[VerificationVerdict] = []
        for candidate in candidates:
            query = VerificationQuery(prefix, candidate, rival)
            verdict = cascaded_verify(
                query, config.gamma, draft, target, always_escalate=config.always_escalate
            )
            ledger.draft_verify_calls += 1
            if verdict.tier is Tier.TARGET:
                ledger.target_verify_calls += 1
            layer_verdicts.append(verdict)

        accepted = [
            (candidate, verdict)
            for candidate, verdict in zip(candidates, layer_verdicts)
            if verdict.decision is Decision.ACCEPT
        ]
        if not accepted:
            rejected = True
            layers.append(TreeLayerRecord(tuple(candidates), tuple(layer_verdicts), None))
            verdict_summary.append(layer_verdicts[0])
            ledger.steps_rejected += 1
            break
        best = select_best_candidate(accepted)
        best_index = next(i for i, c in enumerate(candidates) if c is best)
        selected.append(best)
        layers.append(TreeLayerRecord(tuple(candidates), tuple(layer_verdicts), best_index))
        verdict_summary.append(layer_verdicts[best_index])
        ledger.steps_accepted += 1
        if config.answer_marker in best.text:
            break

    m = len(selected)
    stage3 = _Stage3(context, ledger)
    fallback_used = False
    if m > 0:
        stage3.append_accepted(selected)
        if (
            rejected
            and not stage3.truncated
            and config.reject_policy is RejectPolicy.ADOPT_TARGET_STEP
        ):
            stage3.adopt_rival(rivals[-1])
    else:
        fallback_used = True
        ledger.fallbacks += 1
        if config.reject_policy is RejectPolicy.ADOPT_TARGET_STEP and rivals:
            stage3.adopt_rival(rivals[0])
        elif not stage3.regenerate_fallback(target, context):
            if not layers:
                ledger.fallbacks -= 1
                return context, None

    record = IterationRecord(
        drafted=tuple(selected),
        target_steps=tuple(rivals),
        verdicts=tuple(verdict_summary),
        accepted_count=m,
        appended_count=stage3.appended,
        fallback_used=fallback_used,
        candidate_set_size=config.tree_width,
        budget_truncated=stage3.truncated,
        layers=tuple(layers),
    )
    return stage3.context, record


def run_trace(
    prompt: str,
    config: RunConfig,
    draft: ModelOracle,
    target: ModelOracle,
) -> ReasoningTrace:
    """Iterate the engine until the trace terminates.

    Termination: the latest step contains the answer marker, both models
    signal end of sequence, or the token budget is exhausted (normal,
    flagged in the trace).
    """
    if not prompt:
        raise ValidationError("prompt must be non-empty")
    context = ReasoningContext.create(prompt, config.token_budget)
    ledger = CostLedger()
    iterations: list[IterationRecord] = []
    iterate = run_tree_iteration if config.tree_width > 1 else run_iteration
    while True:
        if context.accepted_steps and config.answer_marker in context.accepted_steps[-1].text:
            termination = Termination.ANSWER_MARKER
            break
        new_context, record = iterate(context, config, draft, target, ledger)
        if record is None:
            termination = Termination.END_OF_SEQUENCE
            break
        iterations.append(record)
        context = new_context
        if record.budget_truncated:
            termination = Termination.BUDGET_EXHAUSTED
            break
        if record.appended_count == 0:
            # Nothing advanced and the budget is intact: the models are done.
            termination = Termination.END_OF_SEQUENCE
            break
    return ReasoningTrace(
        context=context,
        final_answer=extract_final_answer(context, config.answer_marker),
        iterations=tuple(iterations),
        ledger=ledger,
        termination=termination,
    )
