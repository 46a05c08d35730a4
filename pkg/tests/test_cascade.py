"""Engine behaviour: the gated verdict rule, iteration stages, tree mode."""

from __future__ import annotations

import random
from dataclasses import replace

import pytest

from conftest import FailingVerifier, ScriptedVerifier, make_context, make_query
from stepspec.cascade import (
    EscalationError,
    IterationRecord,
    cascaded_verify,
    run_iteration,
    run_trace,
    run_tree_iteration,
    select_best_candidate,
)
from stepspec.core import (
    ReasoningContext,
    RejectPolicy,
    RunConfig,
    Step,
    StepOrigin,
    Termination,
    ValidationError,
)
from stepspec.metrics import CostLedger
from stepspec.oracle import (
    Decision,
    ModelOracle,
    Tier,
    VerificationVerdict,
)
from stepspec.simworld import GROUND_TRUTH_PROFILE, SimWorld, SimWorldSpec


def verdict(decision: str, confidence: float, tier: Tier = Tier.DRAFT) -> VerificationVerdict:
    return VerificationVerdict(Decision(decision), confidence, tier)


def reference_cascade_rule(
    p_d: float, gamma: float, r_d: str, r_t: str
) -> tuple[str, str]:
    """Piecewise restatement of the gated rule: (decision, deciding tier)."""
    if p_d >= gamma:
        return r_d, "draft"
    return r_t, "target"


class TestCascadedVerify:
    def test_confident_draft_decides_target_not_called(self):
        draft = ScriptedVerifier([verdict("accept", 0.95)])
        target = ScriptedVerifier([verdict("reject", 1.0, Tier.TARGET)])
        out = cascaded_verify(make_query(), 0.9, draft, target)
        assert out.decision is Decision.ACCEPT
        assert out.tier is Tier.DRAFT
        assert target.calls == 0

    def test_low_confidence_escalates(self):
        draft = ScriptedVerifier([verdict("reject", 0.60)])
        target = ScriptedVerifier([verdict("accept", 0.85, Tier.TARGET)])
        out = cascaded_verify(make_query(), 0.9, draft, target)
        assert out.decision is Decision.ACCEPT
        assert out.tier is Tier.TARGET
        assert target.calls == 1

    def test_boundary_is_inclusive(self):
        draft = ScriptedVerifier([verdict("accept", 0.90)])
        target = ScriptedVerifier([verdict("reject", 1.0, Tier.TARGET)])
        out = cascaded_verify(make_query(), 0.90, draft, target)
        assert out.tier is Tier.DRAFT
        assert target.calls == 0

    def test_gamma_zero_never_escalates(self):
        target = ScriptedVerifier([verdict("reject", 1.0, Tier.TARGET)])
        for conf in [0.5, 0.6, 0.75, 0.9, 1.0]:
            for decision in ("accept", "reject"):
                draft = ScriptedVerifier([verdict(decision, conf)])
                out = cascaded_verify(make_query(), 0.0, draft, target)
                assert out.tier is Tier.DRAFT
        assert target.calls == 0

    def test_grid_matches_piecewise_reference(self):
        # 21x21 grid here; the full 101x101 grid runs in the acceptance suite.
        query = make_query()
        for pi in range(21):
            p_d = pi / 20
            for gi in range(21):
                gamma = gi / 20
                for r_d in ("accept", "reject"):
                    for r_t in ("accept", "reject"):
                        draft = ScriptedVerifier([verdict(r_d, p_d)])
                        target = ScriptedVerifier([verdict(r_t, 0.8, Tier.TARGET)])
                        out = cascaded_verify(query, gamma, draft, target)
                        want_decision, want_tier = reference_cascade_rule(p_d, gamma, r_d, r_t)
                        assert out.decision.value == want_decision
                        assert out.tier.value == want_tier

    def test_always_escalate_overrides_confident_draft(self):
        draft = ScriptedVerifier([verdict("accept", 1.0)])
        target = ScriptedVerifier([verdict("reject", 0.7, Tier.TARGET)])
        out = cascaded_verify(make_query(), 0.9, draft, target, always_escalate=True)
        assert out.decision is Decision.REJECT
        assert out.tier is Tier.TARGET
        assert draft.calls == 1  # still consulted (and paid for)

    def test_draft_failure_escalates(self):
        draft = FailingVerifier()
        target = ScriptedVerifier([verdict("accept", 0.9, Tier.TARGET)])
        out = cascaded_verify(make_query(), 0.0, draft, target)
        assert out.tier is Tier.TARGET
        assert draft.calls == 1

    def test_target_failure_raises_escalation_error(self):
        draft = ScriptedVerifier([verdict("accept", 0.55)])
        target = FailingVerifier()
        with pytest.raises(EscalationError) as err:
            cascaded_verify(make_query(), 0.9, draft, target)
        assert err.value.tier is Tier.TARGET

    def test_gamma_validated(self):
        with pytest.raises(ValidationError):
            cascaded_verify(make_query(), 1.5, ScriptedVerifier([verdict("accept", 1.0)]),
                            ScriptedVerifier([verdict("accept", 1.0)]))

    def test_escalation_monotone_in_gamma(self):
        # A fixed verdict stream; escalations must be non-decreasing in gamma.
        stream = [verdict("accept", c) for c in (0.52, 0.61, 0.70, 0.83, 0.92, 0.99)]
        counts = []
        for gamma in [0.0, 0.3, 0.55, 0.65, 0.8, 0.95, 1.0]:
            escalations = 0
            for v in stream:
                draft = ScriptedVerifier([v])
                target = ScriptedVerifier([verdict("accept", 0.9, Tier.TARGET)])
                out = cascaded_verify(make_query(), gamma, draft, target)
                escalations += out.tier is Tier.TARGET
            counts.append(escalations)
        assert counts == sorted(counts)


class TestSelectBestCandidate:
    def test_argmax(self):
        a, b = Step("A"), Step("B")
        picked = select_best_candidate([(a, verdict("accept", 0.91)), (b, verdict("accept", 0.97))])
        assert picked is b

    def test_tie_breaks_to_lowest_index(self):
        a, b = Step("A"), Step("B")
        picked = select_best_candidate([(a, verdict("accept", 0.95)), (b, verdict("accept", 0.95))])
        assert picked is a

    def test_empty_is_contract_violation(self):
        with pytest.raises(ValidationError):
            select_best_candidate([])

    def test_rejected_candidate_is_contract_violation(self):
        with pytest.raises(ValidationError):
            select_best_candidate([(Step("A"), verdict("reject", 0.9))])

    def test_matches_reference_scan_on_random_vectors(self):
        rng = random.Random(1234)
        for _ in range(200):
            n = rng.randint(1, 8)
            confs = [round(rng.uniform(0.5, 1.0), 3) for _ in range(n)]
            candidates = [(Step(f"c{i}"), verdict("accept", c)) for i, c in enumerate(confs)]
            # reference: linear scan, strict improvement, lowest index on ties
            best_i = 0
            for i, c in enumerate(confs):
                if c > confs[best_i]:
                    best_i = i
            assert select_best_candidate(candidates) is candidates[best_i][0]


# ----------------------------------------------------------------------
# Scripted oracles for precise engine-path tests
# ----------------------------------------------------------------------


class ScriptedModel(ModelOracle):
    """Generator from a (position, slot) -> text table; verifier by callback."""

    def __init__(self, step_for, verdict_for=None):
        self.step_for = step_for
        self.verdict_for = verdict_for
        self.verify_queries = []

    def generate_step(self, context: ReasoningContext) -> Step | None:
        text = self.step_for(len(context.accepted_steps), 0)
        return None if text is None else Step(text)

    def generate_candidates(self, context: ReasoningContext, width: int) -> list[Step]:
        steps = []
        for slot in range(width):
            text = self.step_for(len(context.accepted_steps), slot)
            if text is not None:
                steps.append(Step(text))
        return steps

    def verify(self, query):
        self.verify_queries.append(query)
        return self.verdict_for(query)


def draft_texts(position: int, slot: int) -> str | None:
    return f"d{position}s{slot} w w w" if position < 50 else None


def target_texts(position: int, slot: int) -> str | None:
    return f"t{position} w w w" if position < 50 else None


def accept_all(query) -> VerificationVerdict:
    return verdict("accept", 0.95)


def config(**kwargs) -> RunConfig:
    base = dict(gamma=0.9, token_budget=10_000, draft_steps=5, seed=1)
    base.update(kwargs)
    return RunConfig(**base)


class TestRunIteration:
    def test_full_acceptance(self):
        draft = ScriptedModel(draft_texts, accept_all)
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        ctx, record = run_iteration(make_context(), config(), draft, target, ledger)
        assert record.accepted_count == 5
        assert record.appended_count == 5
        assert not record.fallback_used
        assert len(ctx.accepted_steps) == 5
        assert [s.text for s in ctx.accepted_steps] == [f"d{i}s0 w w w" for i in range(5)]
        assert ledger.steps_accepted == 5
        assert ledger.steps_rejected == 0
        assert ledger.draft_verify_calls == 5
        # every position also produced a rival step
        assert len(record.target_steps) == 5
        assert ledger.target_parallel_units == 4  # one parallel round of 4-token steps

    def test_first_rejection_regenerates_one_target_step(self):
        draft = ScriptedModel(draft_texts, lambda q: verdict("reject", 1.0))
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        ctx, record = run_iteration(make_context(), config(), draft, target, ledger)
        assert record.accepted_count == 0
        assert record.fallback_used
        assert record.appended_count == 1
        assert len(ctx.accepted_steps) == 1
        assert ctx.accepted_steps[0].origin is StepOrigin.FALLBACK
        assert ctx.accepted_steps[0].text == "t0 w w w"
        assert ledger.fallbacks == 1
        assert ledger.fallback_gen_tokens == 4

    def test_verification_stops_at_first_rejection(self):
        def judge(query):
            return verdict("reject" if query.draft_step.text.startswith("d2") else "accept", 1.0)

        draft = ScriptedModel(draft_texts, judge)
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        ctx, record = run_iteration(make_context(), config(), draft, target, ledger)
        assert record.accepted_count == 2
        assert len(record.verdicts) == 3  # two accepts plus the terminal rejection
        assert len(record.drafted) == 5  # drafting itself was not cut short
        assert ledger.draft_verify_calls == 3
        assert len(draft.verify_queries) == 3  # prefix-stop: nothing verified past the reject
        assert record.rejection_occurred

    def test_rejected_iteration_keeps_accepted_prefix(self):
        def judge(query):
            return verdict("reject" if query.draft_step.text.startswith("d3") else "accept", 1.0)

        draft = ScriptedModel(draft_texts, judge)
        target = ScriptedModel(target_texts, accept_all)
        ctx, record = run_iteration(make_context(), config(), draft, target, CostLedger())
        assert [s.text for s in ctx.accepted_steps] == [f"d{i}s0 w w w" for i in range(3)]

    def test_adopt_target_step_on_mid_rejection(self):
        def judge(query):
            return verdict("reject" if query.draft_step.text.startswith("d2") else "accept", 1.0)

        draft = ScriptedModel(draft_texts, judge)
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        ctx, record = run_iteration(
            make_context(),
            config(reject_policy=RejectPolicy.ADOPT_TARGET_STEP),
            draft,
            target,
            ledger,
        )
        assert record.accepted_count == 2
        assert record.appended_count == 3
        assert ctx.accepted_steps[-1].text == "t2 w w w"
        assert ctx.accepted_steps[-1].origin is StepOrigin.TARGET
        assert ledger.fallbacks == 0  # not a fallback: the prefix advanced

    def test_adopt_target_step_on_full_rejection_reuses_rival(self):
        draft = ScriptedModel(draft_texts, lambda q: verdict("reject", 1.0))
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        ctx, record = run_iteration(
            make_context(),
            config(reject_policy=RejectPolicy.ADOPT_TARGET_STEP),
            draft,
            target,
            ledger,
        )
        assert record.fallback_used
        assert ctx.accepted_steps[0].text == "t0 w w w"
        assert ctx.accepted_steps[0].origin is StepOrigin.TARGET
        assert ledger.fallbacks == 1
        assert ledger.fallback_gen_tokens == 0  # rival was already paid for in Stage 2

    def test_budget_truncation_mid_iteration(self):
        draft = ScriptedModel(draft_texts, accept_all)
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        base = ReasoningContext.create("p", 1 + 4 + 4 + 2)  # room for two 4-token steps
        ctx, record = run_iteration(base, config(), draft, target, ledger)
        assert record.accepted_count == 5
        assert record.appended_count == 2
        assert record.budget_truncated
        assert len(ctx.accepted_steps) == 2
        assert ctx.tokens_used <= ctx.token_budget

    def test_escalation_counted_in_ledger(self):
        def low_conf(query):
            return verdict("accept", 0.55)

        draft = ScriptedModel(draft_texts, low_conf)
        target = ScriptedModel(target_texts, lambda q: verdict("accept", 0.9, Tier.TARGET))
        ledger = CostLedger()
        run_iteration(make_context(), config(gamma=0.9), draft, target, ledger)
        assert ledger.draft_verify_calls == 5
        assert ledger.target_verify_calls == 5

    def test_record_invariants_enforced(self):
        with pytest.raises(ValidationError):
            IterationRecord(
                drafted=(Step("a"),),
                target_steps=(),
                verdicts=(),
                accepted_count=0,
                appended_count=0,
                fallback_used=False,  # must be True when nothing accepted
            )


class TestRunTrace:
    def _perfect_world(self, chain_length=10, seed=5):
        spec = SimWorldSpec(
            chain_length=chain_length,
            draft_step_accuracy=1.0,
            draft_verifier=GROUND_TRUTH_PROFILE,
            target_verifier=GROUND_TRUTH_PROFILE,
            seed=seed,
        )
        return SimWorld(spec)

    def test_perfect_draft_ten_steps_two_iterations(self):
        world = self._perfect_world()
        cfg = config(gamma=0.9, draft_steps=5)
        trace = run_trace(world.prompt_text, cfg, world.draft_model(), world.target_model())
        assert len(trace.context.accepted_steps) == 10
        assert len(trace.iterations) == 2
        assert trace.ledger.fallbacks == 0
        assert trace.termination is Termination.ANSWER_MARKER
        assert world.trace_answer_correct(trace.final_answer)

    def test_hopeless_draft_equals_target_only_reference(self):
        spec = SimWorldSpec(
            chain_length=8,
            draft_step_accuracy=0.0,
            draft_verifier=GROUND_TRUTH_PROFILE,
            target_verifier=GROUND_TRUTH_PROFILE,
            seed=11,
        )
        world = SimWorld(spec)
        cfg = config()
        trace = run_trace(world.prompt_text, cfg, world.draft_model(), world.target_model())
        assert all(record.fallback_used for record in trace.iterations)
        # target-only reference run, written independently of the engine
        target = world.target_model()
        ctx = ReasoningContext.create(world.prompt_text, cfg.token_budget)
        while True:
            step = target.generate_step(ctx)
            if step is None:
                break
            ctx = ctx.append(step)
            if world.answer_marker in step.text:
                break
        assert trace.step_texts == tuple(s.text for s in ctx.accepted_steps)
        assert world.trace_answer_correct(trace.final_answer)

    def test_budget_smaller_than_one_step(self):
        world = self._perfect_world(chain_length=5, seed=3)
        prompt_tokens = len(world.prompt_text.split())
        cfg = config(token_budget=prompt_tokens + 2)
        trace = run_trace(world.prompt_text, cfg, world.draft_model(), world.target_model())
        assert trace.termination is Termination.BUDGET_EXHAUSTED
        assert len(trace.context.accepted_steps) == 0
        assert trace.final_answer == ""
        assert len(trace.iterations) == 1

    def test_empty_prompt_rejected(self):
        world = self._perfect_world()
        with pytest.raises(ValidationError):
            run_trace("", config(), world.draft_model(), world.target_model())

    def test_eos_termination_with_scripted_models(self):
        # Both models run dry after 3 steps and no marker ever appears.
        def gen(position, slot):
            return f"g{position} w" if position < 3 else None

        draft = ScriptedModel(gen, accept_all)
        target = ScriptedModel(gen, accept_all)
        trace = run_trace("p", config(), draft, target)
        assert trace.termination is Termination.END_OF_SEQUENCE
        assert len(trace.context.accepted_steps) == 3

    def test_ledger_conservation_linear(self):
        spec = SimWorldSpec(
            chain_length=20,
            draft_step_accuracy=0.7,
            draft_verifier=GROUND_TRUTH_PROFILE,
            target_verifier=GROUND_TRUTH_PROFILE,
            seed=23,
        )
        world = SimWorld(spec)
        trace = run_trace(world.prompt_text, config(), world.draft_model(), world.target_model())
        ledger = trace.ledger
        assert ledger.draft_verify_calls == ledger.steps_accepted + ledger.steps_rejected
        assert ledger.target_verify_calls <= ledger.draft_verify_calls
        assert ledger.steps_accepted + ledger.fallbacks >= 1

    def test_trace_serialization_schema(self):
        world = self._perfect_world(chain_length=4, seed=2)
        trace = run_trace(world.prompt_text, config(), world.draft_model(), world.target_model())
        doc = trace.to_dict()
        assert doc["schema_version"] == 1
        assert doc["termination"] == "answer_marker"
        assert len(doc["iterations"]) == len(trace.iterations)
        assert doc["ledger"]["steps_accepted"] == trace.ledger.steps_accepted
        assert doc["context"]["accepted_steps"][0]["origin"] in ("draft", "target", "fallback")


class TestTreeMode:
    def test_w1_delegates_to_linear_bit_identical(self):
        spec = SimWorldSpec(chain_length=12, draft_step_accuracy=0.8, seed=77)
        world = SimWorld(spec)
        cfg_linear = config(draft_steps=4)
        cfg_tree = replace(cfg_linear, tree_width=1)
        t1 = run_trace(world.prompt_text, cfg_linear, world.draft_model(), world.target_model())
        t2 = run_trace(world.prompt_text, cfg_tree, world.draft_model(), world.target_model())
        assert t1.to_dict() == t2.to_dict()
        ledger = CostLedger()
        ctx, record = run_tree_iteration(
            ReasoningContext.create(world.prompt_text, cfg_tree.token_budget),
            cfg_tree,
            world.draft_model(),
            world.target_model(),
            ledger,
        )
        assert record is not None and record.candidate_set_size == 1

    def test_w2_extends_along_highest_confidence(self):
        def judge(query):
            table = {"c0s0": 0.80, "c0s1": 0.92, "c1s0": 0.99, "c1s1": 0.81}
            return verdict("accept", table[query.draft_step.text.split()[0]])

        def cand(position, slot):
            return f"c{position}s{slot} w w" if position < 2 else None

        draft = ScriptedModel(cand, judge)
        target = ScriptedModel(target_texts, accept_all)
        ledger = CostLedger()
        # gamma 0.8 keeps every candidate at the draft tier (inclusive bound)
        ctx, record = run_tree_iteration(
            make_context(), config(gamma=0.8, draft_steps=2, tree_width=2), draft, target, ledger
        )
        assert record.candidate_set_size == 2
        assert [s.text.split()[0] for s in ctx.accepted_steps] == ["c0s1", "c1s0"]
        assert record.layers is not None and len(record.layers) == 2
        assert [layer.selected_index for layer in record.layers] == [1, 0]
        assert all(len(layer.verdicts) == 2 for layer in record.layers)
        assert ledger.draft_verify_calls == 4  # W per layer, both layers
        assert ledger.target_verify_calls == 0
        # one rival generation per layer, not per candidate
        assert len(record.target_steps) == 2

    def test_w2_escalated_confidence_feeds_argmax(self):
        # A low-confidence candidate escalates; the target's confidence is
        # what competes in the argmax, and here it wins.
        def judge(query):
            table = {"c0s0": 0.92, "c0s1": 0.55}
            return verdict("accept", table[query.draft_step.text.split()[0]])

        def cand(position, slot):
            return f"c{position}s{slot} w w" if position < 1 else None

        draft = ScriptedModel(cand, judge)
        target = ScriptedModel(target_texts, lambda q: verdict("accept", 0.97, Tier.TARGET))
        ledger = CostLedger()
        ctx, record = run_tree_iteration(
            make_context(), config(gamma=0.9, draft_steps=1, tree_width=2), draft, target, ledger
        )
        assert ledger.target_verify_calls == 1
        assert record.layers is not None
        assert record.layers[0].selected_index == 1
        assert record.layers[0].verdicts[1].tier is Tier.TARGET
        assert ctx.accepted_steps[0].text.split()[0] == "c0s1"

    def test_w4_all_rejected_falls_back_like_linear(self):
        spec = SimWorldSpec(
            chain_length=6,
            draft_step_accuracy=0.0,
            draft_verifier=GROUND_TRUTH_PROFILE,
            target_verifier=GROUND_TRUTH_PROFILE,
            seed=31,
        )
        world = SimWorld(spec)
        ledger_tree = CostLedger()
        base = ReasoningContext.create(world.prompt_text, 10_000)
        ctx_tree, record_tree = run_tree_iteration(
            base, config(tree_width=4), world.draft_model(), world.target_model(), ledger_tree
        )
        assert record_tree.accepted_count == 0
        assert record_tree.fallback_used
        assert record_tree.layers is not None and len(record_tree.layers) == 1
        assert len(record_tree.layers[0].candidates) == 4
        assert record_tree.layers[0].selected_index is None
        assert ledger_tree.draft_verify_calls == 4

        ledger_linear = CostLedger()
        ctx_linear, record_linear = run_iteration(
            base, config(), world.draft_model(), world.target_model(), ledger_linear
        )
        assert record_linear.fallback_used
        assert [s.text for s in ctx_tree.accepted_steps] == [
            s.text for s in ctx_linear.accepted_steps
        ]

    def test_tree_trace_selected_chain_recorded(self):
        spec = SimWorldSpec(chain_length=10, draft_step_accuracy=0.9, seed=91)
        world = SimWorld(spec)
        cfg = config(tree_width=3, draft_steps=3)
        trace = run_trace(world.prompt_text, cfg, world.draft_model(), world.target_model())
        assert world.trace_answer_correct(trace.final_answer)
        for record in trace.iterations:
            assert record.candidate_set_size == 3
            if record.layers:
                for layer in record.layers:
                    assert len(layer.verdicts) == len(layer.candidates)
