"""Ledger arithmetic, cost model, calibration report."""

from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepspec.core import ValidationError
from stepspec.metrics import (
    CalibrationRecord,
    CostLedger,
    CostModel,
    MetricsError,
    acceptance_rate,
    baseline_cost,
    calibration_report,
    cascade_rate,
    expected_verification_cost,
    merge_ledgers,
    run_cost,
    speedup_estimate,
)


class TestCascadeRate:
    def test_ratio(self):
        ledger = CostLedger(draft_verify_calls=100, target_verify_calls=20)
        assert cascade_rate(ledger) == pytest.approx(0.20)

    def test_zero_escalation(self):
        assert cascade_rate(CostLedger(draft_verify_calls=50)) == 0.0

    def test_full_escalation(self):
        ledger = CostLedger(draft_verify_calls=50, target_verify_calls=50)
        assert cascade_rate(ledger) == 1.0

    def test_undefined(self):
        with pytest.raises(MetricsError):
            cascade_rate(CostLedger())

    def test_ledger_invariant_escalations_bounded(self):
        bad = CostLedger(draft_verify_calls=1, target_verify_calls=2)
        with pytest.raises(ValidationError):
            bad.validate()


class TestExpectedVerificationCost:
    def test_direct(self):
        model = CostModel(verify_draft=1, verify_target=10, gen_draft=1, gen_target=5)
        assert expected_verification_cost(model, 0.2) == pytest.approx(3.0)

    def test_draft_only_limit(self):
        model = CostModel()
        assert expected_verification_cost(model, 0.0) == model.verify_draft

    def test_out_of_range_alpha(self):
        with pytest.raises(ValidationError):
            expected_verification_cost(CostModel(), 1.5)

    def test_linear_in_alpha_three_point_collinearity(self):
        model = CostModel()
        y0 = expected_verification_cost(model, 0.0)
        y1 = expected_verification_cost(model, 0.5)
        y2 = expected_verification_cost(model, 1.0)
        assert y1 - y0 == pytest.approx(y2 - y1)
        assert (y2 - y0) == pytest.approx(model.verify_target)


class TestCostModelValidation:
    def test_default_orders_verify_costs(self):
        model = CostModel()
        assert model.verify_draft < model.verify_target

    def test_rejects_inverted_verify_costs(self):
        with pytest.raises(ValidationError):
            CostModel(verify_draft=5, verify_target=5)


class TestSpeedupEstimate:
    def test_pure_fallback_regime_is_slower_than_baseline(self):
        # Every step cost a full draft window, a rival round, and a fallback.
        ledger = CostLedger(
            draft_gen_tokens=500,
            target_gen_tokens=500,
            target_gen_calls=500,
            target_parallel_units=100,
            fallback_gen_tokens=100,
            fallback_gen_calls=100,
            draft_verify_calls=20,
            target_verify_calls=0,
            steps_accepted=0,
            steps_rejected=20,
            fallbacks=20,
            accepted_tokens=100,
        )
        assert speedup_estimate(ledger, CostModel()) <= 1.0

    def test_perfect_draft_closed_form(self):
        # k steps per iteration, T tokens per step, perfect acceptance and
        # no escalation: speedup = gen_target / (gen_draft + verify_draft/T
        # + gen_target/k), derived by hand from the latency model.
        k, T, iters = 5, 10, 40
        steps = k * iters
        model = CostModel(gen_draft=1, gen_target=20, verify_draft=1, verify_target=20)
        ledger = CostLedger(
            draft_gen_tokens=steps * T,
            target_gen_tokens=steps * T,
            target_gen_calls=steps * T,
            target_parallel_units=iters * T,
            draft_verify_calls=steps,
            target_verify_calls=0,
            steps_accepted=steps,
            accepted_tokens=steps * T,
        )
        expected = model.gen_target / (
            model.gen_draft + model.verify_draft / T + model.gen_target / k
        )
        assert speedup_estimate(ledger, model) == pytest.approx(expected)
        assert speedup_estimate(ledger, model) > 1.0

    def test_zero_denominators(self):
        with pytest.raises(MetricsError):
            speedup_estimate(CostLedger(), CostModel())
        with pytest.raises(MetricsError):
            speedup_estimate(CostLedger(draft_gen_tokens=5), CostModel())

    def test_run_and_baseline_components(self):
        model = CostModel(gen_draft=2, gen_target=10, verify_draft=1, verify_target=5)
        ledger = CostLedger(
            draft_gen_tokens=3,
            target_parallel_units=4,
            fallback_gen_calls=2,
            draft_verify_calls=6,
            target_verify_calls=1,
            accepted_tokens=7,
        )
        assert run_cost(ledger, model) == pytest.approx(2 * 3 + 10 * (4 + 2) + 6 + 5)
        assert baseline_cost(ledger, model) == pytest.approx(70)


ledger_ints = st.integers(min_value=0, max_value=10_000)


@st.composite
def ledgers(draw):
    draft_v = draw(ledger_ints)
    return CostLedger(
        draft_gen_tokens=draw(ledger_ints),
        target_gen_tokens=draw(ledger_ints),
        fallback_gen_tokens=draw(ledger_ints),
        target_gen_calls=draw(ledger_ints),
        fallback_gen_calls=draw(ledger_ints),
        target_parallel_units=draw(ledger_ints),
        draft_verify_calls=draft_v,
        target_verify_calls=draw(st.integers(min_value=0, max_value=draft_v)),
        steps_accepted=draw(ledger_ints),
        steps_rejected=draw(ledger_ints),
        fallbacks=draw(ledger_ints),
        accepted_tokens=draw(ledger_ints),
    )


class TestLedgerMerge:
    @given(ledgers(), ledgers())
    def test_commutative(self, a, b):
        assert a.merged(b) == b.merged(a)

    @given(ledgers(), ledgers(), ledgers())
    def test_associative(self, a, b, c):
        assert a.merged(b).merged(c) == a.merged(b.merged(c))

    @given(ledgers())
    def test_identity(self, a):
        assert a.merged(CostLedger()) == a

    def test_merge_many(self):
        parts = [CostLedger(draft_gen_tokens=i) for i in range(5)]
        assert merge_ledgers(parts).draft_gen_tokens == 10

    def test_dict_round_trip(self):
        ledger = CostLedger(draft_gen_tokens=3, steps_accepted=2, accepted_tokens=9)
        assert CostLedger.from_dict(ledger.to_dict()) == ledger


class TestAcceptanceRate:
    def test_basic(self):
        ledger = CostLedger(draft_verify_calls=10, steps_accepted=7)
        assert acceptance_rate(ledger) == pytest.approx(0.7)

    def test_undefined(self):
        with pytest.raises(MetricsError):
            acceptance_rate(CostLedger())


class TestCalibrationReport:
    def test_degenerate_all_confident_correct(self):
        records = [CalibrationRecord(1.0, True)] * 10
        report = calibration_report(records, 0.9)
        assert report.overall_accuracy == 1.0
        assert report.hiconf_accuracy == 1.0
        assert report.coverage == 1.0

    def test_two_operating_points(self):
        # 61% mass at (0.95 conf, 95% correct), 39% at (0.60 conf, 17% correct).
        # Mixture arithmetic: overall = 0.61*0.95 + 0.39*0.17 = 0.6458.
        records = []
        records += [CalibrationRecord(0.95, True)] * int(6100 * 0.95)
        records += [CalibrationRecord(0.95, False)] * (6100 - int(6100 * 0.95))
        records += [CalibrationRecord(0.60, True)] * int(3900 * 0.17)
        records += [CalibrationRecord(0.60, False)] * (3900 - int(3900 * 0.17))
        report = calibration_report(records, 0.9)
        assert report.coverage == pytest.approx(0.61, abs=1e-9)
        assert report.hiconf_accuracy == pytest.approx(0.95, abs=1e-3)
        assert report.overall_accuracy == pytest.approx(0.61 * 0.95 + 0.39 * 0.17, abs=1e-3)

    def test_empty_hiconf_subset_reported_absent(self):
        records = [CalibrationRecord(0.6, True), CalibrationRecord(0.7, False)]
        report = calibration_report(records, 0.99)
        assert report.hiconf_accuracy is None
        assert report.coverage == 0.0

    def test_requires_records(self):
        with pytest.raises(ValidationError):
            calibration_report([], 0.9)

    def test_bucket_edges(self):
        records = [
            CalibrationRecord(0.0, False),
            CalibrationRecord(0.05, True),
            CalibrationRecord(0.95, True),
            CalibrationRecord(1.0, True),  # closed final bucket
        ]
        report = calibration_report(records, 0.5)
        assert report.buckets[0].count == 2
        assert report.buckets[9].count == 2
        assert sum(b.count for b in report.buckets) == len(records)

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
                st.booleans(),
            ),
            min_size=1,
            max_size=200,
        ),
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
    )
    def test_coverage_weighted_identity(self, pairs, gamma):
        records = [CalibrationRecord(c, ok) for c, ok in pairs]
        report = calibration_report(records, gamma)
        lo = [r for r in records if r.confidence < gamma]
        lo_acc = (sum(1 for r in lo if r.correct) / len(lo)) if lo else 0.0
        hi_acc = report.hiconf_accuracy if report.hiconf_accuracy is not None else 0.0
        recombined = report.coverage * hi_acc + (1.0 - report.coverage) * lo_acc
        assert abs(recombined - report.overall_accuracy) < 1e-9

    def test_csv_rendering(self):
        records = [CalibrationRecord(0.95, True), CalibrationRecord(0.4, False)]
        text = calibration_report(records, 0.9).buckets_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "low,high,count,mean_confidence,accuracy"
        assert len(lines) == 11
