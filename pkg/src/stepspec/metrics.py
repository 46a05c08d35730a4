"""Cost accounting, cascade-rate arithmetic, and calibration reporting.

Costs are abstract units.  Generation is priced per token; verification is
priced per call.  The defaults (draft 1, target 20) mirror the roughly
20:1 parameter ratio between a small drafting model and a large target.

The speedup estimate treats the per-iteration batch of rival-step
generations as one parallel round: its latency contribution is the largest
single generation in the batch (``target_parallel_units``), not the sum.
Everything sequential (draft generation, verification calls, fallback
generation) is priced in full.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from typing import Any, Iterable, Sequence

from .core import ValidationError


class MetricsError(ValueError):
    """A rate or ratio is undefined for the given inputs."""


@dataclass
class CostLedger:
    """Counts of generation tokens and verification calls per tier.

    The ledger is owned by a single trace engine while a run is live and
    merged with others only after completion.

    Token fields count every generated token even when the work is later
    wasted (rival steps past the first rejection, rejected drafts).  Call
    fields count forward passes: without token-level speculation they
    equal the token counts; the lookup layer makes them smaller.
    ``target_parallel_units`` accumulates, per iteration, the largest
    rival-generation call count in the Stage-2 batch: the latency of the
    batch when dispatched in parallel.  ``accepted_tokens`` counts tokens
    of steps actually appended to the context, fallbacks included; it is
    the length a target-only baseline would have had to generate.
    """

    draft_gen_tokens: int = 0
    target_gen_tokens: int = 0
    fallback_gen_tokens: int = 0
    target_gen_calls: int = 0
    fallback_gen_calls: int = 0
    target_parallel_units: int = 0
    draft_verify_calls: int = 0
    target_verify_calls: int = 0
    steps_accepted: int = 0
    steps_rejected: int = 0
    fallbacks: int = 0
    accepted_tokens: int = 0

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValidationError(f"ledger field {f.name} is negative")
        if self.target_verify_calls > self.draft_verify_calls:
            raise ValidationError(
                "target_verify_calls cannot exceed draft_verify_calls: "
                "every escalation was first a draft verification"
            )

    def merged(self, other: "CostLedger") -> "CostLedger":
        """Field-wise sum; associative and commutative."""
        return CostLedger(
            **{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        )

    def to_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CostLedger":
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in data.items() if k in known})


def merge_ledgers(ledgers: Iterable[CostLedger]) -> CostLedger:
    total = CostLedger()
    for ledger in ledgers:
        total = total.merged(ledger)
    return total


@dataclass(frozen=True)
class CostModel:
    """Abstract cost units: generation per token, verification per call.

    ``verify_draft`` must be cheaper than ``verify_target``; the whole
    point of cascading is that the first tier is the cheap one.
    """

    gen_draft: float = 1.0
    gen_target: float = 20.0
    verify_draft: float = 1.0
    verify_target: float = 20.0

    def __post_init__(self) -> None:
        for name in ("gen_draft", "gen_target", "verify_draft", "verify_target"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"cost {name} must be positive")
        if not self.verify_draft < self.verify_target:
            raise ValidationError("verify_draft must be strictly less than verify_target")

    def to_dict(self) -> dict[str, float]:
        return {
            "gen_draft": self.gen_draft,
            "gen_target": self.gen_target,
            "verify_draft": self.verify_draft,
            "verify_target": self.verify_target,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CostModel":
        return cls(**{k: float(v) for k, v in data.items()})


def cascade_rate(ledger: CostLedger) -> float:
    """Fraction of verification decisions escalated to the target tier.

    Defined per verification decision (escalations over draft
    verifications) so that a rate of 1 coincides exactly with paying the
    target verifier on every step.
    """
    if ledger.draft_verify_calls < 1:
        raise MetricsError("cascade rate undefined: no draft verifications")
    return ledger.target_verify_calls / ledger.draft_verify_calls


def acceptance_rate(ledger: CostLedger) -> float:
    """Fraction of verified draft steps that were accepted."""
    if ledger.draft_verify_calls < 1:
        raise MetricsError("acceptance rate undefined: no draft verifications")
    return ledger.steps_accepted / ledger.draft_verify_calls


def expected_verification_cost(model: CostModel, alpha: float) -> float:
    """Mean verification cost per verified step at cascade rate ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    return model.verify_draft + alpha * model.verify_target


def run_cost(ledger: CostLedger, model: CostModel) -> float:
    """Total modeled latency of a run, in abstract cost units."""
    return (
        model.gen_draft * ledger.draft_gen_tokens
        + model.gen_target * (ledger.target_parallel_units + ledger.fallback_gen_calls)
        + model.verify_draft * ledger.draft_verify_calls
        + model.verify_target * ledger.target_verify_calls
    )


def baseline_cost(ledger: CostLedger, model: CostModel) -> float:
    """What target-only generation of the same trace would have cost."""
    return model.gen_target * ledger.accepted_tokens


def speedup_estimate(ledger: CostLedger, model: CostModel) -> float:
    """Baseline cost over run cost; > 1 means the run beat the baseline."""
    cost = run_cost(ledger, model)
    base = baseline_cost(ledger, model)
    if cost <= 0:
        raise MetricsError("speedup undefined: run cost is zero")
    if base <= 0:
        raise MetricsError("speedup undefined: no accepted tokens to baseline against")
    return base / cost


@dataclass(frozen=True)
class CalibrationRecord:
    """One scored verification: reported confidence and whether it was right."""

    confidence: float
    correct: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class ReliabilityBucket:
    low: float
    high: float
    count: int
    mean_confidence: float | None
    accuracy: float | None


@dataclass(frozen=True)
class CalibrationReport:
    """Accuracy overall, accuracy above the threshold, coverage, reliability table."""

    gamma: float
    n: int
    overall_accuracy: float
    hiconf_accuracy: float | None
    coverage: float
    buckets: tuple[ReliabilityBucket, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "n": self.n,
            "overall_accuracy": self.overall_accuracy,
            "hiconf_accuracy": self.hiconf_accuracy,
            "coverage": self.coverage,
            "buckets": [
                {
                    "low": b.low,
                    "high": b.high,
                    "count": b.count,
                    "mean_confidence": b.mean_confidence,
                    "accuracy": b.accuracy,
                }
                for b in self.buckets
            ],
        }

    def buckets_csv(self) -> str:
        """Reliability table as CSV, one row per bucket."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["low", "high", "count", "mean_confidence", "accuracy"])
        for b in self.buckets:
            writer.writerow(
                [
                    f"{b.low:.1f}",
                    f"{b.high:.1f}",
                    b.count,
                    "" if b.mean_confidence is None else f"{b.mean_confidence:.6f}",
                    "" if b.accuracy is None else f"{b.accuracy:.6f}",
                ]
            )
        return buf.getvalue()


N_RELIABILITY_BUCKETS = 10


def calibration_report(
    records: Sequence[CalibrationRecord], gamma: float
) -> CalibrationReport:
    """Score confidence against correctness and bin into a reliability table.

    Buckets are [0.0, 0.1), ..., [0.9, 1.0] with the final bucket closed.
    When no record clears the threshold, the hi-confidence accuracy is
    reported absent (None), never zero.
    """
    if not records:
        raise ValidationError("calibration report requires at least one record")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    n = len(records)
    correct_total = sum(1 for r in records if r.correct)
    hi = [r for r in records if r.confidence >= gamma]
    bucket_counts = [0] * N_RELIABILITY_BUCKETS
    bucket_conf = [0.0] * N_RELIABILITY_BUCKETS
    bucket_correct = [0] * N_RELIABILITY_BUCKETS
    for r in records:
        idx = min(int(r.confidence * N_RELIABILITY_BUCKETS), N_RELIABILITY_BUCKETS - 1)
        bucket_counts[idx] += 1
        bucket_conf[idx] += r.confidence
        bucket_correct[idx] += 1 if r.correct else 0
    buckets = tuple(
        ReliabilityBucket(
            low=i / N_RELIABILITY_BUCKETS,
            high=(i + 1) / N_RELIABILITY_BUCKETS,
            count=bucket_counts[i],
            mean_confidence=(bucket_conf[i] / bucket_counts[i]) if bucket_counts[i] else None,
            accuracy=(bucket_correct[i] / bucket_counts[i]) if bucket_counts[i] else None,
        )
        for i in range(N_RELIABILITY_BUCKETS)
    )
    return CalibrationReport(
        gamma=gamma,
        n=n,
        overall_accuracy=correct_total / n,
        hiconf_accuracy=(sum(1 for r in hi if r.correct) / len(hi)) if hi else None,
        coverage=len(hi) / n,
        buckets=buckets,
    )
