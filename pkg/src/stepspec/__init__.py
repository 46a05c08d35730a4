"""Step-level speculative reasoning with confidence-gated cascaded verification."""

from .core import (
    BoundaryDelimiter,
    BudgetExceededError,
    ReasoningContext,
    ReasoningTrace,
    RejectPolicy,
    RunConfig,
    SplitResult,
    Step,
    StepOrigin,
    Termination,
    ValidationError,
    append_step,
    estimate_tokens,
    split_into_steps,
)
from .oracle import (
    Decision,
    ModelOracle,
    StepGenerator,
    StepVerifier,
    Tier,
    VerificationQuery,
    VerificationVerdict,
    verdict_from_decision_probability,
)
from .cascade import (
    EscalationError,
    IterationRecord,
    TreeLayerRecord,
    cascaded_verify,
    run_iteration,
    run_trace,
    run_tree_iteration,
    select_best_candidate,
)
from .metrics import (
    CalibrationRecord,
    CalibrationReport,
    CostLedger,
    CostModel,
    acceptance_rate,
    calibration_report,
    cascade_rate,
    expected_verification_cost,
    merge_ledgers,
    speedup_estimate,
)
from .simworld import (
    CalibrationProfile,
    GROUND_TRUTH_PROFILE,
    SimWorld,
    SimWorldSpec,
    ground_truth_equivalent,
    sample_calibration_records,
)
from .ngram_sd import LookupComposedOracle, NgramIndex, propose, verify_tokens

__version__ = "0.1.0"

__all__ = [
    "BoundaryDelimiter",
    "BudgetExceededError",
    "CalibrationProfile",
    "CalibrationRecord",
    "CalibrationReport",
    "CostLedger",
    "CostModel",
    "Decision",
    "EscalationError",
    "GROUND_TRUTH_PROFILE",
    "IterationRecord",
    "LookupComposedOracle",
    "ModelOracle",
    "NgramIndex",
    "ReasoningContext",
    "ReasoningTrace",
    "RejectPolicy",
    "RunConfig",
    "SimWorld",
    "SimWorldSpec",
    "SplitResult",
    "Step",
    "StepGenerator",
    "StepOrigin",
    "StepVerifier",
    "Termination",
    "Tier",
    "TreeLayerRecord",
    "ValidationError",
    "VerificationQuery",
    "VerificationVerdict",
    "acceptance_rate",
    "append_step",
    "calibration_report",
    "cascade_rate",
    "cascaded_verify",
    "estimate_tokens",
    "expected_verification_cost",
    "ground_truth_equivalent",
    "merge_ledgers",
    "propose",
    "run_iteration",
    "run_trace",
    "run_tree_iteration",
    "sample_calibration_records",
    "select_best_candidate",
    "speedup_estimate",
    "split_into_steps",
    "verdict_from_decision_probability",
    "verify_tokens",
]
