//! Verification, detection metrics, bypass analytics and experiment orchestration.

mod bypass;
mod experiment;
mod metrics;
mod verify;

pub use bypass::{
    bypass_prob_approx, bypass_prob_exact, bypass_prob_exact_inductive, bypass_rate_monte_carlo,
    BypassEstimate, BypassSetting,
};
pub use experiment::{
    parse_experiment_spec, run_experiment, AttackSpec, BypassEntry, BypassSpec, ComparisonEntry,
    ComparisonSpec, ExperimentSpec, ExperimentSummary, GraphSource, MethodKind, MethodResult,
    MethodSpec, AttackSummary, SCHEMA_VERSION,
};
pub use metrics::{
    detection_rate, min_queries_for_full_detection, paired_bootstrap_lower, query_improvement,
    DetectionResult, QueryImprovement,
};
pub use verify::{verify, QueryRecord, Verdict, VerificationReport, VerifyOptions};
