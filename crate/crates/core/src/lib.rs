//! Differential verification harness for generated programs.
//!
//! An LLM writes a brute-force reference oracle plus input validator and
//! generator for each problem; candidate programs are then checked against
//! the oracle on a seeded suite of generated inputs, ranked, and scored.

pub mod commands;
pub mod config;
pub mod executor;
pub mod generation;
pub mod llm;
pub mod metrics;
pub mod pool;
pub mod problem;
pub mod search;
pub mod seed;
pub mod verifier;
pub mod workspace;

pub use config::RunConfig;
pub use executor::{Executor, ExecutionOutcome, ResourceLimits, RunStatus, Runtime};
pub use generation::{GeneratedProgram, VerifierBundle};
pub use llm::{Gateway, GatewayMode, PromptKind};
pub use problem::{JudgeStatus, Problem, SystemJudge};
pub use search::{RankedCandidates, StrategySpec};
pub use verifier::{Suite, Verdict};

/// Exact rational rate.
pub type ExactRate = num_rational::Ratio<i64>;
/// Report with floating-point rates, as written by the CLI.
pub type Report = metrics::EvaluationReport<f64>;
/// Report with exact rational rates.
pub type ExactReport = metrics::EvaluationReport<ExactRate>;
