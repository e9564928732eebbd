//! Differential test-suite construction and candidate verification.
//!
//! A suite is drawn from the batch generator under a fixed seed, filtered by
//! the input validator, and labelled by the oracle. Inputs on which the oracle
//! times out, hits the recursion limit or floods its output are skipped.
//! Candidates are then run on every suite input and compared with the
//! oracle's answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{Entry, ExecError, Executor, ResourceLimits, RunStatus};
use crate::generation::{GeneratedProgram, VerifierBundle};
use crate::problem::{Problem, TestCase};
use crate::seed::derive_seed;

pub const DEFAULT_SUITE_SIZE: usize = 30;
pub const DEFAULT_MAX_COUNTEREXAMPLES: usize = 3;
/// Total draws allowed per requested case.
pub const DRAW_BUDGET_FACTOR: usize = 5;
pub const FLOAT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("suite too small: got {got} cases, wanted at least {want}")]
    SuiteTooSmall { got: usize, want: usize },
    #[error("cannot verify against an empty suite")]
    EmptySuite,
    #[error(transparent)]
    Executor(#[from] ExecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquivalencePolicy {
    Exact,
    #[default]
    Token,
}

fn as_number(token: &str) -> Option<f64> {
    let looks_numeric = token
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'));
    if !looks_numeric {
        return None;
    }
    token.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Compares an expected and an actual output under `policy`.
///
/// `Token`: whitespace-separated tokens must match pairwise, where two numeric
/// tokens also match when they differ by at most 1e-6. `Exact`: byte equality
/// after CRLF is normalized to LF.
pub fn compare_outputs(expected: &str, actual: &str, policy: EquivalencePolicy) -> bool {
    match policy {
        EquivalencePolicy::Exact => expected.replace("\r\n", "\n") == actual.replace("\r\n", "\n"),
        EquivalencePolicy::Token => {
            let mut e = expected.split_whitespace();
            let mut a = actual.split_whitespace();
            loop {
                match (e.next(), a.next()) {
                    (None, None) => return true,
                    (Some(x), Some(y)) if x == y => {}
                    (Some(x), Some(y)) => match (as_number(x), as_number(y)) {
                        (Some(p), Some(q)) if (p - q).abs() <= FLOAT_TOLERANCE => {}
                        _ => return false,
                    },
                    _ => return false,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub input: String,
    pub expected_output: String,
    /// Seed handed to the batch generator for the round that drew this input.
    pub seed: u64,
    /// Position of the input among all drawn inputs.
    pub draw_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteStats {
    pub requested: usize,
    pub generated: usize,
    pub rejected_by_validator: usize,
    pub skipped_oracle: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub cases: Vec<SuiteCase>,
    pub stats: SuiteStats,
}

impl Suite {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn test_cases(&self) -> Vec<TestCase> {
        self.cases
            .iter()
            .map(|c| TestCase { input: c.input.clone(), expected_output: c.expected_output.clone() })
            .collect()
    }

    /// The first `n` cases, for suite-size sweeps.
    pub fn prefix(&self, n: usize) -> Suite {
        Suite { cases: self.cases.iter().take(n).cloned().collect(), stats: self.stats.clone() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub oracle_limits: ResourceLimits,
    pub tool_limits: ResourceLimits,
}

/// Parses batch-generator output: one JSON value per non-empty line. Strings
/// are taken as the input text, anything else as its compact JSON encoding.
/// Lines that are not JSON yield `None`.
pub fn parse_generator_records(stdout: &str) -> Vec<Option<String>> {
    stdout
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match serde_json::from_str::<serde_json::Value>(l) {
            Ok(serde_json::Value::String(s)) => Some(s),
            Ok(v) => Some(v.to_string()),
            Err(_) => None,
        })
        .collect()
}

pub fn validator_accepts(stdout: &str) -> bool {
    stdout.trim().eq_ignore_ascii_case("true")
}

/// Stdin line handed to the batch generator.
pub fn generator_request(seed: u64, count: usize, max_var_length: u32) -> String {
    format!("{seed} {count} {max_var_length}\n")
}

/// Builds a differential suite of up to `size` cases.
///
/// Draws proceed in rounds; round `r` asks the generator for as many inputs as
/// are still missing, under a seed derived from `(seed, r)`. At most
/// `5 * size` inputs are drawn in total.
pub fn build_suite(
    problem: &Problem,
    bundle: &VerifierBundle,
    size: usize,
    seed: u64,
    executor: &Executor,
    opts: &SuiteOptions,
) -> Result<Suite, VerifierError> {
    let entry = problem.entry();
    let budget = DRAW_BUDGET_FACTOR * size;
    let mut cases = Vec::with_capacity(size);
    let mut stats = SuiteStats { requested: size, generated: 0, rejected_by_validator: 0, skipped_oracle: 0, seed };
    let mut drawn = 0usize;
    let mut round = 0u64;
    while cases.len() < size && drawn < budget {
        let want = (size - cases.len()).min(budget - drawn);
        let round_seed = derive_seed(seed, &format!("round-{round}"));
        round += 1;
        let gen = executor.run(
            &bundle.batch_generator.source,
            &generator_request(round_seed, want, bundle.max_var_length),
            &opts.tool_limits,
            &Entry::Script,
        )?;
        let first_index = drawn;
        drawn += want;
        if !gen.is_ok() {
            log::warn!("{}: batch generator failed in round {round}: {:?}", problem.id, gen.status);
            continue;
        }
        let records: Vec<Option<String>> = parse_generator_records(&gen.stdout).into_iter().take(want).collect();
        stats.generated += records.len();

        let parsed: Vec<(usize, String)> = records
            .into_iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Some(text) => Some((first_index + i, text)),
                None => {
                    stats.rejected_by_validator += 1;
                    None
                }
            })
            .collect();
        let inputs: Vec<String> = parsed.iter().map(|(_, t)| t.clone()).collect();
        let verdicts = executor.run_batch(&bundle.validator.source, &inputs, &opts.tool_limits, &Entry::Script)?;
        let accepted: Vec<(usize, String)> = parsed
            .into_iter()
            .zip(verdicts)
            .filter_map(|(rec, v)| {
                if v.is_ok() && validator_accepts(&v.stdout) {
                    Some(rec)
                } else {
                    stats.rejected_by_validator += 1;
                    None
                }
            })
            .collect();

        let inputs: Vec<String> = accepted.iter().map(|(_, t)| t.clone()).collect();
        let answers = executor.run_batch(&bundle.oracle.source, &inputs, &opts.oracle_limits, &entry)?;
        for ((draw_index, input), out) in accepted.into_iter().zip(answers) {
            if out.status == RunStatus::Ok {
                if cases.len() < size {
                    cases.push(SuiteCase { input, expected_output: out.stdout, seed: round_seed, draw_index });
                }
            } else {
                stats.skipped_oracle += 1;
            }
        }
    }
    let want = (size / 3).max(1);
    if cases.len() < want {
        return Err(VerifierError::SuiteTooSmall { got: cases.len(), want });
    }
    Ok(Suite { cases, stats })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub case_index: usize,
    pub input: String,
    pub expected: String,
    pub actual: String,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub cases_run: usize,
    pub cases_passed: usize,
    pub counterexamples: Vec<Counterexample>,
    /// Per-case pass/fail, aligned with the suite.
    pub case_results: Vec<bool>,
}

impl Verdict {
    /// Assembles a verdict from per-case results and the first failures
    /// (ordered by case index).
    pub fn from_cases(case_results: Vec<bool>, counterexamples: Vec<Counterexample>) -> Self {
        let cases_run = case_results.len();
        let cases_passed = case_results.iter().filter(|&&ok| ok).count();
        Self {
            pass: cases_run >= 1 && cases_passed == cases_run,
            cases_run,
            cases_passed,
            counterexamples,
            case_results,
        }
    }

    /// The verdict the candidate would have received on the first `n` cases.
    pub fn prefix(&self, n: usize) -> Verdict {
        let results: Vec<bool> = self.case_results.iter().copied().take(n).collect();
        let cex = self.counterexamples.iter().filter(|c| c.case_index < n).cloned().collect();
        Verdict::from_cases(results, cex)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub limits: ResourceLimits,
    pub policy: EquivalencePolicy,
    pub max_counterexamples: usize,
}

/// Runs `candidate` on every suite input. A timeout or crash fails the case.
pub fn verify_candidate(
    problem: &Problem,
    candidate: &GeneratedProgram,
    suite: &Suite,
    executor: &Executor,
    opts: &VerifyOptions,
) -> Result<Verdict, VerifierError> {
    verify_source(problem, &candidate.source, suite, executor, opts)
}

pub fn verify_source(
    problem: &Problem,
    source: &str,
    suite: &Suite,
    executor: &Executor,
    opts: &VerifyOptions,
) -> Result<Verdict, VerifierError> {
    if suite.is_empty() {
        return Err(VerifierError::EmptySuite);
    }
    let inputs: Vec<String> = suite.cases.iter().map(|c| c.input.clone()).collect();
    let outcomes = executor.run_batch(source, &inputs, &opts.limits, &problem.entry())?;
    let mut results = Vec::with_capacity(outcomes.len());
    let mut cex = Vec::new();
    for (i, (case, out)) in suite.cases.iter().zip(outcomes).enumerate() {
        let ok = out.status == RunStatus::Ok && compare_outputs(&case.expected_output, &out.stdout, opts.policy);
        if !ok && cex.len() < opts.max_counterexamples {
            cex.push(Counterexample {
                case_index: i,
                input: case.input.clone(),
                expected: case.expected_output.clone(),
                actual: out.stdout,
                status: out.status,
            });
        }
        results.push(ok);
    }
    Ok(Verdict::from_cases(results, cex))
}
