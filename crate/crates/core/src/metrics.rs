//! Evaluation metrics: pass@k (unbiased and ranked), judge/verdict agreement,
//! statement coverage and oracle classification, plus per-corpus reports.
//!
//! Rates are generic over the scalar type so they can be computed exactly
//! (`Ratio<i64>`) as well as in floating point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{run_program, Entry, ExecError, Executor, ResourceLimits, Runtime};
use crate::generation::GeneratedProgram;
use crate::problem::{judge, JudgeStatus, Problem, SystemJudge};
use crate::search::{rank_candidates, RankedCandidates};
use crate::verifier::{SuiteStats, Verdict};

/// Numeric type a metric can be computed in.
pub trait Scalar: Num + FromPrimitive + Copy + PartialOrd {}
impl<T: Num + FromPrimitive + Copy + PartialOrd> Scalar for T {}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("verdict and judge maps have different keys")]
    KeyMismatch,
    #[error("coverage adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error(transparent)]
    Executor(#[from] ExecError),
}

fn domain(msg: impl Into<String>) -> MetricsError {
    MetricsError::Domain(msg.into())
}

fn from_usize<T: Scalar>(x: usize) -> T {
    T::from_usize(x).expect("count fits the scalar type")
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    from_usize::<T>(num) / from_usize::<T>(den)
}

/// Probability that a random `k`-subset of `n` samples, `c` of them correct,
/// contains a correct one: `1 - C(n-c, k) / C(n, k)`, evaluated as the
/// product `1 - prod_{i=n-c+1..=n} (i - k) / i`.
pub fn pass_at_k_unbiased<T: Scalar>(n: usize, c: usize, k: usize) -> Result<T, MetricsError> {
    if c > n {
        return Err(domain(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(domain(format!("k = {k} outside 1..={n}")));
    }
    if c == 0 {
        return Ok(T::zero());
    }
    if n - c < k {
        return Ok(T::one());
    }
    let miss = (n - c + 1..=n).fold(T::one(), |acc, i| acc * ratio::<T>(i - k, i));
    Ok(T::one() - miss)
}

/// Ranked pass@k for one problem: whether any of the first `k` statuses,
/// in rank order, is AC.
pub fn ranked_hit(statuses_in_rank_order: &[JudgeStatus], k: usize) -> Result<bool, MetricsError> {
    if k == 0 {
        return Err(domain("k must be at least 1"));
    }
    Ok(statuses_in_rank_order.iter().take(k).any(|s| s.is_accepted()))
}

/// Judges the top `k` candidates of `ranking` and returns 1 if any is AC.
/// Judging stops at the first accepted candidate.
pub fn pass_at_k_ranked(
    problem: &Problem,
    ranking: &RankedCandidates,
    system: &SystemJudge,
    k: usize,
    executor: &Executor,
) -> Result<u8, MetricsError> {
    if k == 0 {
        return Err(domain("k must be at least 1"));
    }
    for entry in ranking.entries.iter().take(k) {
        if judge(&entry.candidate.source, problem, system, executor)?.is_accepted() {
            return Ok(1);
        }
    }
    Ok(0)
}

/// Fraction of candidates whose suite verdict matches the judge decision.
/// Only AC counts as a judge pass.
pub fn agreement<K: Ord, T: Scalar>(
    verdicts: &BTreeMap<K, bool>,
    statuses: &BTreeMap<K, JudgeStatus>,
) -> Result<T, MetricsError> {
    if verdicts.len() != statuses.len() || verdicts.keys().zip(statuses.keys()).any(|(a, b)| a != b) {
        return Err(MetricsError::KeyMismatch);
    }
    if verdicts.is_empty() {
        return Err(domain("agreement over an empty candidate set"));
    }
    let agree = verdicts
        .iter()
        .zip(statuses.values())
        .filter(|((_, pass), status)| **pass == status.is_accepted())
        .count();
    Ok(ratio(agree, verdicts.len()))
}

/// Line-hit coverage adapter. The command template receives the program path
/// in `{program}` and the entry in `{entry}` (`script` or `function:NAME`);
/// on stdin it gets the case input. It must print `total N` and one `hit L`
/// line per executed statement line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageAdapter {
    pub command: Vec<String>,
}

impl CoverageAdapter {
    pub fn python(script: impl AsRef<std::path::Path>) -> Self {
        let script = script.as_ref().to_string_lossy().into_owned();
        Self { command: vec!["python3".into(), "-S".into(), "-B".into(), script, "{program}".into(), "{entry}".into()] }
    }
}

/// Per-case executed lines of one program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageProfile {
    pub total: usize,
    pub per_case: Vec<BTreeSet<u32>>,
}

impl CoverageProfile {
    /// Covered fraction over the first `cases` cases.
    pub fn percent<T: Scalar>(&self, cases: usize) -> Result<T, MetricsError> {
        if cases == 0 || self.per_case.is_empty() {
            return Err(domain("coverage needs at least one case"));
        }
        let hit: BTreeSet<u32> = self.per_case.iter().take(cases).flatten().copied().collect();
        Ok(ratio(hit.len().min(self.total), self.total))
    }
}

/// Parses an adapter report into `(total, hit lines)`.
pub fn parse_coverage_report(stdout: &str) -> Option<(usize, BTreeSet<u32>)> {
    let mut total = None;
    let mut hits = BTreeSet::new();
    for line in stdout.lines() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some("total"), Some(n)) => total = Some(n.parse().ok()?),
            (Some("hit"), Some(n)) => {
                hits.insert(n.parse().ok()?);
            }
            _ => {}
        }
    }
    total.map(|t| (t, hits))
}

pub fn coverage_profile(
    source: &str,
    inputs: &[String],
    entry: &Entry,
    adapter: &CoverageAdapter,
    base: &Runtime,
    limits: &ResourceLimits,
) -> Result<CoverageProfile, MetricsError> {
    if inputs.is_empty() {
        return Err(domain("coverage needs at least one case"));
    }
    let entry_arg = match entry {
        Entry::Script => "script".to_string(),
        Entry::Function(name) => format!("function:{name}"),
    };
    let runtime = Runtime {
        command: adapter.command.iter().map(|a| a.replace("{entry}", &entry_arg)).collect(),
        function_driver: None,
        ..base.clone()
    };
    let mut total = 0;
    let mut per_case = Vec::with_capacity(inputs.len());
    for input in inputs {
        let out = match run_program(source, input, limits, &runtime, &Entry::Script) {
            Ok(o) => o,
            Err(ExecError::RuntimeUnavailable(cmd)) => return Err(MetricsError::AdapterUnavailable(cmd)),
            Err(ExecError::MissingPlaceholder) => {
                return Err(MetricsError::AdapterUnavailable("command has no {program} placeholder".into()))
            }
            Err(e) => return Err(e.into()),
        };
        let (t, hits) = parse_coverage_report(&out.stdout).ok_or_else(|| {
            let why = out.stderr.lines().last().unwrap_or("no report").to_string();
            MetricsError::AdapterUnavailable(why)
        })?;
        if t == 0 {
            return Err(domain("program has no statements"));
        }
        total = t;
        per_case.push(hits);
    }
    Ok(CoverageProfile { total, per_case })
}

/// Executed-statement fraction of `candidate`, unioned over `cases`.
pub fn coverage_percent<T: Scalar>(
    problem: &Problem,
    candidate: &GeneratedProgram,
    cases: &[String],
    adapter: &CoverageAdapter,
    executor: &Executor,
    limits: &ResourceLimits,
) -> Result<T, MetricsError> {
    let profile = coverage_profile(&candidate.source, cases, &problem.entry(), adapter, executor.runtime(), limits)?;
    profile.percent(cases.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleClass {
    pub status: JudgeStatus,
    /// AC and TLE both count: an oracle is allowed to be slow.
    pub correct_for_oracle_purposes: bool,
}

pub fn classify_oracle(
    problem: &Problem,
    oracle: &GeneratedProgram,
    system: &SystemJudge,
    executor: &Executor,
) -> Result<OracleClass, MetricsError> {
    let status = judge(&oracle.source, problem, system, executor)?;
    Ok(OracleClass { status, correct_for_oracle_purposes: matches!(status, JudgeStatus::AC | JudgeStatus::TLE) })
}

/// Everything known about one candidate after verification and judging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEval {
    pub program: GeneratedProgram,
    pub verdict: Verdict,
    pub judge: Option<JudgeStatus>,
}

/// Inputs for one problem's section of a report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemEval {
    pub problem_id: String,
    pub candidates: Vec<CandidateEval>,
    pub oracle: Option<OracleClass>,
    pub suite: Option<SuiteStats>,
    /// Per-case executed lines of the top-ranked candidate on the full suite.
    pub coverage: Option<CoverageProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub rank: usize,
    pub program: String,
    pub pass: bool,
    pub cases_passed: usize,
    pub cases_run: usize,
    pub passed_public_tests: bool,
    pub judge: Option<JudgeStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport<T> {
    pub n: usize,
    /// Judge-accepted candidates, when judge data exists.
    pub c: Option<usize>,
    pub candidates: Vec<CandidateRow>,
    pub ranked_hits: BTreeMap<usize, bool>,
    pub oracle: Option<OracleClass>,
    pub suite: Option<SuiteStats>,
    pub coverage: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport<T> {
    pub suite_size: usize,
    pub per_problem: BTreeMap<String, ProblemReport<T>>,
    pub pass_at_k_unbiased: BTreeMap<usize, T>,
    pub pass_at_k_ranked: BTreeMap<usize, T>,
    /// Suite verdict vs judge decision; absent without judge data.
    pub agreement: Option<T>,
    /// Public-test verdict vs judge decision, for comparison.
    pub agreement_public: Option<T>,
    pub coverage: Option<T>,
    pub oracle_correct_rate: Option<T>,
    pub notes: Vec<String>,
}

const AGREEMENT_NOTE: &str = "agreement: a candidate failing the suite (including by timeout or crash) while accepted by the judge counts as a disagreement";

fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, &v| acc + v);
    Some(sum / from_usize::<T>(values.len()))
}

/// Assembles a report with every candidate verdict truncated to the first
/// `suite_size` suite cases, re-ranking candidates accordingly.
///
/// Unbiased pass@k is reported only for `k` no larger than the candidate
/// count of every judged problem.
pub fn build_report<T: Scalar>(
    problems: &[ProblemEval],
    ks: &[usize],
    suite_size: usize,
) -> Result<EvaluationReport<T>, MetricsError> {
    if ks.contains(&0) {
        return Err(domain("k must be at least 1"));
    }
    let mut per_problem = BTreeMap::new();
    let mut suite_votes = BTreeMap::new();
    let mut public_votes = BTreeMap::new();
    let mut judged = BTreeMap::new();
    let mut nc = Vec::new();
    let mut ranked: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    let mut coverage = Vec::new();
    let mut oracle_ok = Vec::new();

    for p in problems {
        let by_stem: BTreeMap<String, &CandidateEval> = p.candidates.iter().map(|c| (c.program.stem(), c)).collect();
        let ranking = rank_candidates(
            p.candidates
                .iter()
                .map(|c| (c.program.clone(), c.verdict.prefix(suite_size)))
                .collect(),
        );
        let rows: Vec<CandidateRow> = ranking
            .entries
            .iter()
            .map(|e| CandidateRow {
                rank: e.rank,
                program: e.candidate.stem(),
                pass: e.verdict.pass,
                cases_passed: e.verdict.cases_passed,
                cases_run: e.verdict.cases_run,
                passed_public_tests: e.candidate.passed_public_tests,
                judge: by_stem[&e.candidate.stem()].judge,
            })
            .collect();
        let all_judged = !rows.is_empty() && rows.iter().all(|r| r.judge.is_some());
        let c = all_judged.then(|| rows.iter().filter(|r| r.judge == Some(JudgeStatus::AC)).count());
        let mut ranked_hits = BTreeMap::new();
        if all_judged {
            let statuses: Vec<JudgeStatus> = rows.iter().filter_map(|r| r.judge).collect();
            for &k in ks {
                let hit = ranked_hit(&statuses, k)?;
                ranked_hits.insert(k, hit);
                ranked.entry(k).or_default().push(if hit { T::one() } else { T::zero() });
            }
            nc.push((rows.len(), c.unwrap_or(0)));
            for r in &rows {
                let key = (p.problem_id.clone(), r.program.clone());
                let status = r.judge.expect("all rows judged");
                suite_votes.insert(key.clone(), r.pass);
                public_votes.insert(key.clone(), r.passed_public_tests);
                judged.insert(key, status);
            }
        }
        let cov = match &p.coverage {
            Some(profile) => Some(profile.percent::<T>(suite_size.min(profile.per_case.len()))?),
            None => None,
        };
        coverage.extend(cov);
        if let Some(o) = p.oracle {
            oracle_ok.push(if o.correct_for_oracle_purposes { T::one() } else { T::zero() });
        }
        per_problem.insert(
            p.problem_id.clone(),
            ProblemReport { n: rows.len(), c, candidates: rows, ranked_hits, oracle: p.oracle, suite: p.suite.clone(), coverage: cov },
        );
    }

    let mut unbiased = BTreeMap::new();
    if !nc.is_empty() {
        let min_n = nc.iter().map(|&(n, _)| n).min().unwrap_or(0);
        for &k in ks.iter().filter(|&&k| k <= min_n) {
            let values = nc
                .iter()
                .map(|&(n, c)| pass_at_k_unbiased::<T>(n, c, k))
                .collect::<Result<Vec<_>, _>>()?;
            unbiased.insert(k, mean(&values).expect("non-empty"));
        }
    }
    let pass_at_k_ranked = ranked.into_iter().map(|(k, v)| (k, mean(&v).expect("non-empty"))).collect();
    let (agreement_v, agreement_public) = if judged.is_empty() {
        (None, None)
    } else {
        (Some(agreement(&suite_votes, &judged)?), Some(agreement(&public_votes, &judged)?))
    };
    let mut notes = vec![AGREEMENT_NOTE.to_string()];
    if agreement_v.is_none() {
        notes.push("agreement absent: no judge data".into());
    }
    if coverage.is_empty() {
        notes.push("coverage absent: no coverage adapter configured or available".into());
    }
    Ok(EvaluationReport {
        suite_size,
        per_problem,
        pass_at_k_unbiased: unbiased,
        pass_at_k_ranked,
        agreement: agreement_v,
        agreement_public,
        coverage: mean(&coverage),
        oracle_correct_rate: mean(&oracle_ok),
        notes,
    })
}

/// One report per suite size.
pub fn sweep<T: Scalar>(
    problems: &[ProblemEval],
    ks: &[usize],
    sizes: &[usize],
) -> Result<BTreeMap<usize, EvaluationReport<T>>, MetricsError> {
    sizes.iter().map(|&s| Ok((s, build_report(problems, ks, s)?))).collect()
}

impl EvaluationReport<f64> {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}%", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "suite size: {}", self.suite_size);
        let _ = writeln!(
            out,
            "{:<24} {:>3} {:>3} {:>8} {:>9} {:>9}",
            "problem", "n", "c", "oracle", "top pass", "coverage"
        );
        for (id, p) in &self.per_problem {
            let top = p.candidates.first().map_or("-".to_string(), |r| format!("{}/{}", r.cases_passed, r.cases_run));
            let _ = writeln!(
                out,
                "{:<24} {:>3} {:>3} {:>8} {:>9} {:>9}",
                id,
                p.n,
                p.c.map_or("-".to_string(), |c| c.to_string()),
                p.oracle.map_or("-".to_string(), |o| o.status.to_string()),
                top,
                pct(p.coverage)
            );
        }
        for (k, v) in &self.pass_at_k_unbiased {
            let _ = writeln!(out, "pass@{k} (unbiased): {}", pct(Some(*v)));
        }
        for (k, v) in &self.pass_at_k_ranked {
            let _ = writeln!(out, "pass@{k} (ranked): {}", pct(Some(*v)));
        }
        let _ = writeln!(out, "agreement (suite): {}", pct(self.agreement));
        let _ = writeln!(out, "agreement (public tests): {}", pct(self.agreement_public));
        let _ = writeln!(out, "coverage: {}", pct(self.coverage));
        let _ = writeln!(out, "oracle correct (AC or TLE): {}", pct(self.oracle_correct_rate));
        out
    }
}
