//! Search strategies over candidate programs and verdict-based ranking.
//!
//! * implicit: draw `n` candidates directly and rank them post hoc;
//! * instruction enumerator: one tagged generation per algorithm category;
//! * iterative: refine one candidate with its counterexamples for up to
//!   `max_rounds` rounds, stopping at the first passing verdict.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::{sample_candidate, GeneratedProgram, GenerationError, Pipeline, DEFAULT_CANDIDATE_ATTEMPTS};
use crate::llm::PromptKind;
use crate::pool::par_map;
use crate::problem::Problem;
use crate::verifier::{verify_candidate, Counterexample, Suite, Verdict, VerifierError, VerifyOptions};

pub const DEFAULT_MAX_ROUNDS: u32 = 3;
/// Counterexamples embedded in one refinement prompt.
pub const REFINEMENT_CASES: usize = 3;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid strategy: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Implicit,
    InstructionEnumerator,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    /// Candidates drawn (implicit) or drawn per category (enumerator).
    pub sample_budget: u32,
    #[serde(default)]
    pub instruction_set: Vec<String>,
    #[serde(default = "default_rounds")]
    pub max_rounds: u32,
}

fn default_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

impl StrategySpec {
    pub fn implicit(n: u32) -> Self {
        Self { kind: StrategyKind::Implicit, sample_budget: n, instruction_set: vec![], max_rounds: DEFAULT_MAX_ROUNDS }
    }

    pub fn enumerator(categories: Vec<String>) -> Self {
        Self { kind: StrategyKind::InstructionEnumerator, sample_budget: 1, instruction_set: categories, max_rounds: DEFAULT_MAX_ROUNDS }
    }

    pub fn iterative(rounds: u32) -> Self {
        Self { kind: StrategyKind::Iterative, sample_budget: 1, instruction_set: vec![], max_rounds: rounds }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.sample_budget == 0 {
            return Err(SearchError::InvalidSpec("sample_budget must be at least 1"));
        }
        match self.kind {
            StrategyKind::InstructionEnumerator if self.instruction_set.is_empty() => {
                Err(SearchError::InvalidSpec("instruction enumerator needs a non-empty instruction set"))
            }
            StrategyKind::Iterative if self.max_rounds == 0 => Err(SearchError::InvalidSpec("max_rounds must be at least 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub candidate: GeneratedProgram,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub entries: Vec<RankedEntry>,
}

impl RankedCandidates {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    /// Category of the top-ranked candidate.
    pub fn selected_category(&self) -> Option<&str> {
        self.top().and_then(|e| e.candidate.provenance.category.as_deref())
    }

    /// First category in `order` whose candidate passed the suite.
    pub fn first_passing_category<'a>(&self, order: &'a [String]) -> Option<&'a str> {
        order.iter().map(String::as_str).find(|cat| {
            self.entries
                .iter()
                .any(|e| e.verdict.pass && e.candidate.provenance.category.as_deref() == Some(*cat))
        })
    }
}

/// Total order: passing first, then more cases passed, then public-test
/// passers, then earlier attempts, then provenance hash, then source.
fn rank_order(a: &(GeneratedProgram, Verdict), b: &(GeneratedProgram, Verdict)) -> Ordering {
    let (pa, va) = a;
    let (pb, vb) = b;
    vb.pass
        .cmp(&va.pass)
        .then(vb.cases_passed.cmp(&va.cases_passed))
        .then(pb.passed_public_tests.cmp(&pa.passed_public_tests))
        .then(pa.provenance.attempt.cmp(&pb.provenance.attempt))
        .then_with(|| pa.provenance.request_hash.cmp(&pb.provenance.request_hash))
        .then_with(|| pa.source.cmp(&pb.source))
}

pub fn rank_candidates(mut verdicts: Vec<(GeneratedProgram, Verdict)>) -> RankedCandidates {
    verdicts.sort_by(rank_order);
    RankedCandidates {
        entries: verdicts
            .into_iter()
            .enumerate()
            .map(|(i, (candidate, verdict))| RankedEntry { rank: i + 1, candidate, verdict })
            .collect(),
    }
}

/// Inputs shared by all strategies.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub pipeline: Pipeline<'a>,
    pub suite: &'a Suite,
    pub verify: VerifyOptions,
}

fn verify_all(
    problem: &Problem,
    ctx: &SearchContext<'_>,
    candidates: Vec<GeneratedProgram>,
) -> Result<Vec<(GeneratedProgram, Verdict)>, SearchError> {
    // Cases already fan out inside verify_candidate; two candidates at a time
    // keeps the executor busy without oversubscribing it.
    let verdicts = par_map(&candidates, 2, |c| verify_candidate(problem, c, ctx.suite, ctx.pipeline.executor, &ctx.verify));
    candidates
        .into_iter()
        .zip(verdicts)
        .map(|(c, v)| Ok((c, v?)))
        .collect()
}

pub fn run_implicit(problem: &Problem, spec: &StrategySpec, ctx: &SearchContext<'_>) -> Result<RankedCandidates, SearchError> {
    spec.validate()?;
    if spec.kind != StrategyKind::Implicit {
        return Err(SearchError::InvalidSpec("run_implicit needs an implicit strategy"));
    }
    let candidates = (1..=spec.sample_budget)
        .map(|i| sample_candidate(problem, None, &ctx.pipeline, i..=i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank_candidates(verify_all(problem, ctx, candidates)?))
}

pub fn run_instruction_enumerator(
    problem: &Problem,
    spec: &StrategySpec,
    ctx: &SearchContext<'_>,
) -> Result<RankedCandidates, SearchError> {
    spec.validate()?;
    if spec.kind != StrategyKind::InstructionEnumerator {
        return Err(SearchError::InvalidSpec("run_instruction_enumerator needs an enumerator strategy"));
    }
    let cap = DEFAULT_CANDIDATE_ATTEMPTS;
    let mut candidates = Vec::new();
    for category in &spec.instruction_set {
        for draw in 0..spec.sample_budget {
            let attempts = draw * cap + 1..=(draw + 1) * cap;
            candidates.push(sample_candidate(problem, Some(category), &ctx.pipeline, attempts)?);
        }
    }
    Ok(rank_candidates(verify_all(problem, ctx, candidates)?))
}

pub fn render_failing_cases(cases: &[Counterexample]) -> String {
    cases
        .iter()
        .take(REFINEMENT_CASES)
        .enumerate()
        .map(|(i, c)| {
            let actual = match c.status {
                crate::executor::RunStatus::Ok => c.actual.trim_end().to_string(),
                other => format!("{} ({other:?})", c.actual.trim_end()),
            };
            format!(
                "Case {}:\nInput:\n{}\nExpected output:\n{}\nActual output:\n{}",
                i + 1,
                c.input.trim_end(),
                c.expected.trim_end(),
                actual
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn run_iterative(problem: &Problem, spec: &StrategySpec, ctx: &SearchContext<'_>) -> Result<RankedCandidates, SearchError> {
    spec.validate()?;
    if spec.kind != StrategyKind::Iterative {
        return Err(SearchError::InvalidSpec("run_iterative needs an iterative strategy"));
    }
    let pipe = &ctx.pipeline;
    let mut rounds: Vec<(GeneratedProgram, Verdict)> = Vec::new();
    let mut current = sample_candidate(problem, None, pipe, 1..=1)?;
    for round in 1..=spec.max_rounds {
        if round > 1 {
            let (prev, verdict) = rounds.last().expect("a previous round exists");
            let extras = BTreeMap::from([
                ("previous_program".to_string(), prev.source.trim_end().to_string()),
                ("failing_cases".to_string(), render_failing_cases(&verdict.counterexamples)),
            ]);
            let (source, provenance) = pipe.sample(problem, PromptKind::Refinement, &extras, round)?;
            let passed = pipe
                .passes_public(problem, &source, &pipe.limits.candidate)
                .map_err(GenerationError::from)?;
            current = GeneratedProgram { source, kind: PromptKind::Refinement, provenance, passed_public_tests: passed };
            pipe.persist(problem, &current)?;
        }
        let verdict = verify_candidate(problem, &current, ctx.suite, pipe.executor, &ctx.verify)?;
        let done = verdict.pass;
        rounds.push((current.clone(), verdict));
        if done {
            break;
        }
    }
    Ok(rank_candidates(rounds))
}

/// Dispatches on `spec.kind`.
pub fn run_strategy(problem: &Problem, spec: &StrategySpec, ctx: &SearchContext<'_>) -> Result<RankedCandidates, SearchError> {
    match spec.kind {
        StrategyKind::Implicit => run_implicit(problem, spec, ctx),
        StrategyKind::InstructionEnumerator => run_instruction_enumerator(problem, spec, ctx),
        StrategyKind::Iterative => run_iterative(problem, spec, ctx),
    }
}
