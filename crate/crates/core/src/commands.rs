//! The three pipeline commands: build verifiers, synthesize candidates,
//! evaluate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use crate::config::RunConfig;
use crate::executor::Executor;
use crate::generation::{generate_oracle, generate_verifier_components, Pipeline, VerifierBundle};
use crate::llm::Gateway;
use crate::metrics::{
    build_report, classify_oracle, coverage_profile, CandidateEval, EvaluationReport, MetricsError, ProblemEval,
};
use crate::pool::par_map;
use crate::problem::{judge, load_corpus, CorpusEntry};
use crate::search::{run_strategy, SearchContext};
use crate::seed::derive_seed;
use crate::verifier::{build_suite, SuiteOptions, VerifyOptions, DEFAULT_MAX_COUNTEREXAMPLES};
use crate::workspace::{digest, file_digest, Stage, StageRecord, Workspace};

/// Per-problem outcome of a command.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CommandSummary {
    pub done: Vec<String>,
    /// Problems whose artifacts were already up to date.
    pub reused: Vec<String>,
    pub failed: Vec<(String, String)>,
}

impl CommandSummary {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failed.is_empty())
    }

    fn add(&mut self, id: &str, outcome: Outcome) {
        match outcome {
            Outcome::Done => self.done.push(id.to_string()),
            Outcome::Reused => self.reused.push(id.to_string()),
            Outcome::Failed(why) => self.failed.push((id.to_string(), why)),
        }
    }
}

impl fmt::Display for CommandSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} done, {} up to date, {} failed", self.done.len(), self.reused.len(), self.failed.len())?;
        for (id, why) in &self.failed {
            writeln!(f, "  {id}: {why}")?;
        }
        Ok(())
    }
}

enum Outcome {
    Done,
    Reused,
    Failed(String),
}

struct Env<'a> {
    config: &'a RunConfig,
    gateway: &'a Gateway,
    executor: Executor,
    workspace: Workspace,
    corpus: Vec<CorpusEntry>,
    config_hash: String,
}

fn open<'a>(config: &'a RunConfig, gateway: &'a Gateway) -> Result<Env<'a>> {
    config.validate()?;
    let corpus = load_corpus(&config.corpus).with_context(|| format!("loading corpus {}", config.corpus.display()))?;
    let config_hash = config.hash();
    let workspace = Workspace::open(&config.workspace, &config_hash)
        .with_context(|| format!("opening workspace {}", config.workspace.display()))?;
    Ok(Env { config, gateway, executor: config.executor(), workspace, corpus, config_hash })
}

impl Env<'_> {
    fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            gateway: self.gateway,
            executor: &self.executor,
            limits: self.config.limits.stage_limits(),
            policy: self.config.equivalence,
            temperature: self.config.gateway.temperature,
            store: None,
        }
    }

    fn for_each<F>(&self, f: F) -> CommandSummary
    where
        F: Fn(&CorpusEntry) -> Outcome + Sync,
    {
        let outcomes = par_map(&self.corpus, self.config.parallelism, |e| f(e));
        let mut summary = CommandSummary::default();
        for (entry, outcome) in self.corpus.iter().zip(outcomes) {
            summary.add(&entry.problem.id, outcome);
        }
        summary
    }
}

/// Generates oracle, validator and batch generator per problem and draws a
/// suite with them.
pub fn cmd_build_verifier(config: &RunConfig, gateway: &Gateway) -> Result<CommandSummary> {
    let env = open(config, gateway)?;
    let store = env.workspace.programs(&config.runtime.extension);
    let seed = config.seed()?;
    let summary = env.for_each(|entry| {
        let id = &entry.problem.id;
        let key = digest(&[&env.config_hash, "build", &entry.digest]);
        if env.workspace.completed(id, Stage::BuildVerifier, &key).is_some() {
            return Outcome::Reused;
        }
        let pipe = Pipeline { store: Some(&store), ..env.pipeline() };
        let built = (|| -> Result<Vec<PathBuf>> {
            let oracle = generate_oracle(&entry.problem, &pipe, config.oracle_attempts)?;
            let components =
                generate_verifier_components(&entry.problem, &pipe, config.max_var_length, config.component_attempts)?;
            let bundle = VerifierBundle::new(oracle, components, config.max_var_length);
            let limits = config.limits.stage_limits();
            let opts = SuiteOptions { oracle_limits: limits.oracle, tool_limits: limits.tool };
            let suite = build_suite(&entry.problem, &bundle, config.suite_size, derive_seed(seed, id), &env.executor, &opts)?;
            let mut paths = vec![env.workspace.save_bundle(id, &bundle)?];
            paths.extend(env.workspace.save_suite(id, &suite)?);
            Ok(paths)
        })();
        let (outcome, record) = match built {
            Ok(paths) => (
                Outcome::Done,
                StageRecord { key, ok: true, error: None, artifacts: paths.iter().map(|p| env.workspace.relative(p)).collect() },
            ),
            Err(e) => {
                let why = format!("{e:#}");
                (Outcome::Failed(why.clone()), StageRecord { key, ok: false, error: Some(why), artifacts: vec![] })
            }
        };
        if let Err(e) = env.workspace.record(id, Stage::BuildVerifier, record) {
            return Outcome::Failed(format!("cannot update manifest: {e}"));
        }
        outcome
    });
    Ok(summary)
}

/// Runs the configured search strategy per problem against its suite.
pub fn cmd_synthesize(config: &RunConfig, gateway: &Gateway) -> Result<CommandSummary> {
    let env = open(config, gateway)?;
    let store = env.workspace.programs(&config.runtime.extension);
    let summary = env.for_each(|entry| {
        let id = &entry.problem.id;
        let suite = match env.workspace.load_suite(id) {
            Ok(s) => s,
            Err(_) => return Outcome::Failed("missing suite; run build-verifier first".into()),
        };
        let suite_digest = file_digest(&env.workspace.suite_path(id));
        let key = digest(&[&env.config_hash, "synthesize", &entry.digest, &suite_digest]);
        if env.workspace.completed(id, Stage::Synthesize, &key).is_some() {
            return Outcome::Reused;
        }
        let pipe = Pipeline { store: Some(&store), ..env.pipeline() };
        let ctx = SearchContext {
            pipeline: pipe,
            suite: &suite,
            verify: VerifyOptions {
                limits: pipe.limits.candidate,
                policy: pipe.policy_for(&entry.problem),
                max_counterexamples: DEFAULT_MAX_COUNTEREXAMPLES,
            },
        };
        let result = run_strategy(&entry.problem, &config.strategy, &ctx)
            .map_err(anyhow::Error::from)
            .and_then(|ranking| Ok(env.workspace.save_ranking(id, &ranking)?));
        let (outcome, record) = match result {
            Ok(path) => (
                Outcome::Done,
                StageRecord { key, ok: true, error: None, artifacts: vec![env.workspace.relative(&path)] },
            ),
            Err(e) => {
                let why = format!("{e:#}");
                (Outcome::Failed(why.clone()), StageRecord { key, ok: false, error: Some(why), artifacts: vec![] })
            }
        };
        if let Err(e) = env.workspace.record(id, Stage::Synthesize, record) {
            return Outcome::Failed(format!("cannot update manifest: {e}"));
        }
        outcome
    });
    Ok(summary)
}

/// Reports written by [`cmd_evaluate`], keyed by suite size.
#[derive(Debug)]
pub struct Evaluation {
    pub reports: BTreeMap<usize, EvaluationReport<f64>>,
    pub files: Vec<PathBuf>,
}

fn evaluate_problem(env: &Env<'_>, entry: &CorpusEntry) -> Result<ProblemEval> {
    let id = &entry.problem.id;
    let ranking = env
        .workspace
        .load_ranking(id)
        .with_context(|| format!("{id}: no ranked candidates; run synthesize first"))?;
    let suite = env.workspace.load_suite(id).ok();
    let bundle = env.workspace.load_bundle(id).ok();
    let mut candidates = Vec::with_capacity(ranking.len());
    for e in &ranking.entries {
        let status = match &entry.judge {
            Some(j) => Some(judge(&e.candidate.source, &entry.problem, j, &env.executor)?),
            None => None,
        };
        candidates.push(CandidateEval { program: e.candidate.clone(), verdict: e.verdict.clone(), judge: status });
    }
    let oracle = match (&bundle, &entry.judge) {
        (Some(b), Some(j)) => Some(classify_oracle(&entry.problem, &b.oracle, j, &env.executor)?),
        _ => None,
    };
    let coverage = match (&env.config.coverage, ranking.top(), &suite) {
        (Some(adapter), Some(top), Some(suite)) if !suite.is_empty() => {
            let inputs: Vec<String> = suite.cases.iter().map(|c| c.input.clone()).collect();
            let limits = env.config.limits.stage_limits().tool;
            match coverage_profile(&top.candidate.source, &inputs, &entry.problem.entry(), adapter, env.executor.runtime(), &limits) {
                Ok(p) => Some(p),
                Err(MetricsError::AdapterUnavailable(why)) => {
                    log::warn!("{id}: coverage adapter unavailable: {why}");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        }
        _ => None,
    };
    Ok(ProblemEval { problem_id: id.clone(), candidates, oracle, suite: suite.map(|s| s.stats), coverage })
}

/// Judges candidates and oracles, then writes `reports/report.{json,txt}`
/// plus one pair per requested suite size.
pub fn cmd_evaluate(config: &RunConfig, gateway: &Gateway) -> Result<Evaluation> {
    let env = open(config, gateway)?;
    let evals = par_map(&env.corpus, config.parallelism, |e| evaluate_problem(&env, e));
    let evals: Vec<ProblemEval> = evals.into_iter().collect::<Result<_>>()?;
    if evals.is_empty() {
        bail!("corpus is empty");
    }
    let mut sizes = vec![config.suite_size];
    sizes.extend(config.suite_sizes.iter().copied());
    let mut reports = BTreeMap::new();
    let mut files = Vec::new();
    for (i, size) in sizes.into_iter().enumerate() {
        let report: EvaluationReport<f64> = build_report(&evals, &config.ks, size)?;
        let stem = if i == 0 { "report".to_string() } else { format!("report_size_{size}") };
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        files.push(env.workspace.write_report(&format!("{stem}.json"), &json)?);
        files.push(env.workspace.write_report(&format!("{stem}.txt"), &report.render_table())?);
        reports.insert(size, report);
    }
    env.workspace
        .record_reports(files.iter().map(|p| env.workspace.relative(p)).collect())?;
    Ok(Evaluation { reports, files })
}
