//! Resample-until-pass pipelines for oracles, verifier components and
//! candidate solutions.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{Entry, ExecError, Executor, ResourceLimits, RunStatus};
use crate::llm::{
    extract_program, render_prompt, template, EmptyResponse, Gateway, GatewayError, GenerationRequest, PromptError,
    PromptKind, DEFAULT_TEMPERATURE,
};
use crate::problem::Problem;
use crate::verifier::{
    compare_outputs, generator_request, parse_generator_records, validator_accepts, EquivalencePolicy, Suite,
};

pub const DEFAULT_ORACLE_ATTEMPTS: u32 = 10;
pub const DEFAULT_CANDIDATE_ATTEMPTS: u32 = 5;
pub const DEFAULT_COMPONENT_ATTEMPTS: u32 = 5;
pub const DEFAULT_MAX_VAR_LENGTH: u32 = 10;
/// Records requested from the batch generator during its smoke test.
const SMOKE_BATCH: usize = 5;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("no oracle passed the public tests in {0} attempts")]
    OracleExhausted(u32),
    #[error("{which} rejected: {reason}")]
    ComponentRejected { which: &'static str, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Executor(#[from] ExecError),
    #[error(transparent)]
    Extract(#[from] EmptyResponse),
    #[error("cannot persist program: {0}")]
    Store(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub request_hash: String,
    pub attempt: u32,
    pub template_version: u32,
    /// Algorithm-category instruction the program was generated under.
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub source: String,
    pub kind: PromptKind,
    pub provenance: Provenance,
    pub passed_public_tests: bool,
}

fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

impl GeneratedProgram {
    /// File stem: `{kind}_{attempt}`, with the category slug folded into the
    /// kind for tagged programs so different instructions never collide.
    pub fn stem(&self) -> String {
        match &self.provenance.category {
            Some(cat) => format!("{}-{}_{}", self.kind, slug(cat), self.provenance.attempt),
            None => format!("{}_{}", self.kind, self.provenance.attempt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierBundle {
    pub oracle: GeneratedProgram,
    pub validator: GeneratedProgram,
    pub batch_generator: GeneratedProgram,
    /// The single-input generator the batch generator was built around.
    pub input_generator: Option<GeneratedProgram>,
    pub max_var_length: u32,
    #[serde(skip)]
    pub suite: Option<Suite>,
}

impl VerifierBundle {
    pub fn new(oracle: GeneratedProgram, components: Components, max_var_length: u32) -> Self {
        Self {
            oracle,
            validator: components.validator,
            batch_generator: components.batch_generator,
            input_generator: components.input_generator,
            max_var_length,
            suite: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Components {
    pub validator: GeneratedProgram,
    pub batch_generator: GeneratedProgram,
    pub input_generator: Option<GeneratedProgram>,
}

/// Per-stage resource limits.
#[derive(Debug, Clone, Copy)]
pub struct StageLimits {
    pub candidate: ResourceLimits,
    pub oracle: ResourceLimits,
    /// Validators and input generators.
    pub tool: ResourceLimits,
}

impl Default for StageLimits {
    fn default() -> Self {
        Self {
            candidate: ResourceLimits::with_wall_time(Duration::from_secs(2)),
            oracle: ResourceLimits::with_wall_time(Duration::from_secs(30)),
            tool: ResourceLimits::with_wall_time(Duration::from_secs(10)),
        }
    }
}

#[derive(Debug, Serialize)]
struct ManifestRow<'a> {
    file: String,
    kind: PromptKind,
    attempt: u32,
    category: Option<&'a str>,
    request_hash: &'a str,
    template_version: u32,
    passed_public_tests: bool,
}

/// Persists generated programs as `{root}/{problem_id}/{stem}.{ext}` with a
/// per-problem `manifest.jsonl` recording provenance.
#[derive(Debug)]
pub struct ProgramStore {
    root: PathBuf,
    extension: String,
    lock: Mutex<()>,
}

impl ProgramStore {
    pub fn new(root: impl Into<PathBuf>, extension: impl Into<String>) -> Self {
        Self { root: root.into(), extension: extension.into(), lock: Mutex::new(()) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file_name(&self, program: &GeneratedProgram) -> String {
        format!("{}.{}", program.stem(), self.extension)
    }

    pub fn save(&self, problem_id: &str, program: &GeneratedProgram) -> std::io::Result<PathBuf> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.root.join(problem_id);
        std::fs::create_dir_all(&dir)?;
        let file = self.file_name(program);
        let path = dir.join(&file);
        std::fs::write(&path, &program.source)?;

        let manifest = dir.join("manifest.jsonl");
        let mut rows: BTreeMap<String, String> = BTreeMap::new();
        if let Ok(text) = std::fs::read_to_string(&manifest) {
            for line in text.lines().filter(|l| !l.is_empty()) {
                if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
                    if let Some(f) = v.get("file").and_then(|f| f.as_str()) {
                        rows.insert(f.to_string(), line.to_string());
                    }
                }
            }
        }
        let row = ManifestRow {
            file: file.clone(),
            kind: program.kind,
            attempt: program.provenance.attempt,
            category: program.provenance.category.as_deref(),
            request_hash: &program.provenance.request_hash,
            template_version: program.provenance.template_version,
            passed_public_tests: program.passed_public_tests,
        };
        rows.insert(file, serde_json::to_string(&row).expect("manifest row serializes"));
        let body: String = rows.values().map(|l| format!("{l}\n")).collect();
        std::fs::write(manifest, body)?;
        Ok(path)
    }
}

/// Everything a generation pipeline needs.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub gateway: &'a Gateway,
    pub executor: &'a Executor,
    pub limits: StageLimits,
    /// Comparison policy for problems that do not set their own.
    pub policy: EquivalencePolicy,
    pub temperature: f64,
    pub store: Option<&'a ProgramStore>,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, executor: &'a Executor) -> Self {
        Self {
            gateway,
            executor,
            limits: StageLimits::default(),
            policy: EquivalencePolicy::default(),
            temperature: DEFAULT_TEMPERATURE,
            store: None,
        }
    }

    pub fn policy_for(&self, problem: &Problem) -> EquivalencePolicy {
        problem.equivalence.unwrap_or(self.policy)
    }

    /// One model sample: render, complete, extract.
    pub fn sample(
        &self,
        problem: &Problem,
        kind: PromptKind,
        extras: &BTreeMap<String, String>,
        attempt: u32,
    ) -> Result<(String, Provenance), GenerationError> {
        let prompt = render_prompt(kind, problem, extras)?;
        let request = GenerationRequest::with_temperature(kind, prompt, self.temperature, attempt)?;
        let text = self.gateway.complete(&request)?;
        let provenance = Provenance {
            request_hash: request.hash(),
            attempt,
            template_version: template(kind).version,
            category: extras.get("category").cloned(),
        };
        Ok((extract_program(&text)?, provenance))
    }

    pub fn persist(&self, problem: &Problem, program: &GeneratedProgram) -> Result<(), GenerationError> {
        if let Some(store) = self.store {
            store.save(&problem.id, program)?;
        }
        Ok(())
    }

    /// Whether `source` reproduces every public test of `problem`.
    pub fn passes_public(&self, problem: &Problem, source: &str, limits: &ResourceLimits) -> Result<bool, ExecError> {
        let inputs: Vec<String> = problem.public_tests.iter().map(|t| t.input.clone()).collect();
        let outcomes = self.executor.run_batch(source, &inputs, limits, &problem.entry())?;
        let policy = self.policy_for(problem);
        Ok(outcomes
            .iter()
            .zip(&problem.public_tests)
            .all(|(o, t)| o.status == RunStatus::Ok && compare_outputs(&t.expected_output, &o.stdout, policy)))
    }
}

/// Samples oracles until one passes every public test.
pub fn generate_oracle(problem: &Problem, pipe: &Pipeline<'_>, max_attempts: u32) -> Result<GeneratedProgram, GenerationError> {
    let extras = BTreeMap::new();
    for attempt in 1..=max_attempts {
        let (source, provenance) = match pipe.sample(problem, PromptKind::Oracle, &extras, attempt) {
            Ok(s) => s,
            Err(GenerationError::Extract(_)) => continue,
            Err(e) => return Err(e),
        };
        let passed = pipe.passes_public(problem, &source, &pipe.limits.oracle)?;
        let program = GeneratedProgram { source, kind: PromptKind::Oracle, provenance, passed_public_tests: passed };
        pipe.persist(problem, &program)?;
        if passed {
            check_determinism(problem, &program, pipe)?;
            return Ok(program);
        }
        log::info!("{}: oracle attempt {attempt} failed the public tests", problem.id);
    }
    Err(GenerationError::OracleExhausted(max_attempts))
}

fn check_determinism(problem: &Problem, oracle: &GeneratedProgram, pipe: &Pipeline<'_>) -> Result<(), ExecError> {
    let input = &problem.public_tests[0].input;
    let entry = problem.entry();
    let a = pipe.executor.run(&oracle.source, input, &pipe.limits.oracle, &entry)?;
    let b = pipe.executor.run(&oracle.source, input, &pipe.limits.oracle, &entry)?;
    if a.stdout != b.stdout {
        log::warn!("{}: oracle output differs between two runs on the same input", problem.id);
    }
    Ok(())
}

/// Samples candidates until one passes the public tests, returning the last
/// sample (with `passed_public_tests = false`) when none does.
pub fn generate_candidate(
    problem: &Problem,
    instruction: Option<&str>,
    pipe: &Pipeline<'_>,
    max_attempts: u32,
) -> Result<GeneratedProgram, GenerationError> {
    sample_candidate(problem, instruction, pipe, 1..=max_attempts.max(1))
}

/// [`generate_candidate`] over an explicit attempt range, so independent
/// draws get distinct transcript keys.
pub fn sample_candidate(
    problem: &Problem,
    instruction: Option<&str>,
    pipe: &Pipeline<'_>,
    attempts: RangeInclusive<u32>,
) -> Result<GeneratedProgram, GenerationError> {
    let (kind, extras) = match instruction {
        Some(cat) => (PromptKind::TaggedSolution, BTreeMap::from([("category".to_string(), cat.to_string())])),
        None => (PromptKind::NaiveSolution, BTreeMap::new()),
    };
    let mut last = None;
    for attempt in attempts {
        let (source, provenance) = match pipe.sample(problem, kind, &extras, attempt) {
            Ok(s) => s,
            Err(GenerationError::Extract(e)) => {
                last = last.or(Some(Err(e)));
                continue;
            }
            Err(e) => return Err(e),
        };
        let passed = pipe.passes_public(problem, &source, &pipe.limits.candidate)?;
        let program = GeneratedProgram { source, kind, provenance, passed_public_tests: passed };
        pipe.persist(problem, &program)?;
        if passed {
            return Ok(program);
        }
        last = Some(Ok(program));
    }
    match last {
        Some(Ok(p)) => Ok(p),
        Some(Err(e)) => Err(e.into()),
        None => Err(EmptyResponse.into()),
    }
}

/// Generates and smoke-tests the input validator and the batch generator.
pub fn generate_verifier_components(
    problem: &Problem,
    pipe: &Pipeline<'_>,
    max_var_length: u32,
    max_attempts: u32,
) -> Result<Components, GenerationError> {
    let validator = generate_validator(problem, pipe, max_attempts)?;
    let (input_generator, batch_generator) = generate_batch_generator(problem, pipe, max_var_length, max_attempts)?;
    Ok(Components { validator, batch_generator, input_generator: Some(input_generator) })
}

fn generate_validator(problem: &Problem, pipe: &Pipeline<'_>, max_attempts: u32) -> Result<GeneratedProgram, GenerationError> {
    let inputs: Vec<String> = problem.public_tests.iter().map(|t| t.input.clone()).collect();
    let mut reason = String::from("no usable sample");
    for attempt in 1..=max_attempts {
        let (source, provenance) = match pipe.sample(problem, PromptKind::InputValidator, &BTreeMap::new(), attempt) {
            Ok(s) => s,
            Err(GenerationError::Extract(_)) => continue,
            Err(e) => return Err(e),
        };
        let outcomes = pipe.executor.run_batch(&source, &inputs, &pipe.limits.tool, &Entry::Script)?;
        let accepted = outcomes.iter().all(|o| o.is_ok() && validator_accepts(&o.stdout));
        let program = GeneratedProgram { source, kind: PromptKind::InputValidator, provenance, passed_public_tests: accepted };
        pipe.persist(problem, &program)?;
        if accepted {
            return Ok(program);
        }
        reason = "rejects public input".into();
    }
    Err(GenerationError::ComponentRejected { which: "validator", reason })
}

fn generate_batch_generator(
    problem: &Problem,
    pipe: &Pipeline<'_>,
    max_var_length: u32,
    max_attempts: u32,
) -> Result<(GeneratedProgram, GeneratedProgram), GenerationError> {
    let mut reason = String::from("no usable sample");
    let mvl = max_var_length.to_string();
    for attempt in 1..=max_attempts {
        let extras = BTreeMap::from([("max_var_length".to_string(), mvl.clone())]);
        let (gen_source, gen_prov) = match pipe.sample(problem, PromptKind::InputGenerator, &extras, attempt) {
            Ok(s) => s,
            Err(GenerationError::Extract(_)) => continue,
            Err(e) => return Err(e),
        };
        let input_generator = GeneratedProgram {
            source: gen_source.clone(),
            kind: PromptKind::InputGenerator,
            provenance: gen_prov,
            passed_public_tests: false,
        };
        pipe.persist(problem, &input_generator)?;

        let mut extras = extras;
        extras.insert("input_generator".into(), gen_source.trim_end().to_string());
        let (source, provenance) = match pipe.sample(problem, PromptKind::BatchGenerator, &extras, attempt) {
            Ok(s) => s,
            Err(GenerationError::Extract(_)) => continue,
            Err(e) => return Err(e),
        };
        let out = pipe.executor.run(&source, &generator_request(0, SMOKE_BATCH, max_var_length), &pipe.limits.tool, &Entry::Script)?;
        let records = parse_generator_records(&out.stdout);
        let ok = out.is_ok() && records.len() == SMOKE_BATCH && records.iter().all(Option::is_some);
        let program = GeneratedProgram { source, kind: PromptKind::BatchGenerator, provenance, passed_public_tests: ok };
        pipe.persist(problem, &program)?;
        if ok {
            return Ok((input_generator, program));
        }
        reason = if out.is_ok() {
            format!("emitted {} parseable records of {SMOKE_BATCH} requested", records.iter().flatten().count())
        } else {
            format!("smoke run ended with {:?}", out.status)
        };
    }
    Err(GenerationError::ComponentRejected { which: "batch_generator", reason })
}
