#![allow(dead_code)]

//! Shared fixtures: the desk corpus and a scripted chat backend.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use oracle_harness::executor::{Executor, ResourceLimits, Runtime};
use oracle_harness::generation::{GeneratedProgram, Provenance, StageLimits};
use oracle_harness::llm::{ChatBackend, Gateway, GenerationRequest, PromptKind, TranscriptStore};
use oracle_harness::problem::{load_corpus, CorpusEntry};

pub const DESK_IDS: [&str; 6] = ["count_inversions", "count_primes", "knapsack", "lis", "max_subarray", "repair_cars"];

pub fn desk() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/desk")
}

pub fn problems_dir() -> PathBuf {
    desk().join("problems")
}

pub fn corpus() -> Vec<CorpusEntry> {
    load_corpus(problems_dir()).expect("desk corpus loads")
}

pub fn entry(id: &str) -> CorpusEntry {
    corpus().into_iter().find(|e| e.problem.id == id).unwrap_or_else(|| panic!("no desk problem {id}"))
}

pub fn source(id: &str, file: &str) -> String {
    let path = desk().join("programs").join(id).join(file);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn executor() -> Executor {
    Executor::with_default_parallelism(Runtime::python())
}

pub fn stage_limits() -> StageLimits {
    StageLimits {
        candidate: ResourceLimits::with_wall_time(Duration::from_secs(2)),
        oracle: ResourceLimits::with_wall_time(Duration::from_secs(5)),
        tool: ResourceLimits::with_wall_time(Duration::from_secs(5)),
    }
}

pub fn program(id: &str, file: &str, kind: PromptKind, attempt: u32) -> GeneratedProgram {
    GeneratedProgram {
        source: source(id, file),
        kind,
        provenance: Provenance { request_hash: format!("{id}/{file}"), attempt, template_version: 1, category: None },
        passed_public_tests: true,
    }
}

/// Chat backend that answers from the desk programs. The problem is found by
/// its title in the prompt; the program by prompt kind, attempt and
/// category.
pub struct DeskBackend {
    titles: Vec<(String, String)>,
    categories: HashMap<String, Vec<String>>,
    naive_plan: Mutex<HashMap<String, Vec<String>>>,
    overrides: Mutex<HashMap<(String, PromptKind, u32), String>>,
    pub calls: AtomicUsize,
    pub prompts: Mutex<Vec<(PromptKind, u32, String)>>,
}

impl DeskBackend {
    pub fn new() -> Self {
        let corpus = corpus();
        let mut titles: Vec<(String, String)> =
            corpus.iter().map(|e| (e.problem.title.clone(), e.problem.id.clone())).collect();
        // longest title first so no title shadows one that contains it
        titles.sort_by_key(|(t, _)| std::cmp::Reverse(t.len()));
        let categories = corpus.iter().map(|e| (e.problem.id.clone(), e.problem.categories.clone())).collect();
        Self {
            titles,
            categories,
            naive_plan: Mutex::new(HashMap::new()),
            overrides: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Files answered for naive-solution attempts 1, 2, ... (cycled).
    pub fn naive_plan(self, id: &str, files: &[&str]) -> Self {
        self.naive_plan.lock().unwrap().insert(id.into(), files.iter().map(|s| s.to_string()).collect());
        self
    }

    /// Answers `kind` attempt `attempt` of problem `id` with a raw response.
    pub fn respond(self, id: &str, kind: PromptKind, attempt: u32, response: &str) -> Self {
        self.overrides.lock().unwrap().insert((id.into(), kind, attempt), response.into());
        self
    }

    pub fn respond_file(self, id: &str, kind: PromptKind, attempt: u32, file: &str) -> Self {
        let text = fence(&source(id, file));
        self.respond(id, kind, attempt, &text)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn problem_of(&self, prompt: &str) -> Option<&str> {
        self.titles.iter().find(|(t, _)| prompt.contains(t.as_str())).map(|(_, id)| id.as_str())
    }

    fn file_for(&self, id: &str, req: &GenerationRequest) -> String {
        match req.prompt_kind {
            PromptKind::Oracle => "oracle.py".into(),
            PromptKind::InputValidator => "validator.py".into(),
            PromptKind::InputGenerator | PromptKind::BatchGenerator => "generator.py".into(),
            PromptKind::Refinement => "fast.py".into(),
            PromptKind::NaiveSolution => {
                let plans = self.naive_plan.lock().unwrap();
                let default = vec!["bug_a.py".to_string(), "fast.py".into(), "bug_b.py".into()];
                let plan = plans.get(id).unwrap_or(&default);
                plan[(req.attempt as usize - 1) % plan.len()].clone()
            }
            PromptKind::TaggedSolution => {
                let cats = &self.categories[id];
                let which = cats.iter().position(|c| req.rendered_prompt.contains(&format!("Use a {c} algorithm")));
                match which {
                    Some(0) => "bug_a.py".into(),
                    Some(1) => "fast.py".into(),
                    _ => "bug_b.py".into(),
                }
            }
        }
    }
}

pub fn fence(src: &str) -> String {
    format!("Here is the program.\n```python\n{}```\nIt reads the input and prints the answer.\n", src)
}

impl ChatBackend for DeskBackend {
    fn complete(&self, req: &GenerationRequest) -> Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push((req.prompt_kind, req.attempt, req.rendered_prompt.clone()));
        let id = self.problem_of(&req.rendered_prompt).ok_or("unknown problem")?.to_string();
        if let Some(text) = self.overrides.lock().unwrap().get(&(id.clone(), req.prompt_kind, req.attempt)) {
            return Ok(text.clone());
        }
        let mut file = self.file_for(&id, req);
        if !desk().join("programs").join(&id).join(&file).exists() {
            file = "fast.py".into();
        }
        Ok(fence(&source(&id, &file)))
    }
}

/// Gateway recording the desk backend into `dir`.
pub fn recording_gateway(backend: Arc<DeskBackend>, dir: &Path) -> Gateway {
    Gateway::record(backend, TranscriptStore::open(dir).unwrap(), "desk")
}

pub fn live_gateway(backend: Arc<DeskBackend>) -> Gateway {
    Gateway::live(backend, "desk")
}

/// Verifier bundle made of the hand-written desk programs.
pub fn desk_bundle(id: &str) -> oracle_harness::VerifierBundle {
    oracle_harness::VerifierBundle::new(
        program(id, "oracle.py", PromptKind::Oracle, 1),
        oracle_harness::generation::Components {
            validator: program(id, "validator.py", PromptKind::InputValidator, 1),
            batch_generator: program(id, "generator.py", PromptKind::BatchGenerator, 1),
            input_generator: None,
        },
        10,
    )
}

pub fn desk_suite(id: &str, size: usize, seed: u64, exec: &Executor) -> oracle_harness::Suite {
    let l = stage_limits();
    let opts = oracle_harness::verifier::SuiteOptions { oracle_limits: l.oracle, tool_limits: l.tool };
    oracle_harness::verifier::build_suite(&entry(id).problem, &desk_bundle(id), size, seed, exec, &opts)
        .expect("desk suite builds")
}
