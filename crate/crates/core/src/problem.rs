//! Problems, system judges and corpus loading.
//!
//! A problem file is a TOML document with the fields of [`Problem`] at the top
//! level, public tests inline as `[[public_tests]]`, and an optional `[judge]`
//! table carrying hidden tests for the system judge. A corpus is a directory
//! of such files, optionally ordered by an `index.toml` listing file stems.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{Entry, ExecError, Executor, ResourceLimits, RunStatus};
use crate::verifier::{compare_outputs, EquivalencePolicy};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed problem file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("schema violation in field `{field}`: {reason}")]
    Schema { field: &'static str, reason: String },
}

impl ProblemError {
    fn schema(field: &'static str, reason: impl Into<String>) -> Self {
        Self::Schema { field, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoStyle {
    StdinStdout,
    FunctionCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub name: String,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Problem {
    pub id: String,
    pub title: String,
    pub description: String,
    pub constraints: String,
    pub io_style: IoStyle,
    pub signature: Option<Signature>,
    pub public_tests: Vec<TestCase>,
    pub categories: Vec<String>,
    pub difficulty: Option<Difficulty>,
    /// Output comparison override; `None` means the run-wide default.
    pub equivalence: Option<EquivalencePolicy>,
}

impl Problem {
    pub fn entry(&self) -> Entry {
        match (&self.io_style, &self.signature) {
            (IoStyle::FunctionCall, Some(sig)) => Entry::Function(sig.name.clone()),
            _ => Entry::Script,
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.id.trim().is_empty() {
            return Err(ProblemError::schema("id", "must not be empty"));
        }
        if self.public_tests.is_empty() {
            return Err(ProblemError::schema("public_tests", "at least one public test is required"));
        }
        match (self.io_style, &self.signature) {
            (IoStyle::FunctionCall, None) => {
                Err(ProblemError::schema("signature", "function_call problems need a signature"))
            }
            (IoStyle::StdinStdout, Some(_)) => {
                Err(ProblemError::schema("signature", "stdin_stdout problems must not have a signature"))
            }
            (IoStyle::FunctionCall, Some(sig)) if sig.name.trim().is_empty() => {
                Err(ProblemError::schema("signature", "function name is empty"))
            }
            _ => Ok(()),
        }
    }
}

/// Judge status for one program against a system judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeStatus {
    // Declaration order is the precedence order: later variants dominate.
    AC,
    TLE,
    RE,
    WA,
}

impl JudgeStatus {
    /// Folds per-case statuses with precedence WA > RE > TLE > AC.
    pub fn fold<I: IntoIterator<Item = JudgeStatus>>(statuses: I) -> JudgeStatus {
        statuses.into_iter().max().unwrap_or(JudgeStatus::AC)
    }

    pub fn is_accepted(self) -> bool {
        self == JudgeStatus::AC
    }
}

impl fmt::Display for JudgeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JudgeStatus::AC => "AC",
            JudgeStatus::WA => "WA",
            JudgeStatus::TLE => "TLE",
            JudgeStatus::RE => "RE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemJudge {
    pub hidden_tests: Vec<TestCase>,
    pub time_limit: Duration,
    pub equivalence: EquivalencePolicy,
}

impl SystemJudge {
    pub fn limits(&self) -> ResourceLimits {
        ResourceLimits::with_wall_time(self.time_limit)
            .grace((self.time_limit / 4).clamp(Duration::from_millis(50), Duration::from_millis(500)))
    }
}

/// Judges one program: every hidden test must match within the time limit.
pub fn judge(
    source: &str,
    problem: &Problem,
    judge: &SystemJudge,
    executor: &Executor,
) -> Result<JudgeStatus, ExecError> {
    let inputs: Vec<String> = judge.hidden_tests.iter().map(|t| t.input.clone()).collect();
    let outcomes = executor.run_batch(source, &inputs, &judge.limits(), &problem.entry())?;
    let per_case = outcomes.iter().zip(&judge.hidden_tests).map(|(o, t)| match o.status {
        RunStatus::Ok if compare_outputs(&t.expected_output, &o.stdout, judge.equivalence) => JudgeStatus::AC,
        RunStatus::Ok | RunStatus::OutputTruncated => JudgeStatus::WA,
        RunStatus::Tle => JudgeStatus::TLE,
        RunStatus::Re | RunStatus::Oom => JudgeStatus::RE,
    });
    Ok(JudgeStatus::fold(per_case))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    id: String,
    title: String,
    description: String,
    #[serde(default)]
    constraints: String,
    io_style: IoStyle,
    signature: Option<Signature>,
    #[serde(default)]
    public_tests: Vec<TestCase>,
    #[serde(default)]
    categories: Vec<String>,
    difficulty: Option<Difficulty>,
    answer_policy: Option<String>,
    equivalence: Option<EquivalencePolicy>,
    judge: Option<JudgeFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JudgeFile {
    time_limit_ms: u64,
    #[serde(default)]
    equivalence: Option<EquivalencePolicy>,
    #[serde(default)]
    hidden_tests: Vec<TestCase>,
}

/// A loaded problem plus its optional judge data and a digest of the file.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub problem: Problem,
    pub judge: Option<SystemJudge>,
    pub digest: String,
}

fn parse_problem(path: &Path, text: &str) -> Result<CorpusEntry, ProblemError> {
    let raw: ProblemFile = toml::from_str(text).map_err(|e| ProblemError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match raw.answer_policy.as_deref() {
        None | Some("exact") => {}
        Some(other) => {
            return Err(ProblemError::schema(
                "answer_policy",
                format!("`{other}` is unsupported; only single-answer (`exact`) problems are handled"),
            ))
        }
    }
    let problem = Problem {
        id: raw.id,
        title: raw.title,
        description: raw.description,
        constraints: raw.constraints,
        io_style: raw.io_style,
        signature: raw.signature,
        public_tests: raw.public_tests,
        categories: raw.categories,
        difficulty: raw.difficulty,
        equivalence: raw.equivalence,
    };
    problem.validate()?;
    let judge = match raw.judge {
        None => None,
        Some(j) => {
            if j.time_limit_ms == 0 {
                return Err(ProblemError::schema("judge.time_limit_ms", "must be positive"));
            }
            Some(SystemJudge {
                hidden_tests: j.hidden_tests,
                time_limit: Duration::from_millis(j.time_limit_ms),
                equivalence: j.equivalence.or(problem.equivalence).unwrap_or_default(),
            })
        }
    };
    Ok(CorpusEntry {
        problem,
        judge,
        digest: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn read(path: &Path) -> Result<String, ProblemError> {
    std::fs::read_to_string(path).map_err(|source| ProblemError::Io { path: path.to_path_buf(), source })
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem, ProblemError> {
    load_entry(path).map(|e| e.problem)
}

pub fn load_entry(path: impl AsRef<Path>) -> Result<CorpusEntry, ProblemError> {
    let path = path.as_ref();
    parse_problem(path, &read(path)?)
}

#[derive(Debug, Deserialize)]
struct IndexFile {
    problems: Vec<String>,
}

/// Loads every `*.toml` problem in `dir` (excluding `index.toml`). With an
/// index file the listed stems are loaded in that order; otherwise files are
/// loaded sorted by name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, ProblemError> {
    let dir = dir.as_ref();
    let index = dir.join("index.toml");
    let paths: Vec<PathBuf> = if index.exists() {
        let text = read(&index)?;
        let idx: IndexFile = toml::from_str(&text).map_err(|e| ProblemError::Parse {
            path: index.clone(),
            message: e.to_string(),
        })?;
        idx.problems.iter().map(|stem| dir.join(format!("{stem}.toml"))).collect()
    } else {
        let listing = std::fs::read_dir(dir).map_err(|source| ProblemError::Io { path: dir.to_path_buf(), source })?;
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml") && p.file_name().is_some_and(|n| n != "index.toml"))
            .collect();
        paths.sort();
        paths
    };
    let entries = paths.iter().map(load_entry).collect::<Result<Vec<_>, _>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.problem.id.clone()) {
            return Err(ProblemError::schema("id", format!("duplicate problem id `{}`", e.problem.id)));
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
id = "echo"
title = "Echo"
description = "Print the input."
io_style = "stdin_stdout"

[[public_tests]]
input = "5\n"
expected_output = "5\n"
"#;

    fn parse(text: &str) -> Result<CorpusEntry, ProblemError> {
        parse_problem(Path::new("inline.toml"), text)
    }

    #[test]
    fn minimal_stdin_problem() {
        let e = parse(MINIMAL).unwrap();
        assert_eq!(e.problem.io_style, IoStyle::StdinStdout);
        assert_eq!(e.problem.public_tests.len(), 1);
        assert!(e.judge.is_none());
        assert_eq!(e.problem.entry(), Entry::Script);
    }

    #[test]
    fn function_call_without_signature_is_schema_error() {
        let text = MINIMAL.replace("stdin_stdout", "function_call");
        match parse(&text) {
            Err(ProblemError::Schema { field, .. }) => assert_eq!(field, "signature"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn stdin_with_signature_is_schema_error() {
        let text = format!("{MINIMAL}\n[signature]\nname = \"f\"\nparams = []\n");
        assert!(matches!(parse(&text), Err(ProblemError::Schema { field: "signature", .. })));
    }

    #[test]
    fn categories_pass_through() {
        let text = MINIMAL.replace(
            "io_style",
            "categories = [\"Binary Search\", \"Greedy\"]\nio_style",
        ) + "\n[[public_tests]]\ninput = \"6\\n\"\nexpected_output = \"6\\n\"\n";
        let e = parse(&text).unwrap();
        assert_eq!(e.problem.categories, vec!["Binary Search", "Greedy"]);
        assert_eq!(e.problem.public_tests.len(), 2);
    }

    #[test]
    fn empty_public_tests_rejected() {
        let text = "id = \"x\"\ntitle = \"x\"\ndescription = \"x\"\nio_style = \"stdin_stdout\"\n";
        assert!(matches!(parse(text), Err(ProblemError::Schema { field: "public_tests", .. })));
    }

    #[test]
    fn checker_answer_policy_unsupported() {
        let text = MINIMAL.replace("io_style", "answer_policy = \"checker\"\nio_style");
        assert!(matches!(parse(&text), Err(ProblemError::Schema { field: "answer_policy", .. })));
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(parse("id = "), Err(ProblemError::Parse { .. })));
    }

    #[test]
    fn judge_table_loads() {
        let text = format!(
            "{MINIMAL}\n[judge]\ntime_limit_ms = 1500\n[[judge.hidden_tests]]\ninput = \"1\\n\"\nexpected_output = \"1\\n\"\n"
        );
        let j = parse(&text).unwrap().judge.unwrap();
        assert_eq!(j.time_limit, Duration::from_millis(1500));
        assert_eq!(j.hidden_tests.len(), 1);
        assert_eq!(j.equivalence, EquivalencePolicy::Token);
    }

    #[test]
    fn status_precedence() {
        use JudgeStatus::*;
        assert_eq!(JudgeStatus::fold([AC, TLE, AC]), TLE);
        assert_eq!(JudgeStatus::fold([TLE, RE]), RE);
        assert_eq!(JudgeStatus::fold([RE, WA, TLE]), WA);
        assert_eq!(JudgeStatus::fold([AC, AC]), AC);
    }
}
