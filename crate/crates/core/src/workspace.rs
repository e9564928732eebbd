//! On-disk layout of a run:
//!
//! ```text
//! transcripts/            recorded model responses
//! programs/{problem}/     generated programs, manifest.jsonl, verifier.json
//! suites/{problem}.jsonl  one suite case per line (+ .stats.json)
//! verdicts/{problem}.jsonl ranked candidates with verdicts
//! reports/                evaluation reports
//! manifest.json           per-problem stage keys and artifact lists
//! ```
//!
//! All files are written with stable field order so replaying a run
//! reproduces them byte for byte.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generation::{ProgramStore, VerifierBundle};
use crate::search::{RankedCandidates, RankedEntry};
use crate::verifier::{Suite, SuiteCase, SuiteStats};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BuildVerifier,
    Synthesize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config, the problem and upstream artifacts.
    pub key: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Paths relative to the workspace root.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub problems: BTreeMap<String, BTreeMap<Stage, StageRecord>>,
    pub reports: Vec<String>,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    manifest: Mutex<Manifest>,
}

/// Stable digest over a list of parts.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut body = String::new();
    for row in rows {
        body.push_str(&serde_json::to_string(&row).map_err(io::Error::other)?);
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

impl Workspace {
    /// Opens (creating if needed) the workspace at `root`.
    pub fn open(root: impl Into<PathBuf>, config_hash: &str) -> io::Result<Self> {
        let root = root.into();
        for dir in ["transcripts", "programs", "suites", "verdicts", "reports"] {
            std::fs::create_dir_all(root.join(dir))?;
        }
        let path = root.join(MANIFEST_FILE);
        let mut manifest: Manifest = if path.exists() { read_json(&path)? } else { Manifest::default() };
        manifest.config_hash = config_hash.to_string();
        Ok(Self { root, manifest: Mutex::new(manifest) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn programs(&self, extension: &str) -> ProgramStore {
        ProgramStore::new(self.root.join("programs"), extension)
    }

    pub fn bundle_path(&self, problem_id: &str) -> PathBuf {
        self.root.join("programs").join(problem_id).join("verifier.json")
    }

    pub fn suite_path(&self, problem_id: &str) -> PathBuf {
        self.root.join("suites").join(format!("{problem_id}.jsonl"))
    }

    pub fn suite_stats_path(&self, problem_id: &str) -> PathBuf {
        self.root.join("suites").join(format!("{problem_id}.stats.json"))
    }

    pub fn verdicts_path(&self, problem_id: &str) -> PathBuf {
        self.root.join("verdicts").join(format!("{problem_id}.jsonl"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().into_owned()
    }

    pub fn save_bundle(&self, problem_id: &str, bundle: &VerifierBundle) -> io::Result<PathBuf> {
        let path = self.bundle_path(problem_id);
        write_json(&path, bundle)?;
        Ok(path)
    }

    pub fn load_bundle(&self, problem_id: &str) -> io::Result<VerifierBundle> {
        read_json(&self.bundle_path(problem_id))
    }

    pub fn save_suite(&self, problem_id: &str, suite: &Suite) -> io::Result<Vec<PathBuf>> {
        let cases = self.suite_path(problem_id);
        let stats = self.suite_stats_path(problem_id);
        write_jsonl(&cases, &suite.cases)?;
        write_json(&stats, &suite.stats)?;
        Ok(vec![cases, stats])
    }

    pub fn load_suite(&self, problem_id: &str) -> io::Result<Suite> {
        let cases: Vec<SuiteCase> = read_jsonl(&self.suite_path(problem_id))?;
        let stats: SuiteStats = read_json(&self.suite_stats_path(problem_id))?;
        Ok(Suite { cases, stats })
    }

    pub fn save_ranking(&self, problem_id: &str, ranking: &RankedCandidates) -> io::Result<PathBuf> {
        let path = self.verdicts_path(problem_id);
        write_jsonl(&path, &ranking.entries)?;
        Ok(path)
    }

    pub fn load_ranking(&self, problem_id: &str) -> io::Result<RankedCandidates> {
        let entries: Vec<RankedEntry> = read_jsonl(&self.verdicts_path(problem_id))?;
        Ok(RankedCandidates { entries })
    }

    pub fn write_report(&self, name: &str, text: &str) -> io::Result<PathBuf> {
        let path = self.reports_dir().join(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// The stored record if its key matches and every artifact still exists.
    pub fn completed(&self, problem_id: &str, stage: Stage, key: &str) -> Option<StageRecord> {
        let manifest = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        let record = manifest.problems.get(problem_id)?.get(&stage)?;
        let intact = record.ok && record.key == key && record.artifacts.iter().all(|a| self.root.join(a).exists());
        intact.then(|| record.clone())
    }

    pub fn record(&self, problem_id: &str, stage: Stage, record: StageRecord) -> io::Result<()> {
        let mut manifest = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        manifest.problems.entry(problem_id.to_string()).or_default().insert(stage, record);
        self.flush(&manifest)
    }

    pub fn record_reports(&self, reports: Vec<String>) -> io::Result<()> {
        let mut manifest = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        manifest.reports = reports;
        self.flush(&manifest)
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn flush(&self, manifest: &Manifest) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// Digest of a file's bytes, or of nothing when it is missing.
pub fn file_digest(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_default();
    hex::encode(Sha256::digest(&bytes))
}
