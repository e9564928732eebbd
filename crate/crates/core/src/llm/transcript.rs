use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::prompt::PromptKind;

pub const RECORDS_FILE: &str = "transcripts.jsonl";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_hash: String,
    pub kind: PromptKind,
    pub attempt: u32,
    pub response_text: String,
    /// Seconds since the Unix epoch at record time.
    pub timestamp: u64,
    pub model_tag: String,
}

#[derive(Debug)]
struct Inner {
    by_hash: HashMap<String, Transcript>,
    index: BTreeMap<String, usize>,
    file: File,
}

/// Append-only transcript records plus an index keyed by request hash.
/// The records file is authoritative; the index is rewritten on append.
#[derive(Debug)]
pub struct TranscriptStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl TranscriptStore {
    pub fn exists(dir: &Path) -> bool {
        dir.join(RECORDS_FILE).is_file()
    }

    /// Opens the store in `dir`, creating it when absent.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(RECORDS_FILE);
        let mut by_hash = HashMap::new();
        let mut index = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: Transcript = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), line_no + 1))
                })?;
                index.entry(t.request_hash.clone()).or_insert(line_no);
                by_hash.entry(t.request_hash.clone()).or_insert(t);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { dir, inner: Mutex::new(Inner { by_hash, index, file }) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, hash: &str) -> Option<Transcript> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).by_hash.get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a transcript. A hash already present is left as is and the
    /// stored transcript is returned instead.
    pub fn append(&self, t: Transcript) -> std::io::Result<Transcript> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = inner.by_hash.get(&t.request_hash) {
            return Ok(existing.clone());
        }
        let line = serde_json::to_string(&t).expect("transcript serializes");
        writeln!(inner.file, "{line}")?;
        inner.file.flush()?;
        let line_no = inner.index.len();
        inner.index.insert(t.request_hash.clone(), line_no);
        let index_json = serde_json::to_string_pretty(&inner.index).expect("index serializes");
        std::fs::write(self.dir.join(INDEX_FILE), index_json + "\n")?;
        inner.by_hash.insert(t.request_hash.clone(), t.clone());
        Ok(t)
    }
}
