//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{Executor, ResourceLimits, Runtime, DEFAULT_MEMORY};
use crate::generation::{
    StageLimits, DEFAULT_CANDIDATE_ATTEMPTS, DEFAULT_COMPONENT_ATTEMPTS, DEFAULT_MAX_VAR_LENGTH, DEFAULT_ORACLE_ATTEMPTS,
};
use crate::llm::{
    ChatBackend, Gateway, GatewayMode, OpenAiBackend, RetryPolicy, TranscriptStore, DEFAULT_TEMPERATURE,
};
use crate::metrics::CoverageAdapter;
use crate::search::StrategySpec;
use crate::verifier::{EquivalencePolicy, DEFAULT_SUITE_SIZE};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_inflight: usize,
    pub retries: u32,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            endpoint: DEFAULT_ENDPOINT.into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_inflight: 4,
            retries: 3,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub candidate_ms: u64,
    pub oracle_ms: u64,
    pub tool_ms: u64,
    pub memory_mib: u64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self { candidate_ms: 2_000, oracle_ms: 30_000, tool_ms: 10_000, memory_mib: DEFAULT_MEMORY / (1024 * 1024) }
    }
}

impl LimitsConfig {
    pub fn stage_limits(&self) -> StageLimits {
        let mem = self.memory_mib * 1024 * 1024;
        let at = |ms| ResourceLimits::with_wall_time(Duration::from_millis(ms)).memory(mem);
        StageLimits { candidate: at(self.candidate_ms), oracle: at(self.oracle_ms), tool: at(self.tool_ms) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub workspace: PathBuf,
    /// Required; there is no entropy fallback.
    pub seed: Option<u64>,
    pub gateway: GatewayConfig,
    pub runtime: Runtime,
    pub limits: LimitsConfig,
    pub suite_size: usize,
    pub max_var_length: u32,
    pub oracle_attempts: u32,
    pub candidate_attempts: u32,
    pub component_attempts: u32,
    pub strategy: StrategySpec,
    pub equivalence: EquivalencePolicy,
    pub parallelism: usize,
    /// `k` values reported by `evaluate`.
    pub ks: Vec<usize>,
    /// Suite prefix sizes for the sweep; empty disables it.
    pub suite_sizes: Vec<usize>,
    pub coverage: Option<CoverageAdapter>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            workspace: PathBuf::from("workspace"),
            seed: None,
            gateway: GatewayConfig::default(),
            runtime: Runtime::python(),
            limits: LimitsConfig::default(),
            suite_size: DEFAULT_SUITE_SIZE,
            max_var_length: DEFAULT_MAX_VAR_LENGTH,
            oracle_attempts: DEFAULT_ORACLE_ATTEMPTS,
            candidate_attempts: DEFAULT_CANDIDATE_ATTEMPTS,
            component_attempts: DEFAULT_COMPONENT_ATTEMPTS,
            strategy: StrategySpec::implicit(DEFAULT_CANDIDATE_ATTEMPTS),
            equivalence: EquivalencePolicy::Token,
            parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            ks: vec![1, 5],
            suite_sizes: Vec::new(),
            coverage: None,
        }
    }
}

/// Fields that do not change any produced artifact.
#[derive(Serialize)]
struct HashedConfig<'a> {
    seed: Option<u64>,
    model: &'a str,
    temperature: u64,
    runtime: &'a Runtime,
    limits: &'a LimitsConfig,
    suite_size: usize,
    max_var_length: u32,
    oracle_attempts: u32,
    candidate_attempts: u32,
    component_attempts: u32,
    strategy: &'a StrategySpec,
    equivalence: EquivalencePolicy,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| invalid("a seed is required (set `seed` or pass --seed)"))
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.workspace.join("transcripts")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.seed()?;
        if self.suite_size == 0 {
            return Err(invalid("suite_size must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1"));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(invalid("ks must be a non-empty list of positive integers"));
        }
        if self.suite_sizes.contains(&0) {
            return Err(invalid("suite sizes must be positive"));
        }
        if self.oracle_attempts == 0 || self.candidate_attempts == 0 || self.component_attempts == 0 {
            return Err(invalid("attempt budgets must be at least 1"));
        }
        let l = &self.limits;
        if l.candidate_ms == 0 || l.oracle_ms == 0 || l.tool_ms == 0 || l.memory_mib == 0 {
            return Err(invalid("limits must be positive"));
        }
        if !self.runtime.command.iter().any(|a| a.contains("{program}")) {
            return Err(invalid("runtime.command needs a {program} placeholder"));
        }
        self.strategy.validate().map_err(|e| invalid(e.to_string()))?;
        if self.gateway.mode == GatewayMode::Replay && !TranscriptStore::exists(&self.transcripts_dir()) {
            return Err(invalid(format!(
                "replay mode needs a transcript store at {}",
                self.transcripts_dir().display()
            )));
        }
        Ok(())
    }

    /// Digest of every setting that affects produced artifacts. Paths,
    /// parallelism, gateway transport and evaluation-only settings are left
    /// out so that moving a workspace or changing the thread count does not
    /// invalidate it.
    pub fn hash(&self) -> String {
        let hashed = HashedConfig {
            seed: self.seed,
            model: &self.gateway.model,
            temperature: self.gateway.temperature.to_bits(),
            runtime: &self.runtime,
            limits: &self.limits,
            suite_size: self.suite_size,
            max_var_length: self.max_var_length,
            oracle_attempts: self.oracle_attempts,
            candidate_attempts: self.candidate_attempts,
            component_attempts: self.component_attempts,
            strategy: &self.strategy,
            equivalence: self.equivalence,
        };
        let json = serde_json::to_string(&hashed).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn executor(&self) -> Executor {
        Executor::new(self.runtime.clone(), self.parallelism)
    }

    /// Builds the gateway for the configured mode. `backend` replaces the
    /// HTTP backend in live and record modes.
    pub fn gateway(&self, backend: Option<Arc<dyn ChatBackend>>) -> Result<Gateway, ConfigError> {
        let g = &self.gateway;
        let backend = || -> Result<Arc<dyn ChatBackend>, ConfigError> {
            if let Some(b) = backend.clone() {
                return Ok(b);
            }
            let key = std::env::var(&g.api_key_env)
                .map_err(|_| invalid(format!("environment variable {} is not set", g.api_key_env)))?;
            let mut http = OpenAiBackend::new(g.endpoint.clone(), key, g.model.clone());
            http.timeout = Duration::from_secs(g.timeout_secs);
            Ok(Arc::new(http))
        };
        let open_store = || {
            TranscriptStore::open(self.transcripts_dir())
                .map_err(|source| ConfigError::Io { path: self.transcripts_dir(), source })
        };
        let gateway = match g.mode {
            GatewayMode::Live => Gateway::live(backend()?, g.model.clone()),
            GatewayMode::Record => Gateway::record(backend()?, open_store()?, g.model.clone()),
            GatewayMode::Replay => {
                if !TranscriptStore::exists(&self.transcripts_dir()) {
                    return Err(invalid(format!(
                        "replay mode needs a transcript store at {}",
                        self.transcripts_dir().display()
                    )));
                }
                Gateway::replay(open_store()?)
            }
        };
        Ok(gateway
            .with_retry(RetryPolicy { retries: g.retries, ..RetryPolicy::default() })
            .with_max_inflight(g.max_inflight.max(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_toml_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            suite_size = 12
            [gateway]
            mode = "record"
            [strategy]
            kind = "iterative"
            sample_budget = 1
            max_rounds = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.suite_size, 12);
        assert_eq!(cfg.limits.oracle_ms, 30_000);
        assert_eq!(cfg.strategy.max_rounds, 2);
    }

    #[test]
    fn api_keys_are_not_accepted_in_files() {
        let err = toml::from_str::<RunConfig>("[gateway]\napi_key = \"sk-123\"\n").unwrap_err();
        assert!(err.to_string().contains("api_key"));
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = RunConfig { gateway: GatewayConfig { mode: GatewayMode::Live, ..Default::default() }, ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn replay_needs_store() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { seed: Some(1), workspace: dir.path().join("ws"), ..Default::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("transcript store"));
    }

    #[test]
    fn hash_ignores_paths_and_parallelism() {
        let a = RunConfig { seed: Some(1), ..Default::default() };
        let b = RunConfig { workspace: "elsewhere".into(), parallelism: 17, ks: vec![3], ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: Some(2), ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
