//! Engine configuration file (JSON).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{Embedder, HashEmbedder, HttpEmbedder, HASH_DIMENSION};
use crate::ingestion::ChunkingConfig;
use crate::llm::{ChatBackend, Gateway, HttpBackend, LlmRole, RetryPolicy, RoleSettings, ScriptedBackend};
use crate::memory_graph::GraphConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Backend binding for one LLM role. Without an endpoint the role is served
/// by the scripted mock.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleConfig {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub timeout_ms: Option<u64>,
    #[serde(flatten)]
    pub settings: RoleSettings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RolesConfig {
    pub extractor: RoleConfig,
    pub answerer: RoleConfig,
    pub critic: RoleConfig,
}

impl RolesConfig {
    pub fn get(&self, role: LlmRole) -> &RoleConfig {
        match role {
            LlmRole::Extractor => &self.extractor,
            LlmRole::Answerer => &self.answerer,
            LlmRole::Critic => &self.critic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum EmbedderConfig {
    #[default]
    Hash,
    Remote {
        endpoint: String,
        dimension: usize,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionConfig {
    pub threshold: f64,
    pub max_iterations: usize,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self { threshold: 0.8, max_iterations: 3 }
    }
}

/// Widening schedule for iteration `i`: `nodes·2^i` graph nodes, `hops + i`
/// neighborhood hops and `chunks·2^i` document chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub nodes: usize,
    pub hops: usize,
    pub chunks: usize,
    pub seed_turns: usize,
    pub history_turns: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { nodes: 5, hops: 1, chunks: 3, seed_turns: 3, history_turns: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub max_nodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub listen_addr: String,
    pub roles: RolesConfig,
    pub embedder: EmbedderConfig,
    pub weights: GraphConfig,
    pub reflection: ReflectionConfig,
    pub retrieval: RetrievalConfig,
    pub prune: PruneConfig,
    pub chunking: ChunkingConfig,
    /// JSONL mock script consumed by roles without an endpoint.
    pub mock_script: Option<PathBuf>,
    /// Directory holding `extractor.txt`, `answerer.txt` and `critic.txt`.
    pub prompts_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub cors_origin: Option<String>,
    pub bearer_token: Option<String>,
    pub retry_base_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:8080".into(),
            roles: RolesConfig::default(),
            embedder: EmbedderConfig::default(),
            weights: GraphConfig::default(),
            reflection: ReflectionConfig::default(),
            retrieval: RetrievalConfig::default(),
            prune: PruneConfig::default(),
            chunking: ChunkingConfig::default(),
            mock_script: None,
            prompts_dir: None,
            log_path: None,
            cors_origin: None,
            bearer_token: None,
            retry_base_ms: 250,
        }
    }
}

impl EngineConfig {
    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config: Self = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.mock_script, &mut config.prompts_dir, &mut config.log_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.reflection;
        if r.max_iterations == 0 {
            return Err(ConfigError::Invalid("reflection.max_iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&r.threshold) {
            return Err(ConfigError::Invalid("reflection.threshold must lie in [0, 1]".into()));
        }
        if self.chunking.size <= self.chunking.overlap {
            return Err(ConfigError::Invalid("chunking.size must exceed chunking.overlap".into()));
        }
        if self.retrieval.nodes == 0 || self.retrieval.chunks == 0 {
            return Err(ConfigError::Invalid("retrieval sizes must be at least 1".into()));
        }
        if self.prune.max_nodes == Some(0) {
            return Err(ConfigError::Invalid("prune.max_nodes must be at least 1".into()));
        }
        let w = &self.weights;
        if w.tau_ms <= 0.0 {
            return Err(ConfigError::Invalid("weights.tau_ms must be positive".into()));
        }
        if [w.semantic, w.recency, w.proximity].iter().any(|x| *x < 0.0) {
            return Err(ConfigError::Invalid("weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn embedding_dimension(&self) -> usize {
        match &self.embedder {
            EmbedderConfig::Hash => HASH_DIMENSION,
            EmbedderConfig::Remote { dimension, .. } => *dimension,
        }
    }

    pub fn build_embedder(&self) -> Arc<dyn Embedder<f64>> {
        match &self.embedder {
            EmbedderConfig::Hash => Arc::new(HashEmbedder),
            EmbedderConfig::Remote { endpoint, dimension, timeout_ms } => Arc::new(HttpEmbedder::with_timeout(
                endpoint.clone(),
                *dimension,
                timeout_ms.map_or(HttpEmbedder::DEFAULT_TIMEOUT, Duration::from_millis),
            )),
        }
    }

    /// Builds the role gateway. Roles without an endpoint share one scripted
    /// backend, loaded from `mock_script` when set; it is returned so callers
    /// can queue further responses.
    pub fn build_gateway(&self) -> Result<(Gateway, Arc<ScriptedBackend>), ConfigError> {
        let mock = match &self.mock_script {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                ScriptedBackend::from_jsonl(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => ScriptedBackend::new(),
        };
        let mock = Arc::new(mock);
        let mut builder = Gateway::builder().retry(RetryPolicy {
            base_backoff: Duration::from_millis(self.retry_base_ms),
            ..RetryPolicy::default()
        });
        for role in LlmRole::ALL {
            let rc = self.roles.get(role);
            let backend: Arc<dyn ChatBackend> = match &rc.endpoint {
                Some(endpoint) => Arc::new(HttpBackend::with_timeout(
                    endpoint,
                    rc.api_key.clone(),
                    rc.timeout_ms.map_or(HttpBackend::DEFAULT_TIMEOUT, Duration::from_millis),
                )),
                None => mock.clone(),
            };
            builder = builder.role(role, backend, rc.settings.clone());
        }
        let gateway = builder.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok((gateway, mock))
    }
}
