use std::path::{Path, PathBuf};

use serde::Deserialize;
use stonediag_core::gateway::{Effort, PriceTable};
use stonediag_core::rag::{DEFAULT_OVERLAP_TOKENS, DEFAULT_TARGET_TOKENS, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Mock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub mode: BackendMode,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default)]
    pub effort: Option<Effort>,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    #[serde(default)]
    pub price_table: PriceTable,
    /// Server root for live mode.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_embedding_model")]
    pub embedding_model_id: String,
    /// Name of the environment variable holding the live credential.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Scripted replies for mock mode.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default = "default_dimension")]
    pub embedding_dimension: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_target")]
    pub target_tokens: usize,
    #[serde(default = "default_overlap")]
    pub overlap_tokens: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            enabled: true,
            k: DEFAULT_TOP_K,
            target_tokens: DEFAULT_TARGET_TOKENS,
            overlap_tokens: DEFAULT_OVERLAP_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub discussion_order: Option<Vec<String>>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_specialist_temperature")]
    pub specialist_temperature: f64,
    #[serde(default)]
    pub coordinator_temperature: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            discussion_order: None,
            concurrency: default_concurrency(),
            specialist_temperature: default_specialist_temperature(),
            coordinator_temperature: 0.0,
        }
    }
}

/// The main configuration file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainConfig {
    pub backend: BackendSection,
    pub taxonomy: PathBuf,
    pub roster: PathBuf,
    #[serde(default)]
    pub knowledge_base: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub run: RunSection,
}

fn default_model() -> String {
    "o4-mini".into()
}
fn default_embedding_model() -> String {
    "text-embedding-3-small".into()
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_dimension() -> usize {
    64
}
fn yes() -> bool {
    true
}
fn default_k() -> usize {
    DEFAULT_TOP_K
}
fn default_target() -> usize {
    DEFAULT_TARGET_TOKENS
}
fn default_overlap() -> usize {
    DEFAULT_OVERLAP_TOKENS
}
fn default_concurrency() -> usize {
    1
}
fn default_specialist_temperature() -> f64 {
    0.2
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl MainConfig {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut config: MainConfig = toml::from_str(text)?;
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.taxonomy);
        join(&mut self.roster);
        join(&mut self.output_dir);
        if let Some(p) = self.knowledge_base.as_mut() {
            join(p);
        }
        if let Some(p) = self.backend.transcript.as_mut() {
            join(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match self.backend.mode {
            BackendMode::Mock if self.backend.transcript.is_none() => {
                anyhow::bail!("mock mode requires backend.transcript")
            }
            BackendMode::Live if self.backend.endpoint.is_none() => {
                anyhow::bail!("live mode requires backend.endpoint")
            }
            _ => {}
        }
        if self.backend.embedding_dimension == 0 {
            anyhow::bail!("backend.embedding_dimension must be positive");
        }
        if self.retrieval.k == 0 {
            anyhow::bail!("retrieval.k must be at least 1");
        }
        if self.run.concurrency == 0 {
            anyhow::bail!("run.concurrency must be at least 1");
        }
        Ok(())
    }
}
