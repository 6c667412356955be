//! Pipeline configuration with flags > env > config file > defaults
//! precedence, plus the factories that turn a config into live backends.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::backends::{BackendClient, HttpTransport, MockTransport, RateLimitPolicy, Transport};
use crate::embed::{
    HttpEmbedder, ImageEmbedder, MockImageEmbedder, MockTextEmbedder, TextEmbedder,
};
use crate::model::Timestamp;
use crate::promptkit::{PromptError, TemplateSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("failed to read config file {path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Template(#[from] PromptError),
}

pub const DEFAULT_SAMPLE_INTERVAL_S: f64 = 2.0;
pub const DEFAULT_KEYFRAME_THRESHOLD: f64 = 0.85;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.90;
pub const DEFAULT_MAX_DURATION_S: f64 = 120.0;
pub const DEFAULT_WORKER_COUNT: usize = 4;
pub const DEFAULT_MOCK_DIM: usize = 16;

/// Every knob the pipeline exposes. Thresholds live in (0, 1].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub sample_interval: Timestamp,
    pub keyframe_threshold: f64,
    pub dedup_threshold: f64,
    pub max_duration: Timestamp,
    pub worker_count: usize,
    pub rate: RateLimitPolicy,
    pub backend_url: Option<String>,
    pub backend_key: Option<String>,
    pub embed_url: Option<String>,
    /// Use the deterministic in-process mocks instead of HTTP backends.
    pub mock: bool,
    /// Seed for the mock backends and retry jitter.
    pub seed: u64,
    /// Embedding dimension (mock projection size; declared dim for HTTP).
    pub embed_dim: usize,
    pub template_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub temperature: f64,
    pub diff_max_tokens: u32,
    pub summary_max_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_interval: Timestamp::from_secs_f64(DEFAULT_SAMPLE_INTERVAL_S),
            keyframe_threshold: DEFAULT_KEYFRAME_THRESHOLD,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            max_duration: Timestamp::from_secs_f64(DEFAULT_MAX_DURATION_S),
            worker_count: DEFAULT_WORKER_COUNT,
            rate: RateLimitPolicy::default(),
            backend_url: None,
            backend_key: None,
            embed_url: None,
            mock: false,
            seed: 42,
            embed_dim: DEFAULT_MOCK_DIM,
            template_dir: None,
            out_dir: PathBuf::from("out"),
            temperature: 0.2,
            diff_max_tokens: 1024,
            summary_max_tokens: 2048,
        }
    }
}

/// A partial config: any subset of fields, used for each precedence layer.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub sample_interval_s: Option<f64>,
    pub keyframe_threshold: Option<f64>,
    pub dedup_threshold: Option<f64>,
    pub max_duration_s: Option<f64>,
    pub worker_count: Option<usize>,
    pub rps: Option<f64>,
    pub max_concurrent: Option<usize>,
    pub retry_max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
    pub backoff_cap_ms: Option<u64>,
    pub backend_url: Option<String>,
    pub backend_key: Option<String>,
    pub embed_url: Option<String>,
    pub mock: Option<bool>,
    pub seed: Option<u64>,
    pub embed_dim: Option<usize>,
    pub template_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub temperature: Option<f64>,
    pub diff_max_tokens: Option<u32>,
    pub summary_max_tokens: Option<u32>,
}

impl ConfigOverlay {
    /// Parse the TOML config file format.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Read the overlay the environment contributes: `BACKEND_URL`,
    /// `BACKEND_KEY`, `EMBED_URL`, `RPS`, `MAX_CONCURRENT`.
    pub fn from_env(get: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let rps = match get("RPS") {
            Some(rps) => Some(
                rps.parse()
                    .map_err(|_| ConfigError::Invalid(format!("RPS '{rps}' is not a number")))?,
            ),
            None => None,
        };
        let max_concurrent = match get("MAX_CONCURRENT") {
            Some(mc) => Some(mc.parse().map_err(|_| {
                ConfigError::Invalid(format!("MAX_CONCURRENT '{mc}' is not an integer"))
            })?),
            None => None,
        };
        Ok(ConfigOverlay {
            backend_url: get("BACKEND_URL"),
            backend_key: get("BACKEND_KEY"),
            embed_url: get("EMBED_URL"),
            rps,
            max_concurrent,
            ..Default::default()
        })
    }

    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(v) = self.sample_interval_s {
            config.sample_interval = Timestamp::from_secs_f64(v);
        }
        if let Some(v) = self.keyframe_threshold {
            config.keyframe_threshold = v;
        }
        if let Some(v) = self.dedup_threshold {
            config.dedup_threshold = v;
        }
        if let Some(v) = self.max_duration_s {
            config.max_duration = Timestamp::from_secs_f64(v);
        }
        if let Some(v) = self.worker_count {
            config.worker_count = v;
        }
        if let Some(v) = self.rps {
            config.rate.max_requests_per_second = v;
        }
        if let Some(v) = self.max_concurrent {
            config.rate.max_concurrent = v;
        }
        if let Some(v) = self.retry_max_attempts {
            config.rate.retry_max_attempts = v;
        }
        if let Some(v) = self.backoff_base_ms {
            config.rate.backoff_base_ms = v;
        }
        if let Some(v) = self.backoff_cap_ms {
            config.rate.backoff_cap_ms = v;
        }
        if let Some(v) = &self.backend_url {
            config.backend_url = Some(v.clone());
        }
        if let Some(v) = &self.backend_key {
            config.backend_key = Some(v.clone());
        }
        if let Some(v) = &self.embed_url {
            config.embed_url = Some(v.clone());
        }
        if let Some(v) = self.mock {
            config.mock = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.embed_dim {
            config.embed_dim = v;
        }
        if let Some(v) = &self.template_dir {
            config.template_dir = Some(v.clone());
        }
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
        if let Some(v) = self.temperature {
            config.temperature = v;
        }
        if let Some(v) = self.diff_max_tokens {
            config.diff_max_tokens = v;
        }
        if let Some(v) = self.summary_max_tokens {
            config.summary_max_tokens = v;
        }
    }
}

/// Layer overlays onto the defaults: file, then environment, then flags.
pub fn resolve_config(
    file: Option<ConfigOverlay>,
    env: Option<ConfigOverlay>,
    flags: ConfigOverlay,
) -> Result<PipelineConfig, ConfigError> {
    let mut config = PipelineConfig::default();
    if let Some(overlay) = file {
        overlay.apply(&mut config);
    }
    if let Some(overlay) = env {
        overlay.apply(&mut config);
    }
    flags.apply(&mut config);

    for (name, value) in [
        ("keyframe_threshold", config.keyframe_threshold),
        ("dedup_threshold", config.dedup_threshold),
    ] {
        if !(value > 0.0 && value <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "{name} {value} must be in (0, 1]"
            )));
        }
    }
    if config.worker_count == 0 {
        return Err(ConfigError::Invalid("worker_count must be >= 1".into()));
    }
    if config.sample_interval.as_millis() == 0 {
        return Err(ConfigError::Invalid("sample_interval_s must be > 0".into()));
    }
    if config.embed_dim == 0 {
        return Err(ConfigError::Invalid("embed_dim must be >= 1".into()));
    }
    Ok(config)
}

impl PipelineConfig {
    /// Construct the shared VLM/LLM client this config describes.
    pub fn build_backend(&self) -> Result<BackendClient, ConfigError> {
        let transport: Arc<dyn Transport> = if self.mock {
            Arc::new(MockTransport::new(self.seed))
        } else if let Some(url) = &self.backend_url {
            Arc::new(HttpTransport::new(url, self.backend_key.clone()))
        } else {
            return Err(ConfigError::Invalid(
                "no caption backend configured: pass --mock or set BACKEND_URL".into(),
            ));
        };
        BackendClient::new(transport, self.rate, self.seed)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Share one transport across a prebuilt client; used by tests that
    /// need to script the transport directly.
    pub fn build_backend_with(
        &self,
        transport: Arc<dyn Transport>,
    ) -> Result<BackendClient, ConfigError> {
        BackendClient::new(transport, self.rate, self.seed)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn build_image_embedder(&self) -> Result<Arc<dyn ImageEmbedder>, ConfigError> {
        if self.mock {
            Ok(Arc::new(MockImageEmbedder::new(self.embed_dim, self.seed)))
        } else if let Some(url) = &self.embed_url {
            Ok(Arc::new(HttpEmbedder::new(url, self.embed_dim)))
        } else {
            Err(ConfigError::Invalid(
                "no image embedder configured: pass --mock or set EMBED_URL".into(),
            ))
        }
    }

    pub fn build_text_embedder(&self) -> Result<Arc<dyn TextEmbedder>, ConfigError> {
        if self.mock {
            Ok(Arc::new(MockTextEmbedder::new(self.embed_dim, self.seed)))
        } else if let Some(url) = &self.embed_url {
            Ok(Arc::new(HttpEmbedder::new(url, self.embed_dim)))
        } else {
            Err(ConfigError::Invalid(
                "no text embedder configured: pass --mock or set EMBED_URL".into(),
            ))
        }
    }

    pub fn load_templates(&self) -> Result<TemplateSet, ConfigError> {
        match &self.template_dir {
            Some(dir) => Ok(TemplateSet::load_dir(dir)?),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn caption_options(&self) -> crate::diffsw::CaptionOptions {
        crate::diffsw::CaptionOptions {
            temperature: self.temperature,
            diff_max_tokens: self.diff_max_tokens,
            summary_max_tokens: self.summary_max_tokens,
        }
    }
}
