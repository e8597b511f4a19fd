//! Multimodal completion backends: live HTTP, recorded fixtures, and a
//! scripted stand-in for tests.

mod fixture;
mod http;

use std::path::PathBuf;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::LmmRequest;

pub use fixture::{fixture_path, FixtureBackend, RecordingBackend, ScriptedBackend};
pub use http::HttpBackend;

pub const ENV_API_KEY: &str = "GEOSEER_LMM_API_KEY";
pub const ENV_BASE_URL: &str = "GEOSEER_LMM_BASE_URL";
pub const ENV_FIXTURE_DIR: &str = "GEOSEER_FIXTURE_DIR";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("bad request (HTTP {status}): {body}")]
    BadRequest { status: u16, body: String },
    #[error("no fixture recorded for request digest {0}")]
    FixtureMissing(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("fixture I/O error: {0}")]
    Io(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmResponse {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    pub response_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    #[default]
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Backend label used in reports.
    pub id: String,
    /// Base of an OpenAI-style API; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model_name: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub mode: BackendMode,
    pub temperature: f32,
    #[serde(with = "duration_secs")]
    pub backoff_base: Duration,
    /// Seed for retry jitter; entropy-seeded when absent.
    pub jitter_seed: Option<u64>,
    pub fixture_dir: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            id: "geolocator".into(),
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            mode: BackendMode::Fixture,
            temperature: 0.0,
            backoff_base: Duration::from_secs(1),
            jitter_seed: None,
            fixture_dir: None,
            api_key: None,
        }
    }
}

impl BackendConfig {
    /// Fills unset fields from `GEOSEER_LMM_*` / `GEOSEER_FIXTURE_DIR`.
    pub fn with_env(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        }
        if let Ok(url) = std::env::var(ENV_BASE_URL) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        if self.fixture_dir.is_none() {
            self.fixture_dir = std::env::var_os(ENV_FIXTURE_DIR).map(PathBuf::from);
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout.is_zero() {
            return Err("timeout must be > 0".into());
        }
        if self.mode == BackendMode::Fixture && self.fixture_dir.is_none() {
            return Err("fixture mode needs a fixture directory".into());
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[async_trait]
pub trait LmmBackend: Send + Sync {
    fn id(&self) -> &str;

    async fn complete(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError>;
}

/// Builds the backend described by `config`.
pub fn from_config(config: &BackendConfig) -> Result<std::sync::Arc<dyn LmmBackend>, BackendError> {
    config.validate().map_err(BackendError::Config)?;
    Ok(match config.mode {
        BackendMode::Live => std::sync::Arc::new(HttpBackend::new(config.clone())?),
        BackendMode::Fixture => std::sync::Arc::new(FixtureBackend::new(
            config.id.clone(),
            config.fixture_dir.clone().unwrap_or_default(),
        )),
    })
}

const DIGEST_DOMAIN: &[u8] = b"geoseer-lmm-request/v1\0";

fn hash_field(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

/// SHA-256 over the request content, hex encoded. Fields are length-prefixed
/// so no two distinct requests share an encoding.
pub fn evidence_digest(request: &LmmRequest) -> String {
    let mut h = Sha256::new();
    h.update(DIGEST_DOMAIN);
    hash_field(&mut h, request.system_instructions.as_bytes());
    hash_field(&mut h, request.user_text.as_bytes());
    h.update((request.attachments.len() as u64).to_le_bytes());
    for a in &request.attachments {
        hash_field(&mut h, a);
    }
    hash_field(&mut h, request.language.tag().as_bytes());
    hex::encode(h.finalize())
}
