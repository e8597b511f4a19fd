//! TOML configuration shared by the CLI and the API service.

use std::num::NonZeroU32;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use governor::Quota;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{from_config, BackendConfig, BackendMode};
use crate::geocoder::{GeoCache, GeocodeFixtures, Geocoder, MapTemplate, NominatimProvider, ENV_CACHE_DIR, ENV_GEOCODER_URL};
use crate::harness::RunConfig;
use crate::media::PreprocessOp;
use crate::pipeline::Pipeline;
use crate::prompt::{PromptConfig, PromptEngine};
use crate::session::SessionConfig;

pub const ENV_CONFIG: &str = "GEOSEER_CONFIG";
pub const ENV_API_TOKEN: &str = "GEOSEER_API_TOKEN";
pub const DEFAULT_CACHE_DIR: &str = ".geoseer";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeocoderSettings {
    /// Nominatim-compatible base URL.
    pub url: Option<String>,
    /// JSON fixture file; when set the geocoder never uses the network.
    pub fixtures: Option<PathBuf>,
    /// Use the live provider even when the LMM backend runs from fixtures.
    pub live: bool,
    pub requests_per_second: u32,
    pub map_template: Option<String>,
}

impl Default for GeocoderSettings {
    fn default() -> Self {
        GeocoderSettings {
            url: None,
            fixtures: None,
            live: false,
            requests_per_second: 1,
            map_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSettings {
    pub addr: String,
    /// Allowed CORS origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
    #[serde(skip_serializing)]
    pub api_token: Option<String>,
    /// Relative image paths in uploaded manifests resolve against this.
    pub dataset_dir: Option<PathBuf>,
}

impl Default for ServerSettings {
    fn default() -> Self {
        ServerSettings {
            addr: DEFAULT_ADDR.into(),
            cors_origins: Vec::new(),
            api_token: None,
            dataset_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendConfig,
    /// Extra backends compared by `evaluate`.
    pub backends: Vec<BackendConfig>,
    pub prompt: PromptConfig,
    pub preprocess: Vec<PreprocessOp>,
    pub session: SessionConfig,
    pub geocoder: GeocoderSettings,
    pub server: ServerSettings,
    pub eval: RunConfig,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            backend: BackendConfig::default(),
            backends: Vec::new(),
            prompt: PromptConfig::default(),
            preprocess: vec![PreprocessOp::Resize { max_edge_px: 1024 }],
            session: SessionConfig::default(),
            geocoder: GeocoderSettings::default(),
            server: ServerSettings::default(),
            eval: RunConfig::default(),
            cache_dir: None,
            templates_dir: None,
        }
    }
}

impl Config {
    pub fn from_toml(source: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError::File {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Reads `path`, else `$GEOSEER_CONFIG`, else defaults; then applies
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let path = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
        let config = match path {
            Some(p) => {
                let source = std::fs::read_to_string(&p).map_err(|e| ConfigError::File {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                Self::from_toml(&source, &p.display().to_string())?
            }
            None => Config::default(),
        };
        Ok(config.with_env())
    }

    pub fn with_env(mut self) -> Self {
        self.backend = self.backend.with_env();
        self.backends = self.backends.into_iter().map(BackendConfig::with_env).collect();
        if let Some(dir) = std::env::var_os(ENV_CACHE_DIR).filter(|v| !v.is_empty()) {
            self.cache_dir = Some(dir.into());
        }
        if let Ok(url) = std::env::var(ENV_GEOCODER_URL) {
            if !url.is_empty() {
                self.geocoder.url = Some(url);
            }
        }
        if let Ok(token) = std::env::var(ENV_API_TOKEN) {
            if !token.is_empty() {
                self.server.api_token = Some(token);
            }
        }
        self
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn map_template(&self) -> MapTemplate {
        self.geocoder
            .map_template
            .clone()
            .map(MapTemplate)
            .unwrap_or_default()
    }

    /// Fixture file if configured; the live provider when the backend is
    /// live or `geocoder.live` is set; otherwise none.
    pub fn build_geocoder(&self) -> Result<Option<Arc<Geocoder>>, ConfigError> {
        if let Some(path) = &self.geocoder.fixtures {
            let fixtures = GeocodeFixtures::load(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            return Ok(Some(Arc::new(Geocoder::fixture(fixtures))));
        }
        if !(self.geocoder.live || self.backend.mode == BackendMode::Live) {
            return Ok(None);
        }
        let provider = match &self.geocoder.url {
            Some(url) => NominatimProvider::new(url.clone()),
            None => NominatimProvider::from_env(),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let cache = GeoCache::open(&self.cache_dir()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let rate = NonZeroU32::new(self.geocoder.requests_per_second)
            .ok_or_else(|| ConfigError::Invalid("geocoder.requests_per_second must be > 0".into()))?;
        Ok(Some(Arc::new(
            Geocoder::live(Arc::new(provider))
                .with_cache(Arc::new(cache))
                .with_rate_limit(Quota::per_second(rate)),
        )))
    }

    pub fn prompt_engine(&self) -> Result<Arc<PromptEngine>, ConfigError> {
        match &self.templates_dir {
            Some(dir) => PromptEngine::from_dir(dir)
                .map(Arc::new)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(Arc::new(PromptEngine::default())),
        }
    }

    /// Pipeline for `backend` with this config's prompt, ops and geocoder.
    pub fn pipeline_for(
        &self,
        backend: &BackendConfig,
        geocoder: Option<Arc<Geocoder>>,
    ) -> Result<Pipeline, ConfigError> {
        let lmm = from_config(backend).map_err(|e| ConfigError::Invalid(format!("backend {}: {e}", backend.id)))?;
        let mut p = Pipeline::new(lmm)
            .with_engine(self.prompt_engine()?)
            .with_prompt(self.prompt.clone())
            .with_ops(self.preprocess.clone())
            .with_map_template(self.map_template());
        if let Some(g) = geocoder {
            p = p.with_geocoder(g);
        }
        Ok(p)
    }

    /// The primary backend followed by the extra ones.
    pub fn all_backends(&self) -> Vec<BackendConfig> {
        std::iter::once(self.backend.clone())
            .chain(self.backends.iter().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let c = Config::from_toml(
            r#"
cache_dir = "/tmp/gs"
preprocess = [{ op = "resize", max_edge_px = 512 }, { op = "denoise", strength = 0.5 }]

[backend]
id = "geolocator"
mode = "fixture"
fixture_dir = "fixtures"
timeout = 30

[prompt]
language = "zh"

[eval]
max_concurrency = 8

[server]
cors_origins = ["http://localhost:5173"]
"#,
            "test.toml",
        )
        .unwrap();
        assert_eq!(c.backend.timeout.as_secs(), 30);
        assert_eq!(c.prompt.language, crate::model::Language::Zh);
        assert_eq!(c.eval.max_concurrency, 8);
        assert_eq!(c.eval.repeats, 1);
        assert_eq!(c.preprocess.len(), 2);
        assert_eq!(c.server.addr, DEFAULT_ADDR);
    }

    #[test]
    fn rejects_unknown_types() {
        assert!(Config::from_toml("[backend]\nmax_retries = \"many\"", "x").is_err());
    }

    #[test]
    fn fixture_backend_has_no_geocoder() {
        let c = Config::default();
        assert!(c.build_geocoder().unwrap().is_none());
    }
}
