//! One pass of the inference flow: preprocess, prompt, backend, parse,
//! geocode.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{evidence_digest, BackendError, LmmBackend, LmmResponse};
use crate::geocoder::{static_map_url, Geocoder, MapTemplate};
use crate::media::{preprocess, PreprocessOp};
use crate::model::{Coordinates, EvidenceBundle, GeoGranularity, GeoGuess, ImageEvidence, PersonaProfile, RawResponseRef};
use crate::parser::{parse_guess, parse_profile, ParseError};
use crate::prompt::{LmmRequest, PromptConfig, PromptEngine, PromptError};

pub const DEFAULT_MAP_WIDTH: u32 = 600;
pub const DEFAULT_MAP_HEIGHT: u32 = 400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("image {name}: {message}")]
    Media { name: String, message: String },
    #[error("profile: {0}")]
    Profile(ParseError),
}

/// Result of one backend round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub guess: GeoGuess,
    pub request_digest: String,
    pub response: LmmResponse,
    /// Set when the response held no parseable location; `guess` is then Unknown.
    pub parse_error: Option<String>,
    /// Forward-geocoded centroid used when the guess has no coordinates.
    pub resolved: Option<Coordinates>,
    pub map_url: Option<String>,
}

impl Inference {
    /// Coordinates used for distance scoring and maps.
    pub fn effective_coordinates(&self) -> Option<Coordinates> {
        self.guess.coordinates().or(self.resolved)
    }
}

/// Default zoom for a map showing a guess at `level`.
pub fn zoom_for(level: GeoGranularity) -> u8 {
    match level {
        GeoGranularity::Unknown | GeoGranularity::Country => 4,
        GeoGranularity::State => 6,
        GeoGranularity::CityTown => 11,
        GeoGranularity::Street => 16,
    }
}

#[derive(Clone)]
pub struct Pipeline {
    backend: Arc<dyn LmmBackend>,
    engine: Arc<PromptEngine>,
    pub prompt: PromptConfig,
    /// Applied to every incoming image; empty keeps the original bytes.
    pub ops: Vec<PreprocessOp>,
    geocoder: Option<Arc<Geocoder>>,
    pub map_template: MapTemplate,
}

impl Pipeline {
    pub fn new(backend: Arc<dyn LmmBackend>) -> Self {
        Pipeline {
            backend,
            engine: Arc::new(PromptEngine::default()),
            prompt: PromptConfig::default(),
            ops: vec![PreprocessOp::Resize { max_edge_px: 1024 }],
            geocoder: None,
            map_template: MapTemplate::default(),
        }
    }

    /// Same settings, different backend.
    pub fn with_backend(mut self, backend: Arc<dyn LmmBackend>) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_engine(mut self, engine: Arc<PromptEngine>) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_prompt(mut self, prompt: PromptConfig) -> Self {
        self.prompt = prompt;
        self
    }

    pub fn with_ops(mut self, ops: Vec<PreprocessOp>) -> Self {
        self.ops = ops;
        self
    }

    pub fn with_geocoder(mut self, geocoder: Arc<Geocoder>) -> Self {
        self.geocoder = Some(geocoder);
        self
    }

    pub fn with_map_template(mut self, template: MapTemplate) -> Self {
        self.map_template = template;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn backend(&self) -> &Arc<dyn LmmBackend> {
        &self.backend
    }

    pub fn engine(&self) -> &PromptEngine {
        &self.engine
    }

    /// Runs the configured ops over every image. EXIF summaries are kept from
    /// the original bytes since re-encoding drops metadata.
    pub fn prepare(&self, bundle: &EvidenceBundle) -> Result<EvidenceBundle, PipelineError> {
        let mut out = bundle.clone();
        if self.ops.is_empty() {
            return Ok(out);
        }
        for img in &mut out.images {
            let bytes = preprocess(&img.bytes, &self.ops).map_err(|e| PipelineError::Media {
                name: img.name.clone(),
                message: e.to_string(),
            })?;
            *img = ImageEvidence {
                name: img.name.clone(),
                bytes,
                exif: img.exif.clone(),
            };
        }
        Ok(out)
    }

    /// First-round request for an already prepared bundle.
    pub fn inference_request(&self, prepared: &EvidenceBundle) -> Result<LmmRequest, PipelineError> {
        Ok(self.engine.build_inference_request(prepared, &self.prompt)?)
    }

    pub fn refinement_request(
        &self,
        history: &[GeoGuess],
        prepared: &EvidenceBundle,
    ) -> Result<LmmRequest, PipelineError> {
        Ok(self
            .engine
            .build_transcript_refinement_request(history, prepared, &self.prompt)?)
    }

    /// Preprocesses and runs a first-round inference.
    pub async fn infer(&self, bundle: &EvidenceBundle) -> Result<Inference, PipelineError> {
        let prepared = self.prepare(bundle)?;
        let request = self.inference_request(&prepared)?;
        self.execute(&request).await
    }

    /// Sends a built request and interprets the reply.
    pub async fn execute(&self, request: &LmmRequest) -> Result<Inference, PipelineError> {
        let digest = evidence_digest(request);
        let response = self.backend.complete(request).await?;
        let (guess, parse_error) = match parse_guess(&response.text) {
            Ok(g) => (g, None),
            Err(e) => (GeoGuess::unknown(), Some(e.to_string())),
        };
        let parsed_via = guess.raw_response_ref().parsed_via;
        let guess = guess.with_raw_response_ref(RawResponseRef {
            response_id: Some(response.response_id.clone()),
            parsed_via,
        });
        let resolved = self.resolve(&guess).await;
        let map_url = guess
            .coordinates()
            .or(resolved)
            .and_then(|c| {
                static_map_url(
                    &self.map_template,
                    c,
                    zoom_for(guess.granularity()),
                    DEFAULT_MAP_WIDTH,
                    DEFAULT_MAP_HEIGHT,
                )
                .ok()
            });
        Ok(Inference {
            guess,
            request_digest: digest,
            response,
            parse_error,
            resolved,
            map_url,
        })
    }

    async fn resolve(&self, guess: &GeoGuess) -> Option<Coordinates> {
        if guess.coordinates().is_some() || guess.granularity() == GeoGranularity::Unknown {
            return None;
        }
        let geocoder = self.geocoder.as_ref()?;
        match geocoder.forward_geocode(&guess.admin().display_address()).await {
            Ok(r) => Some(r.coordinates),
            Err(e) => {
                tracing::debug!("geocoding guess failed: {e}");
                None
            }
        }
    }

    /// Asks for the poster's location, age and gender.
    pub async fn profile(
        &self,
        bundle: &EvidenceBundle,
    ) -> Result<(PersonaProfile, LmmResponse), PipelineError> {
        let prepared = self.prepare(bundle)?;
        let request = self.engine.build_profile_request(&prepared, &self.prompt)?;
        let response = self.backend.complete(&request).await?;
        let profile = parse_profile(&response.text).map_err(PipelineError::Profile)?;
        Ok((profile, response))
    }
}
