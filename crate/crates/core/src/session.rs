//! Refinement sessions: an initial inference followed by hint or image
//! additions, with append-only history persisted as JSON.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::model::{Coordinates, EvidenceBundle, GeoGranularity, GeoGuess};
use crate::pipeline::{Inference, Pipeline, PipelineError};

pub const SESSION_SCHEMA_VERSION: u32 = 1;
pub const SESSIONS_DIR: &str = "sessions";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("session {0} is closed")]
    Closed(String),
    #[error("session has no rounds")]
    EmptySession,
    #[error("session {session_id}: backend error: {error}")]
    Backend {
        session_id: String,
        error: BackendError,
    },
    #[error(transparent)]
    Pipeline(PipelineError),
    #[error("session storage: {0}")]
    Storage(String),
}

impl SessionError {
    fn from_pipeline(session_id: &str, e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(error) => SessionError::Backend {
                session_id: session_id.to_string(),
                error,
            },
            other => SessionError::Pipeline(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: u32,
    pub guess: GeoGuess,
    pub granularity: GeoGranularity,
    pub response_id: String,
    pub model_id: String,
    pub request_digest: String,
    #[serde(default)]
    pub parse_error: Option<String>,
    #[serde(default)]
    pub resolved: Option<Coordinates>,
    #[serde(default)]
    pub map_url: Option<String>,
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub evidence: EvidenceBundle,
    pub rounds: Vec<Round>,
    pub best: Option<GeoGuess>,
    /// Images whose EXIF carried GPS coordinates.
    #[serde(default)]
    pub exif_warnings: Vec<String>,
    pub created_at: String,
    pub updated_at: String,
}

impl SessionState {
    pub fn best_guess(&self) -> Result<&GeoGuess, SessionError> {
        self.best.as_ref().ok_or(SessionError::EmptySession)
    }

    /// Round whose guess is the current best.
    pub fn best_round(&self) -> Option<&Round> {
        best_index(&self.rounds).map(|i| &self.rounds[i])
    }

    fn push_round(&mut self, inference: Inference, at: String) {
        let round = Round {
            round: self.rounds.last().map_or(1, |r| r.round + 1),
            granularity: inference.guess.granularity(),
            guess: inference.guess,
            response_id: inference.response.response_id,
            model_id: inference.response.model_id,
            request_digest: inference.request_digest,
            parse_error: inference.parse_error,
            resolved: inference.resolved,
            map_url: inference.map_url,
            at: at.clone(),
        };
        self.rounds.push(round);
        self.best = best_index(&self.rounds).map(|i| self.rounds[i].guess.clone());
        self.updated_at = at;
    }

    fn note_exif(&mut self, bundle: &EvidenceBundle) {
        for img in &bundle.images {
            if let Some(gps) = img.exif.as_ref().and_then(|e| e.gps) {
                self.exif_warnings.push(format!(
                    "{}: GPS {:.6}, {:.6}",
                    img.name,
                    gps.lat(),
                    gps.lon()
                ));
            }
        }
    }
}

/// Index of the deepest-granularity round; ties go to the later round.
fn best_index(rounds: &[Round]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rounds.iter().enumerate() {
        if best.is_none_or(|b| r.granularity >= rounds[b].granularity) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Embed every earlier guess in refinement prompts instead of only the best.
    pub full_transcript: bool,
}

pub struct SessionManager {
    pipeline: Pipeline,
    config: SessionConfig,
    store: Option<PathBuf>,
    states: RwLock<HashMap<String, SessionState>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    frozen_time: Option<DateTime<Utc>>,
}

impl SessionManager {
    /// Sessions live in memory only.
    pub fn in_memory(pipeline: Pipeline) -> Self {
        SessionManager {
            pipeline,
            config: SessionConfig::default(),
            store: None,
            states: RwLock::new(HashMap::new()),
            locks: Mutex::new(HashMap::new()),
            frozen_time: None,
        }
    }

    /// Sessions persist under `<cache_dir>/sessions/<id>.json`.
    pub fn persistent(pipeline: Pipeline, cache_dir: &Path) -> Result<Self, SessionError> {
        let dir = cache_dir.join(SESSIONS_DIR);
        std::fs::create_dir_all(&dir)
            .map_err(|e| SessionError::Storage(format!("{}: {e}", dir.display())))?;
        Ok(SessionManager {
            store: Some(dir),
            ..Self::in_memory(pipeline)
        })
    }

    pub fn with_config(mut self, config: SessionConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_frozen_time(mut self, at: DateTime<Utc>) -> Self {
        self.frozen_time = Some(at);
        self
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn now(&self) -> String {
        self.frozen_time
            .unwrap_or_else(Utc::now)
            .to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().entry(id.to_string()).or_default().clone()
    }

    fn path_for(&self, id: &str) -> Option<PathBuf> {
        self.store.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn save(&self, state: &SessionState) -> Result<(), SessionError> {
        if let Some(path) = self.path_for(&state.session_id) {
            let json = serde_json::to_vec_pretty(state).map_err(|e| SessionError::Storage(e.to_string()))?;
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, json)
                .and_then(|_| std::fs::rename(&tmp, &path))
                .map_err(|e| SessionError::Storage(format!("{}: {e}", path.display())))?;
        }
        self.states.write().insert(state.session_id.clone(), state.clone());
        Ok(())
    }

    /// Consistent snapshot of a session.
    pub fn get(&self, id: &str) -> Result<SessionState, SessionError> {
        if let Some(s) = self.states.read().get(id) {
            return Ok(s.clone());
        }
        let valid_id = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self
            .path_for(id)
            .filter(|p| valid_id && p.exists())
            .ok_or_else(|| SessionError::NotFound(id.to_string()))?;
        let bytes = std::fs::read(&path).map_err(|e| SessionError::Storage(e.to_string()))?;
        let state: SessionState =
            serde_json::from_slice(&bytes).map_err(|e| SessionError::Storage(format!("{}: {e}", path.display())))?;
        if state.schema_version != SESSION_SCHEMA_VERSION {
            return Err(SessionError::Storage(format!(
                "{}: unsupported schema version {}",
                path.display(),
                state.schema_version
            )));
        }
        self.states.write().insert(id.to_string(), state.clone());
        Ok(state)
    }

    pub fn best_guess(&self, id: &str) -> Result<GeoGuess, SessionError> {
        self.get(id)?.best_guess().cloned()
    }

    /// Creates a session and runs round 1. On a backend error the session
    /// exists with zero rounds and the error carries its id.
    pub async fn start_session(&self, bundle: EvidenceBundle) -> Result<SessionState, SessionError> {
        let prepared = self.pipeline.prepare(&bundle).map_err(SessionError::Pipeline)?;
        let request = self
            .pipeline
            .inference_request(&prepared)
            .map_err(SessionError::Pipeline)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = self.now();
        let mut state = SessionState {
            schema_version: SESSION_SCHEMA_VERSION,
            session_id: id.clone(),
            status: SessionStatus::Active,
            evidence: prepared,
            rounds: Vec::new(),
            best: None,
            exif_warnings: Vec::new(),
            created_at: now.clone(),
            updated_at: now,
        };
        state.note_exif(&bundle);
        let lock = self.lock_for(&id);
        let _guard = lock.lock().await;
        self.save(&state)?;
        let inference = self
            .pipeline
            .execute(&request)
            .await
            .map_err(|e| SessionError::from_pipeline(&id, e))?;
        state.push_round(inference, self.now());
        self.save(&state)?;
        Ok(state)
    }

    /// Adds hints or images and re-infers. On error nothing is recorded,
    /// neither the round nor the new evidence.
    pub async fn add_evidence(&self, id: &str, delta: EvidenceBundle) -> Result<SessionState, SessionError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().await;
        let mut state = self.get(id)?;
        if state.status == SessionStatus::Closed {
            return Err(SessionError::Closed(id.to_string()));
        }
        if delta.is_empty() {
            return Err(SessionError::Pipeline(PipelineError::Prompt(
                crate::prompt::PromptError::EmptyEvidence,
            )));
        }
        let prepared = self.pipeline.prepare(&delta).map_err(SessionError::Pipeline)?;
        let mut evidence = state.evidence.clone();
        evidence.extend(prepared);
        let request = if state.rounds.is_empty() {
            self.pipeline.inference_request(&evidence)
        } else if self.config.full_transcript {
            let history: Vec<GeoGuess> = state.rounds.iter().map(|r| r.guess.clone()).collect();
            self.pipeline.refinement_request(&history, &evidence)
        } else {
            let best = state.best.clone().unwrap_or_else(GeoGuess::unknown);
            self.pipeline.refinement_request(std::slice::from_ref(&best), &evidence)
        }
        .map_err(SessionError::Pipeline)?;
        let inference = self
            .pipeline
            .execute(&request)
            .await
            .map_err(|e| SessionError::from_pipeline(id, e))?;
        state.evidence = evidence;
        state.note_exif(&delta);
        state.push_round(inference, self.now());
        self.save(&state)?;
        Ok(state)
    }

    pub async fn close(&self, id: &str) -> Result<SessionState, SessionError> {
        let lock = self.lock_for(id);
        let _guard = lock.lock().await;
        let mut state = self.get(id)?;
        state.status = SessionStatus::Closed;
        state.updated_at = self.now();
        self.save(&state)?;
        Ok(state)
    }
}
