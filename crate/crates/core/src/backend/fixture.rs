use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;

use super::{evidence_digest, BackendError, LmmBackend, LmmResponse};
use crate::prompt::LmmRequest;

/// Location of the fixture for a request digest.
pub fn fixture_path(dir: &Path, digest: &str) -> PathBuf {
    dir.join(format!("{digest}.txt"))
}

/// Replays recorded response text keyed by [`evidence_digest`].
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    id: String,
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(id: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        FixtureBackend {
            id: id.into(),
            dir: dir.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lookup(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError> {
        let digest = evidence_digest(request);
        let path = fixture_path(&self.dir, &digest);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(LmmResponse {
                text,
                model_id: format!("fixture:{}", self.id),
                latency_ms: 0,
                token_usage: None,
                response_id: digest,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(BackendError::FixtureMissing(digest))
            }
            Err(e) => Err(BackendError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

#[async_trait]
impl LmmBackend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError> {
        self.lookup(request)
    }
}

/// Wraps another backend and writes every successful response as a fixture.
pub struct RecordingBackend {
    inner: Arc<dyn LmmBackend>,
    dir: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn LmmBackend>, dir: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            dir: dir.into(),
        }
    }
}

#[async_trait]
impl LmmBackend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    async fn complete(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError> {
        let response = self.inner.complete(request).await?;
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| BackendError::Io(format!("{}: {e}", self.dir.display())))?;
        let path = fixture_path(&self.dir, &evidence_digest(request));
        std::fs::write(&path, &response.text)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Ok(response)
    }
}

/// Returns queued responses in order, regardless of the request.
///
/// Every request seen is kept so tests can inspect what was sent.
pub struct ScriptedBackend {
    id: String,
    script: Mutex<VecDeque<Result<String, BackendError>>>,
    seen: Mutex<Vec<LmmRequest>>,
}

impl ScriptedBackend {
    pub fn new(
        id: impl Into<String>,
        script: impl IntoIterator<Item = Result<String, BackendError>>,
    ) -> Self {
        ScriptedBackend {
            id: id.into(),
            script: Mutex::new(script.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn texts(id: impl Into<String>, texts: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::new(id, texts.into_iter().map(|t| Ok(t.into())))
    }

    pub fn requests(&self) -> Vec<LmmRequest> {
        self.seen.lock().clone()
    }
}

#[async_trait]
impl LmmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError> {
        let n = {
            let mut seen = self.seen.lock();
            seen.push(request.clone());
            seen.len()
        };
        let next = self
            .script
            .lock()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Transport("script exhausted".into())));
        next.map(|text| LmmResponse {
            text,
            model_id: format!("scripted:{}", self.id),
            latency_ms: 0,
            token_usage: None,
            response_id: format!("{}-{n}", self.id),
        })
    }
}
