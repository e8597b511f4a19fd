use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use super::{BackendConfig, BackendError, LmmBackend, LmmResponse, TokenUsage};
use crate::prompt::LmmRequest;

/// Client for OpenAI-style `chat/completions` endpoints.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
    rng: Mutex<StdRng>,
}

enum Attempt {
    Done(Result<LmmResponse, BackendError>),
    Retry(BackendError),
}

fn mime_of(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::Tiff) => "image/tiff",
        Ok(image::ImageFormat::WebP) => "image/webp",
        Ok(image::ImageFormat::Gif) => "image/gif",
        _ => "image/jpeg",
    }
}

/// JSON body for a request.
pub(crate) fn request_body(config: &BackendConfig, request: &LmmRequest) -> Value {
    let mut parts = vec![json!({"type": "text", "text": request.user_text})];
    for a in &request.attachments {
        parts.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{}", mime_of(a), STANDARD.encode(a))}
        }));
    }
    json!({
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": [
            {"role": "system", "content": request.system_instructions},
            {"role": "user", "content": parts},
        ]
    })
}

fn parse_body(body: &Value) -> Result<(String, String, String, Option<TokenUsage>), BackendError> {
    let content = &body["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(BackendError::InvalidResponse(
                "missing choices[0].message.content".into(),
            ))
        }
    };
    if text.is_empty() {
        return Err(BackendError::InvalidResponse("empty completion".into()));
    }
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u["prompt_tokens"].as_u64()?,
            completion_tokens: u["completion_tokens"].as_u64()?,
            total_tokens: u["total_tokens"].as_u64()?,
        })
    });
    Ok((
        text,
        body["model"].as_str().unwrap_or_default().to_string(),
        body["id"].as_str().unwrap_or_default().to_string(),
        usage,
    ))
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let rng = match config.jitter_seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        Ok(HttpBackend {
            config,
            client,
            rng: Mutex::new(rng),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Full-jitter exponential delay before retry number `attempt + 1`.
    pub(crate) fn backoff(&self, attempt: u32) -> Duration {
        let cap = self.config.backoff_base.as_secs_f64() * 2f64.powi(attempt as i32);
        let factor: f64 = self.rng.lock().gen_range(0.0..=1.0);
        Duration::from_secs_f64(cap * factor)
    }

    async fn attempt(&self, body: &Value, started: Instant) -> Attempt {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let parsed = match resp.json::<Value>().await {
                    Ok(v) => parse_body(&v),
                    Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
                    Err(e) => Err(BackendError::InvalidResponse(e.to_string())),
                };
                Attempt::Done(parsed.map(|(text, model, id, usage)| LmmResponse {
                    text,
                    model_id: if model.is_empty() { self.config.model_name.clone() } else { model },
                    latency_ms: started.elapsed().as_millis() as u64,
                    token_usage: usage,
                    response_id: id,
                }))
            }
            401 | 403 => Attempt::Done(Err(BackendError::Auth(status))),
            429 => Attempt::Retry(BackendError::RateLimited),
            500..=599 => Attempt::Retry(BackendError::Transport(format!("HTTP {status}"))),
            _ => {
                let body = resp.text().await.unwrap_or_default();
                Attempt::Done(Err(BackendError::BadRequest { status, body }))
            }
        }
    }
}

#[async_trait]
impl LmmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    async fn complete(&self, request: &LmmRequest) -> Result<LmmResponse, BackendError> {
        let body = request_body(&self.config, request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&body, started).await {
                Attempt::Done(result) => return result,
                Attempt::Retry(err) if attempt >= self.config.max_retries => return Err(err),
                Attempt::Retry(err) => {
                    let delay = self.backoff(attempt);
                    tracing::debug!(attempt, ?delay, %err, "retrying completion");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}
