//! Chat-completions client for OpenAI-compatible vision endpoints.
//!
//! Images are read from disk (or taken from inline base64), cropped to the
//! request window when one is set, and sent as a PNG data URL. Transient
//! failures are retried with exponential backoff; a shared semaphore caps
//! in-flight requests and a minimum interval spaces request starts.

use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use viscausal_core::backend::{Backend, BackendError, ChatRequest, ChatResponse, ImageRef, TokenUsage};
use viscausal_core::geometry::BoundingBox;

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Upper bound on request starts per second; unlimited when absent.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: None,
            model: model.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
            requests_per_second: None,
            initial_backoff_ms: default_backoff(),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    permits: Semaphore,
    next_start: Mutex<Instant>,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(BackendError::InvalidRequest("timeout_secs must be positive".into()));
        }
        if config.requests_per_second.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
            return Err(BackendError::InvalidRequest("requests_per_second must be positive".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::AuthFailure(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            permits: Semaphore::new(config.concurrency),
            config,
            api_key,
            agent,
            next_start: Mutex::new(Instant::now()),
            attempts: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn pace(&self) {
        let Some(rps) = self.config.requests_per_second else { return };
        let wait = {
            let mut next = self.next_start.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + Duration::from_secs_f64(1.0 / rps);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &ChatRequest) -> Result<Value, BackendError> {
        let mut content = Vec::new();
        if let Some(image) = &request.image {
            content.push(json!({"type": "image_url", "image_url": {"url": image_data_url(image, request.crop)?}}));
        }
        content.push(json!({"type": "text", "text": request.user_text}));
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": content}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_tokens,
        });
        if let Some(seed) = request.decode.seed {
            body["seed"] = json!(seed);
        }
        Ok(body)
    }

    fn attempt(&self, body: &str) -> Result<ChatResponse, BackendError> {
        let _permit = self.permits.acquire();
        self.pace();
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let mut call = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send(body).map_err(map_transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::AuthFailure(format!("HTTP {status}"))),
            429 => return Err(BackendError::RateLimited),
            408 => return Err(BackendError::Timeout),
            500 | 502 | 503 | 504 => return Err(BackendError::TransportFailure(format!("HTTP {status}"))),
            _ => return Err(BackendError::NonRetriableServerError { status, message: truncate(&text, 512) }),
        }
        let mut out = parse_completion(&text)?;
        out.latency_ms = started.elapsed().as_millis() as u64;
        Ok(out)
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::TransportFailure(other.to_string()),
    }
}

/// Extract the first choice's text and token usage.
pub fn parse_completion(text: &str) -> Result<ChatResponse, BackendError> {
    let malformed = |m: &str| BackendError::NonRetriableServerError { status: 200, message: format!("malformed completion: {m}") };
    let v: Value = serde_json::from_str(text).map_err(|e| malformed(&e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // Some servers return a list of content parts.
        Value::Array(parts) => parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join(""),
        _ => return Err(malformed("no choices[0].message.content")),
    };
    let usage = TokenUsage {
        prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok(ChatResponse { text, latency_ms: 0, usage })
}

/// PNG data URL of `image`, cropped to `crop` (clamped to the frame).
pub fn image_data_url(image: &ImageRef, crop: Option<BoundingBox>) -> Result<String, BackendError> {
    let invalid = |m: String| BackendError::InvalidRequest(m);
    let (bytes, media_type) = match image {
        ImageRef::Path { path } => (std::fs::read(path).map_err(|e| invalid(format!("cannot read image {path}: {e}")))?, None),
        ImageRef::Base64 { media_type, data } => {
            let bytes = STANDARD.decode(data).map_err(|e| invalid(format!("bad base64 image: {e}")))?;
            (bytes, Some(media_type.as_str()))
        }
    };
    if let (None, Some(media_type)) = (crop, media_type) {
        return Ok(format!("data:{media_type};base64,{}", STANDARD.encode(&bytes)));
    }
    let mut img = image::load_from_memory(&bytes).map_err(|e| invalid(format!("cannot decode image: {e}")))?;
    if let Some(b) = crop {
        let (w, h) = (img.width() as f64, img.height() as f64);
        let x1 = b.x1().clamp(0.0, w).floor();
        let y1 = b.y1().clamp(0.0, h).floor();
        let x2 = b.x2().clamp(0.0, w).ceil();
        let y2 = b.y2().clamp(0.0, h).ceil();
        if x2 - x1 >= 1.0 && y2 - y1 >= 1.0 {
            img = img.crop_imm(x1 as u32, y1 as u32, (x2 - x1) as u32, (y2 - y1) as u32);
        }
    }
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png).map_err(|e| invalid(format!("cannot encode image: {e}")))?;
    Ok(format!("data:image/png;base64,{}", STANDARD.encode(&png)))
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = self.request_body(request)?.to_string();
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retriable() && retries < self.config.max_retries => {
                    log::warn!("request failed ({e}); retry {} of {}", retries + 1, self.config.max_retries);
                    std::thread::sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                    retries += 1;
                }
                other => return other,
            }
        }
    }

    /// Samples are requested concurrently, within the concurrency cap.
    fn sample(&self, request: &ChatRequest, n: usize) -> Vec<Result<ChatResponse, BackendError>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .map(|i| {
                    let mut req = request.clone();
                    req.decode.sample_index = i as u32;
                    req.decode.seed = request.decode.seed.map(|x| x.wrapping_add(i as u64));
                    s.spawn(move || self.complete(&req))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(BackendError::TransportFailure("request thread panicked".into()))))
                .collect()
        })
    }
}
