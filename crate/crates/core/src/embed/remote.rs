use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::image_buf::ColorImage;

/// Environment variable that overrides a configured endpoint.
pub const ENDPOINT_ENV: &str = "GARMENT_EMBED_ENDPOINT";

/// Picks the endpoint: explicit value first, then the environment, then the configured default.
pub fn resolve_endpoint(explicit: Option<&str>, configured: Option<&str>) -> Option<String> {
    explicit
        .map(str::to_string)
        .or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
        .or_else(|| configured.map(str::to_string))
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    /// Base URL; requests go to `<endpoint>/embed`.
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: u32,
    /// First backoff delay; doubles after each failed attempt.
    pub backoff: Duration,
    pub expected_dimension: Option<usize>,
    pub cache_dir: Option<PathBuf>,
}

impl RemoteOptions {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            expected_dimension: None,
            cache_dir: None,
        }
    }
}

type Slot = Arc<Mutex<Option<Vec<f64>>>>;

/// HTTP client for an external embedding service, with a content-addressed cache.
pub struct RemoteProvider {
    options: RemoteOptions,
    url: String,
    agent: ureq::Agent,
    cache: Mutex<HashMap<[u8; 32], Slot>>,
    network_calls: AtomicUsize,
    id: String,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider").field("url", &self.url).field("network_calls", &self.network_calls()).finish()
    }
}

fn parse_embedding(body: &str) -> Result<Vec<f64>, EmbedError> {
    let json: serde_json::Value = serde_json::from_str(body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
    let arr = match &json {
        serde_json::Value::Array(a) => a,
        serde_json::Value::Object(o) => match o.get("embedding") {
            Some(serde_json::Value::Array(a)) => a,
            _ => return Err(EmbedError::Malformed("missing `embedding` array".into())),
        },
        _ => return Err(EmbedError::Malformed("expected a JSON array or object".into())),
    };
    let values = arr
        .iter()
        .map(|v| v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| EmbedError::Malformed(format!("non-numeric entry {v}"))))
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(EmbedError::Malformed("empty embedding".into()));
    }
    Ok(values)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RemoteProvider {
    pub fn new(options: RemoteOptions) -> Self {
        let base = options.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embed") { base.to_string() } else { format!("{base}/embed") };
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(options.timeout)).http_status_as_error(false).build().into();
        let id = format!("remote:{url}");
        Self { options, url, agent, cache: Mutex::new(HashMap::new()), network_calls: AtomicUsize::new(0), id }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Requests actually sent over the network (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn request_once(&self, png: &[u8]) -> Result<Vec<f64>, EmbedError> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let resp = self.agent.post(&self.url).header("Content-Type", "image/png").send(png);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(EmbedError::Timeout),
            Err(ureq::Error::Io(e)) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
                return Err(EmbedError::Timeout)
            }
            Err(e) => return Err(EmbedError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::HttpStatus { status });
        }
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => return Err(EmbedError::Timeout),
            Err(e) => return Err(EmbedError::Transport(e.to_string())),
        };
        let values = parse_embedding(&body)?;
        if let Some(d) = self.options.expected_dimension {
            if values.len() != d {
                return Err(EmbedError::Malformed(format!("expected {d} values, got {}", values.len())));
            }
        }
        Ok(values)
    }

    fn request(&self, png: &[u8]) -> Result<Vec<f64>, EmbedError> {
        let mut delay = self.options.backoff;
        let mut attempt = 0;
        loop {
            match self.request_once(png) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.options.retries => {
                    log::warn!("embedding request failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn disk_path(&self, key: &[u8; 32]) -> Option<PathBuf> {
        self.options.cache_dir.as_ref().map(|d| d.join(format!("{}.json", hex(key))))
    }

    fn read_disk(&self, key: &[u8; 32]) -> Option<Vec<f64>> {
        let text = std::fs::read_to_string(self.disk_path(key)?).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn write_disk(&self, key: &[u8; 32], values: &[f64]) {
        if let Some(path) = self.disk_path(key) {
            let result = path
                .parent()
                .map(std::fs::create_dir_all)
                .unwrap_or(Ok(()))
                .and_then(|_| std::fs::write(&path, serde_json::to_string(values).expect("floats serialize")));
            if let Err(e) = result {
                log::warn!("could not write embedding cache {}: {e}", path.display());
            }
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, image: &ColorImage) -> Result<EmbeddingVector, EmbedError> {
        if image.is_empty() {
            return Err(EmbedError::EmptyImage);
        }
        let png = image.to_png_bytes()?;
        let key: [u8; 32] = Sha256::digest(&png).into();
        let slot = self.cache.lock().expect("cache lock").entry(key).or_default().clone();
        // holding the slot serializes identical in-flight requests
        let mut guard = slot.lock().expect("slot lock");
        if let Some(values) = guard.as_ref() {
            return Ok(EmbeddingVector::normalized(values.clone(), &self.id));
        }
        let values = match self.read_disk(&key) {
            Some(v) => v,
            None => {
                let v = self.request(&png)?;
                self.write_disk(&key, &v);
                v
            }
        };
        *guard = Some(values.clone());
        Ok(EmbeddingVector::normalized(values, &self.id))
    }
}
