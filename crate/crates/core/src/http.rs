//! Blocking JSON-over-HTTP client shared by the remote encoder and LLM
//! backends: bearer auth, bounded retry on transient failures, and an
//! optional append-only audit log with the credential redacted.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

pub struct AuditLog {
    path: PathBuf,
    file: Mutex<(File, u64)>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new((file, 0)),
        })
    }

    fn record(&self, entry: Value, secret: Option<&str>) -> Result<()> {
        let mut line = entry.to_string();
        if let Some(s) = secret.filter(|s| !s.is_empty()) {
            line = line.replace(s, "[REDACTED]");
        }
        let mut guard = self.file.lock().expect("audit log poisoned");
        guard.1 += 1;
        writeln!(guard.0, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub struct JsonClient {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    audit: Option<AuditLog>,
}

impl JsonClient {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Backend(format!("http client: {e}")))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            retry: RetryPolicy::default(),
            audit: None,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POSTs `body` to `{base_url}/{path}`. Connection failures, timeouts,
    /// 429 and 5xx responses are retried with exponential backoff; other
    /// statuses fail immediately.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let mut attempt = 0u32;
        loop {
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = self.api_key.as_deref().filter(|k| !k.is_empty()) {
                req = req.bearer_auth(key);
            }
            let outcome = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    self.audit(&url, body, Some(status.as_u16()), &text, attempt);
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| Error::Backend(format!("{url}: malformed JSON response: {e}")));
                    }
                    let transient = status.as_u16() == 429 || status.is_server_error();
                    (transient, format!("{url}: HTTP {status}: {}", truncate(&text, 300)))
                }
                Err(e) => {
                    self.audit(&url, body, None, &e.to_string(), attempt);
                    (
                        e.is_timeout() || e.is_connect() || e.is_request(),
                        format!("{url}: {e}"),
                    )
                }
            };
            let (transient, message) = outcome;
            if !transient || attempt >= self.retry.max_retries {
                return Err(Error::Backend(message));
            }
            let delay = self.retry.base_delay * 2u32.saturating_pow(attempt);
            log::warn!(
                "transient backend failure (attempt {}): {message}; retrying in {delay:?}",
                attempt + 1
            );
            std::thread::sleep(delay);
            attempt += 1;
        }
    }

    fn audit(&self, url: &str, request: &Value, status: Option<u16>, response: &str, attempt: u32) {
        if let Some(log) = &self.audit {
            let entry = json!({
                "url": url,
                "attempt": attempt,
                "request": request,
                "status": status,
                "response": response,
            });
            if let Err(e) = log.record(entry, self.api_key.as_deref()) {
                log::warn!("audit log write failed: {e}");
            }
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Reads a credential from the environment; `None` when unset or empty.
pub fn credential_from_env(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.is_empty())
}
