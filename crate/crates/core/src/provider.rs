//! Remote model plumbing shared by the chat and embedding clients: request
//! keys, a write-once disk cache, replay files and retrying HTTP calls.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable key for a request. `serde_json::Value` objects keep their keys
/// sorted, so the serialized form is canonical.
pub fn request_key(payload: &Value) -> String {
    sha256_hex(payload.to_string().as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before retry k is `backoff_ms[min(k, len-1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: vec![1000, 4000, 16000],
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = match self.backoff_ms.len() {
            0 => 0,
            n => self.backoff_ms[(attempt as usize).min(n - 1)],
        };
        Duration::from_millis(ms)
    }

    /// Run `op` until it succeeds, fails permanently, or the retry budget is
    /// spent. Only `ProviderUnavailable` is treated as transient.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>, sleep: impl Fn(Duration)) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(Error::ProviderUnavailable(msg)) if attempt < self.max_retries => {
                    log::warn!("transient provider error (attempt {}): {msg}", attempt + 1);
                    sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(Error::ProviderUnavailable(msg)) => {
                    return Err(Error::ProviderUnavailable(format!(
                        "giving up after {} attempts: {msg}",
                        attempt + 1
                    )))
                }
                other => return other,
            }
        }
    }
}

/// Write-once response cache: one file per request key.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DiskCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    /// Store `value` unless the key is already present. Concurrent writers
    /// each write a private temp file and rename it into place, so readers
    /// never observe a partial entry.
    pub fn put(&self, key: &str, value: &str) -> Result<()> {
        let dest = self.path(key);
        if dest.exists() {
            return Ok(());
        }
        fs::create_dir_all(&self.dir).map_err(|e| Error::unreadable(&self.dir, e))?;
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::unreadable(&tmp, e))?;
        f.write_all(value.as_bytes())?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &dest).map_err(|e| Error::unreadable(&dest, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub response: String,
}

/// Request-key to response map loaded from a JSONL file.
#[derive(Debug, Clone, Default)]
pub struct ReplayFile {
    entries: HashMap<String, String>,
}

impl ReplayFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::unreadable(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(line)
                .map_err(|err| Error::ConfigInvalid(format!("replay line {}: {err}", i + 1)))?;
            entries.insert(e.key, e.response);
        }
        Ok(ReplayFile { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: String, response: String) {
        self.entries.insert(key, response);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by key, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let e = ReplayEntry {
                key: k.clone(),
                response: self.entries[k].clone(),
            };
            out.push_str(&serde_json::to_string(&e).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

/// Minimal JSON-over-HTTP client for OpenAI-compatible endpoints.
#[derive(Debug, Clone)]
pub struct HttpJson {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpJson {
    pub fn new(timeout: Duration, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpJson { agent, api_key }
    }

    /// One POST. 401/403 map to `AuthFailure`; 429, 5xx and transport
    /// errors map to `ProviderUnavailable` so callers can retry them.
    pub fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| Error::ProviderUnavailable(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::ProviderUnavailable(format!("{url}: reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Error::ParseFailure(format!("{url}: invalid JSON response: {e}"))),
            401 | 403 => Err(Error::AuthFailure(format!("{url}: HTTP {status}"))),
            429 | 500..=599 => Err(Error::ProviderUnavailable(format!("{url}: HTTP {status}"))),
            _ => Err(Error::ParseFailure(format!(
                "{url}: HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            ))),
        }
    }
}

/// Join a base URL and an endpoint path with exactly one slash.
pub fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn key_is_order_independent() {
        let a: Value = serde_json::from_str(r#"{"model":"m","messages":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"messages":[1,2],"model":"m"}"#).unwrap();
        assert_eq!(request_key(&a), request_key(&b));
        let c: Value = serde_json::from_str(r#"{"messages":[2,1],"model":"m"}"#).unwrap();
        assert_ne!(request_key(&a), request_key(&c));
    }

    #[test]
    fn retry_gives_up_after_budget() {
        let calls = Cell::new(0);
        let policy = RetryPolicy {
            max_retries: 2,
            backoff_ms: vec![0],
        };
        let r: Result<()> = policy.run(
            || {
                calls.set(calls.get() + 1);
                Err(Error::ProviderUnavailable("503".into()))
            },
            |_| {},
        );
        assert!(matches!(r, Err(Error::ProviderUnavailable(_))));
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn retry_stops_on_auth_and_success() {
        let calls = Cell::new(0);
        let policy = RetryPolicy::default();
        let r: Result<()> = policy.run(
            || {
                calls.set(calls.get() + 1);
                Err(Error::AuthFailure("401".into()))
            },
            |_| panic!("no sleep on auth failure"),
        );
        assert!(matches!(r, Err(Error::AuthFailure(_))));
        assert_eq!(calls.get(), 1);

        let calls = Cell::new(0);
        let slept = Cell::new(Duration::ZERO);
        let r = policy.run(
            || {
                calls.set(calls.get() + 1);
                if calls.get() < 3 {
                    Err(Error::ProviderUnavailable("429".into()))
                } else {
                    Ok(7)
                }
            },
            |d| slept.set(slept.get() + d),
        );
        assert_eq!(r.unwrap(), 7);
        assert_eq!(slept.get(), Duration::from_millis(5000));
    }

    #[test]
    fn cache_is_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let c = DiskCache::new(dir.path().join("c"));
        assert!(c.get("k").is_none());
        c.put("k", "first").unwrap();
        c.put("k", "second").unwrap();
        assert_eq!(c.get("k").unwrap(), "first");
        let leftovers = fs::read_dir(c.dir()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn replay_round_trip() {
        let mut r = ReplayFile::default();
        r.insert("b".into(), "two, male, x".into());
        r.insert("a".into(), "one".into());
        let text = r.to_jsonl();
        assert!(text.starts_with(r#"{"key":"a""#));
        let back = ReplayFile::parse(&text).unwrap();
        assert_eq!(back.get("b"), Some("two, male, x"));
        assert_eq!(back.len(), 2);
        assert!(ReplayFile::parse("not json").is_err());
    }

    #[test]
    fn unreachable_endpoint_is_transient() {
        let http = HttpJson::new(Duration::from_millis(500), None);
        let r = http.post("http://127.0.0.1:9/v1/chat/completions", &Value::Null);
        assert!(matches!(r, Err(Error::ProviderUnavailable(_))));
        assert_eq!(endpoint("http://x/v1/", "/embeddings"), "http://x/v1/embeddings");
    }
}
