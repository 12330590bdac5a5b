//! Client for a generic embedding service, with an on-disk cache.
//!
//! Wire protocol: `POST <endpoint>/embed` with `{"model": .., "texts": [..]}`,
//! answered by `200 {"embeddings": [[..], ..]}` in request order. Any other
//! status counts as a transport failure and is retried.
//!
//! Every vector is rounded to f32 on arrival, so a fresh response and a
//! cache hit for the same text are bit-identical.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::emb::{decode_emb1, encode_emb1, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMatrix, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Upper bound on concurrent requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Filled from the environment or bench config when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Delay before the first retry; doubled for each later one.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_batch_size() -> usize {
    32
}
fn default_max_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    60
}
fn default_backoff() -> u64 {
    200
}

pub const MAX_ATTEMPTS: u32 = 3;

impl RemoteSpec {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            batch_size: default_batch_size(),
            max_in_flight: default_max_in_flight(),
            cache_dir: Some(cache_dir.into()),
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::Config("remote encoder needs an endpoint".into()));
        }
        if self.model.is_empty() {
            return Err(Error::Config("remote encoder needs a model id".into()));
        }
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(Error::Config("batch_size and max_in_flight must be at least 1".into()));
        }
        if self.cache_dir.is_none() {
            return Err(Error::Config(format!(
                "remote encoder {} has no cache directory",
                self.endpoint
            )));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/embed", self.endpoint.trim_end_matches('/'))
    }

    fn remote_err(&self, detail: impl Into<String>) -> Error {
        Error::Remote {
            endpoint: self.endpoint.clone(),
            detail: detail.into(),
        }
    }
}

/// Cache file for `(model, text)`.
pub fn cache_path(cache_dir: &Path, model: &str, text: &str) -> PathBuf {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    cache_dir.join(format!("{}.emb", hex::encode(h.finalize())))
}

fn read_cache(path: &Path) -> Result<Option<Vec<f64>>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let m = decode_emb1(&bytes).map_err(|e| Error::Format(format!("cache entry {}: {e}", path.display())))?;
    if m.rows() != 1 {
        return Err(Error::Format(format!(
            "cache entry {} holds {} rows, expected 1",
            path.display(),
            m.rows()
        )));
    }
    Ok(Some(m.into_data()))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

enum Failure {
    /// Worth retrying: connection problems and non-200 statuses.
    Transport(String),
    Fatal(String),
}

fn request_once(agent: &ureq::Agent, spec: &RemoteSpec, texts: &[&str]) -> std::result::Result<Vec<Vec<f64>>, Failure> {
    let body = serde_json::to_string(&EmbedRequest {
        model: &spec.model,
        texts,
    })
    .map_err(|e| Failure::Fatal(format!("encoding request: {e}")))?;
    let mut resp = agent
        .post(spec.url())
        .header("Content-Type", "application/json")
        .send(body)
        .map_err(|e| Failure::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if status != 200 {
        return Err(Failure::Transport(format!("HTTP {status}")));
    }
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Failure::Transport(format!("reading response: {e}")))?;
    let parsed: EmbedResponse =
        serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("malformed response: {e}")))?;
    if parsed.embeddings.len() != texts.len() {
        return Err(Failure::Fatal(format!(
            "malformed response: {} embeddings for {} texts",
            parsed.embeddings.len(),
            texts.len()
        )));
    }
    let mut out = Vec::with_capacity(texts.len());
    for v in parsed.embeddings {
        let rounded: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
        if rounded.is_empty() || rounded.iter().any(|x| !x.is_finite()) {
            return Err(Failure::Fatal("malformed response: empty or non-finite embedding".into()));
        }
        out.push(rounded);
    }
    Ok(out)
}

fn request_with_retry(agent: &ureq::Agent, spec: &RemoteSpec, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        if attempt > 0 {
            thread::sleep(Duration::from_millis(spec.backoff_ms << (attempt - 1)));
        }
        match request_once(agent, spec, texts) {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(msg)) => return Err(spec.remote_err(msg)),
            Err(Failure::Transport(msg)) => last = msg,
        }
    }
    Err(spec.remote_err(format!("giving up after {MAX_ATTEMPTS} attempts: {last}")))
}

fn check_dim(spec: &RemoteSpec, dim: &mut Option<usize>, got: usize) -> Result<()> {
    match *dim {
        None => *dim = Some(got),
        Some(d) if d != got => {
            return Err(spec.remote_err(format!("embedding dimension mismatch: {d} vs {got}")));
        }
        _ => {}
    }
    Ok(())
}

/// Embeds `texts`, one row each in input order.
///
/// Cached texts are served from disk; the rest go out in batches of
/// `batch_size`, at most `max_in_flight` at a time. New vectors are cached
/// before returning.
pub fn remote_embed<S: AsRef<str>>(spec: &RemoteSpec, texts: &[S]) -> Result<FeatureMatrix> {
    spec.validate()?;
    let cache_dir = spec.cache_dir.as_deref().expect("validated");
    let mut rows: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
    let mut dim = None;
    // unique texts that still need a request, in first-seen order
    let mut missing: Vec<&str> = Vec::new();
    for t in texts {
        let t = t.as_ref();
        let hit = read_cache(&cache_path(cache_dir, &spec.model, t))?;
        if let Some(v) = &hit {
            check_dim(spec, &mut dim, v.len())?;
        } else if !missing.contains(&t) {
            missing.push(t);
        }
        rows.push(hit);
    }

    if !missing.is_empty() {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let batches: Vec<&[&str]> = missing.chunks(spec.batch_size).collect();
        let mut fetched: Vec<Vec<f64>> = Vec::with_capacity(missing.len());
        for wave in batches.chunks(spec.max_in_flight) {
            let results: Vec<Result<Vec<Vec<f64>>>> = thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| {
                        let agent = &agent;
                        s.spawn(move || request_with_retry(agent, spec, batch))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
            });
            for r in results {
                for v in r? {
                    check_dim(spec, &mut dim, v.len())?;
                    fetched.push(v);
                }
            }
        }
        for (t, v) in missing.iter().zip(&fetched) {
            let row = Tensor::from_vec(1, v.len(), v.clone())?;
            write_atomic(&cache_path(cache_dir, &spec.model, t), &encode_emb1(&row)?)?;
        }
        for (t, row) in texts.iter().zip(rows.iter_mut()) {
            if row.is_none() {
                let k = missing.iter().position(|m| *m == t.as_ref()).expect("queued");
                *row = Some(fetched[k].clone());
            }
        }
    }

    let d = dim.unwrap_or(0);
    let mut data = Vec::with_capacity(texts.len() * d);
    for row in rows {
        data.extend(row.expect("filled"));
    }
    Tensor::from_vec(texts.len(), d, data)
}
