use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{normalize_text, SimpleTokenizer, Tokenizer};

pub const EMBEDDING_DIM: usize = 768;
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding has dimension {0}, expected {EMBEDDING_DIM}")]
    Dimension(usize),
    #[error("embedding is a zero or non-finite vector")]
    Degenerate,
    #[error("embedding is not unit norm (norm {0})")]
    NotUnit(f64),
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("unexpected embedding response: {0}")]
    Response(String),
}

/// A unit-norm 768-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Scales `raw` to unit length.
    pub fn normalized(raw: Vec<f32>) -> Result<Self, EmbedError> {
        if raw.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(raw.len()));
        }
        let norm = raw.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(EmbedError::Degenerate);
        }
        Ok(Self(raw.into_iter().map(|v| (f64::from(v) / norm) as f32).collect()))
    }

    /// Accepts a vector that is already unit norm, e.g. read back from disk.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(values.len()));
        }
        let norm = dot(&values, &values).sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::NotUnit(norm));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Sequential f64 dot product; callers rely on this exact summation order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Source of dense embeddings. Implementations must be deterministic for a
/// fixed input within one provider version.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
// second, independent basis for the sign hash
const SIGN_OFFSET: u64 = 0x84222325_cbf29ce4;

fn fnv1a(basis: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(basis, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Feature-hashing embedder: every token adds ±1 to one of 768 buckets.
///
/// Network free and deterministic across platforms. Cosine between two texts
/// tracks their token overlap, which makes it usable as an offline stand-in
/// for a sentence encoder.
#[derive(Clone)]
pub struct HashEmbedder {
    tokenizer: Arc<dyn Tokenizer>,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { tokenizer: Arc::new(SimpleTokenizer) }
    }
}

impl HashEmbedder {
    pub const NAME: &'static str = "feature-hash-v1";

    pub fn with_tokenizer(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self { tokenizer }
    }

    /// Bucket and sign for one token.
    pub fn slot(token: &str) -> (usize, f32) {
        let bucket = (fnv1a(FNV_OFFSET, token.as_bytes()) % EMBEDDING_DIM as u64) as usize;
        let sign = if fnv1a(SIGN_OFFSET, token.as_bytes()) & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let normalized = normalize_text(text);
        let tokens = self.tokenizer.tokenize_spans(&normalized);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut raw = vec![0f32; EMBEDDING_DIM];
        for t in tokens {
            let (bucket, sign) = Self::slot(t.text);
            raw[bucket] += sign;
        }
        EmbeddingVector::normalized(raw)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.par_iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

impl HttpEmbedderConfig {
    /// Reads `EMBED_BASE_URL`, `EMBED_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        Some(Self {
            base_url: std::env::var("EMBED_BASE_URL").ok()?,
            model: std::env::var("EMBED_MODEL").ok()?,
            api_key: std::env::var("LLM_API_KEY").ok(),
            timeout_secs: default_timeout_secs(),
        })
    }
}

/// Client for an OpenAI-style `POST {base}/embeddings` endpoint.
pub struct HttpEmbedder {
    cfg: HttpEmbedderConfig,
    agent: ureq::Agent,
    name: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpEmbedderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        let name = format!("http:{}", cfg.model);
        Self { cfg, agent, name }
    }

    fn request(&self, input: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/embeddings", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({ "model": self.cfg.model, "input": input });
        let mut resp = req.send_json(&body).map_err(|e| EmbedError::Transport(e.to_string()))?;
        let parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Response(e.to_string()))?;
        if parsed.data.len() != input.len() {
            return Err(EmbedError::Response(format!("{} vectors for {} inputs", parsed.data.len(), input.len())));
        }
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        data.into_iter().map(|d| EmbeddingVector::normalized(d.embedding)).collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.request(&[text])?.pop().ok_or(EmbedError::EmptyInput)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(64) {
            out.extend(self.request(batch)?);
        }
        Ok(out)
    }
}
