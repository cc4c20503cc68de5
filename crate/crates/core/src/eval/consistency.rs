//! Inter-run stability of the free-text insight comments: mean pairwise
//! cosine similarity of comment embeddings across independent runs.

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::InsightRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("consistency needs at least two runs, got {0}")]
    InsufficientRuns(usize),
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(String),
}

/// Text embedding handle: a live endpoint or the deterministic stub.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ConsistencyError>;
}

/// The embedded text for one record: the three comments joined by single
/// spaces.
pub fn comment_text(record: &InsightRecord) -> String {
    format!(
        "{} {} {}",
        record.poly_comment, record.media_comment, record.alignment_comment
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean pairwise cosine over run pairs and the clusters each pair shares;
/// every `(pair, cluster)` observation weighs equally.
pub fn consistency_score(
    runs: &[Vec<InsightRecord>],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, ConsistencyError> {
    if runs.len() < 2 {
        return Err(ConsistencyError::InsufficientRuns(runs.len()));
    }
    let mut total = 0.0;
    let mut count = 0u64;
    for i in 0..runs.len() {
        for j in (i + 1)..runs.len() {
            for record in &runs[i] {
                let Some(other) = runs[j].iter().find(|r| r.cluster_id == record.cluster_id) else {
                    continue;
                };
                let va = provider.embed(&comment_text(record))?;
                let vb = provider.embed(&comment_text(other))?;
                total += cosine(&va, &vb);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Deterministic test/replay embedder: a unit vector seeded from the
/// SHA-256 of the text. Identical texts embed identically on every
/// platform; distinct texts land in general position.
pub struct StubEmbedder {
    pub dimensions: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder { dimensions: 16 }
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ConsistencyError> {
        use rand::{Rng, SeedableRng};
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dimensions)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Thin client for an embeddings endpoint accepting
/// `{"model": ..., "input": [text]}` and returning
/// `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedder {
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: String, model: String, api_key_env: Option<String>) -> Self {
        HttpEmbedder {
            base_url,
            model,
            api_key_env,
            http: reqwest::blocking::Client::new(),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ConsistencyError> {
        #[derive(Deserialize)]
        struct Data {
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Response {
            data: Vec<Data>,
        }
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut request = self
            .http
            .post(&url)
            .json(&serde_json::json!({"model": self.model, "input": [text]}));
        if let Some(env_var) = &self.api_key_env {
            let key = std::env::var(env_var).map_err(|_| {
                ConsistencyError::EmbeddingUnavailable(format!("{env_var} not set"))
            })?;
            request = request.bearer_auth(key);
        }
        let response: Response = request
            .send()
            .map_err(|e| ConsistencyError::EmbeddingUnavailable(e.to_string()))?
            .json()
            .map_err(|e| ConsistencyError::EmbeddingUnavailable(e.to_string()))?;
        response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ConsistencyError::EmbeddingUnavailable("empty data".into()))
    }
}
