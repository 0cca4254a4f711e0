//! Model capabilities consumed by the pipeline: text generation, sentence and
//! token embeddings, and continuation log-probabilities.
//!
//! Each capability is a trait so that the HTTP client and the deterministic
//! stub are interchangeable.

mod http;
mod stub;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::prompts::ChatRequestText;

pub use http::{Endpoints, HttpBackend, RetryPolicy};
pub use stub::{stub_hash, stub_token_vector, stub_tokens, StubBackend, STUB_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty text")]
    EmptyText,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub no_repeat_ngram: u32,
    pub sampling: bool,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 512,
            temperature: 0.7,
            top_k: 50,
            top_p: 0.95,
            no_repeat_ngram: 2,
            sampling: true,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidParams(m.to_string()));
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        Ok(())
    }

    /// Per-attempt parameters: a fixed seed is offset by the attempt index so
    /// repeated attempts differ while staying reproducible.
    pub fn for_attempt(&self, attempt: u32) -> Self {
        Self {
            seed: self.seed.map(|s| s.wrapping_add(u64::from(attempt))),
            ..self.clone()
        }
    }
}

/// Dense embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T = f64>(Vec<T>);

impl<T: Real> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Protocol("zero-length embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Protocol("non-finite embedding entry".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self(self.0.iter().map(|v| *v * alpha).collect())
    }
}

/// Per-token embeddings of one text, in token order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenEmbeddings<T = f64>(Vec<EmbeddingVector<T>>);

impl<T: Real> TokenEmbeddings<T> {
    pub fn new(rows: Vec<EmbeddingVector<T>>) -> Result<Self, BackendError> {
        let Some(first) = rows.first() else {
            return Err(BackendError::Protocol("no token embeddings".into()));
        };
        let dim = first.dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(BackendError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self(rows))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn rows(&self) -> &[EmbeddingVector<T>] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbResult {
    /// Mean natural-log probability per token.
    pub avg_token_logprob: f64,
    pub token_count: u32,
}

impl LogProbResult {
    pub fn new(avg_token_logprob: f64, token_count: u32) -> Result<Self, BackendError> {
        if !avg_token_logprob.is_finite() || avg_token_logprob > 0.0 {
            return Err(BackendError::Protocol(format!(
                "average log-probability must be finite and <= 0, got {avg_token_logprob}"
            )));
        }
        if token_count == 0 {
            return Err(BackendError::Protocol("token_count must be positive".into()));
        }
        Ok(Self {
            avg_token_logprob,
            token_count,
        })
    }

    pub fn perplexity(&self) -> f64 {
        (-self.avg_token_logprob).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Response scored given the context.
    Forward,
    /// Context scored given the response.
    Reverse,
}

/// Everything a generator sees for one attempt.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub prompt: &'a ChatRequestText,
    pub params: GenerationParams,
    pub template_id: u8,
    pub attempt: u32,
    pub correlation_id: String,
}

pub trait TextGenerator: Send + Sync {
    fn generate_once(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError>;
}

pub trait SentenceEncoder: Send + Sync {
    fn embed_sentences(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

pub trait TokenEncoder: Send + Sync {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, BackendError>;
}

pub trait LogProbScorer: Send + Sync {
    /// Average log-probability under the `direction` model. For
    /// [`Direction::Reverse`] the roles swap: `context` is scored given
    /// `continuation`.
    fn score_logprob(
        &self,
        context: &str,
        continuation: &str,
        direction: Direction,
    ) -> Result<LogProbResult, BackendError>;
}

/// Runs `attempts` generations for one prompt, in attempt order.
///
/// Empty generations are returned as empty strings; any failed attempt fails
/// the whole call.
pub fn generate(
    generator: &dyn TextGenerator,
    prompt: &ChatRequestText,
    template_id: u8,
    params: &GenerationParams,
    attempts: u32,
    correlation_prefix: &str,
) -> Result<Vec<String>, BackendError> {
    if attempts == 0 {
        return Err(BackendError::InvalidParams("attempts must be at least 1".into()));
    }
    params.validate()?;
    (0..attempts)
        .map(|attempt| {
            generator.generate_once(&GenerationRequest {
                prompt,
                params: params.for_attempt(attempt),
                template_id,
                attempt,
                correlation_id: format!("{correlation_prefix}/p{template_id}/a{attempt}"),
            })
        })
        .collect()
}

/// Sentence embeddings with batch validation.
pub fn embed_sentence(
    encoder: &dyn SentenceEncoder,
    texts: &[&str],
) -> Result<Vec<EmbeddingVector>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::EmptyBatch);
    }
    if texts.iter().any(|t| t.is_empty()) {
        return Err(BackendError::EmptyText);
    }
    let vectors = encoder.embed_sentences(texts)?;
    if vectors.len() != texts.len() {
        return Err(BackendError::Protocol(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(BackendError::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }
    Ok(vectors)
}

pub fn embed_tokens(encoder: &dyn TokenEncoder, text: &str) -> Result<TokenEmbeddings, BackendError> {
    if text.is_empty() {
        return Err(BackendError::EmptyText);
    }
    encoder.embed_tokens(text)
}

pub fn score_logprob(
    scorer: &dyn LogProbScorer,
    context: &str,
    continuation: &str,
    direction: Direction,
) -> Result<LogProbResult, BackendError> {
    if context.is_empty() || continuation.is_empty() {
        return Err(BackendError::EmptyText);
    }
    scorer.score_logprob(context, continuation, direction)
}

/// Pins the first dimension a provider reports and rejects any other.
#[derive(Debug, Default)]
pub struct DimGuard(OnceLock<usize>);

impl DimGuard {
    pub fn check(&self, dim: usize) -> Result<(), BackendError> {
        let expected = *self.0.get_or_init(|| dim);
        if expected == dim {
            Ok(())
        } else {
            Err(BackendError::DimensionMismatch { expected, got: dim })
        }
    }
}
