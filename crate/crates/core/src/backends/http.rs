//! JSON-over-HTTP client for remote model servers.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, DimGuard, Direction, EmbeddingVector, GenerationRequest, LogProbResult, LogProbScorer,
    SentenceEncoder, TextGenerator, TokenEmbeddings, TokenEncoder,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoints {
    pub generate_url: Option<String>,
    pub embed_sentence_url: Option<String>,
    pub embed_token_url: Option<String>,
    pub logprob_forward_url: Option<String>,
    pub logprob_reverse_url: Option<String>,
}

impl Endpoints {
    fn require<'a>(url: &'a Option<String>, key: &str) -> Result<&'a str, BackendError> {
        url.as_deref()
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("`{key}` is not configured")))
    }

    /// Endpoints needed to generate and rerank.
    pub fn check_for_run(&self) -> Result<(), BackendError> {
        Self::require(&self.generate_url, "generate_url")?;
        Self::require(&self.embed_sentence_url, "embed_sentence_url")?;
        Self::require(&self.embed_token_url, "embed_token_url")?;
        Ok(())
    }

    /// Endpoints needed to evaluate.
    pub fn check_for_eval(&self) -> Result<(), BackendError> {
        Self::require(&self.embed_token_url, "embed_token_url")?;
        Self::require(&self.logprob_forward_url, "logprob_forward_url")?;
        Self::require(&self.logprob_reverse_url, "logprob_reverse_url")?;
        Ok(())
    }
}

/// Retries on transport errors and non-success statuses, doubling the delay
/// after each failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff.saturating_mul(1u32 << retry.min(16))
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    temperature: f64,
    top_k: u32,
    top_p: f64,
    no_repeat_ngram: u32,
    sampling: bool,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
}

#[derive(Serialize)]
struct EmbedSentenceBody<'a> {
    texts: &'a [&'a str],
    granularity: &'static str,
}

#[derive(Serialize)]
struct EmbedTokenBody<'a> {
    text: &'a str,
    granularity: &'static str,
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct LogProbBody<'a> {
    context: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct LogProbReply {
    avg_logprob: f64,
    token_count: u32,
}

pub struct HttpBackend {
    client: Client,
    endpoints: Endpoints,
    retry: RetryPolicy,
    bearer_token: Option<String>,
    sentence_dim: DimGuard,
    token_dim: DimGuard,
}

impl HttpBackend {
    pub fn new(
        endpoints: Endpoints,
        retry: RetryPolicy,
        bearer_token: Option<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoints,
            retry,
            bearer_token,
            sentence_dim: DimGuard::default(),
            token_dim: DimGuard::default(),
        })
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
        correlation_id: &str,
    ) -> Result<R, BackendError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(url).json(body).header("x-correlation-id", correlation_id);
            if let Some(token) = &self.bearer_token {
                req = req.bearer_auth(token);
            }
            let failure = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let bytes = resp
                        .bytes()
                        .map_err(|e| BackendError::Protocol(format!("reading body from {url}: {e}")))?;
                    return serde_json::from_slice(&bytes)
                        .map_err(|e| BackendError::Protocol(format!("bad reply from {url}: {e}")));
                }
                Ok(resp) => BackendError::Status {
                    status: resp.status().as_u16(),
                    attempts: attempt,
                },
                Err(e) => BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.retry.max_retries {
                return Err(failure);
            }
            let wait = self.retry.backoff(attempt - 1);
            log::warn!("{url} [{correlation_id}]: {failure}; retrying in {wait:?}");
            thread::sleep(wait);
        }
    }
}

impl TextGenerator for HttpBackend {
    fn generate_once(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let url = Endpoints::require(&self.endpoints.generate_url, "generate_url")?;
        let p = &request.params;
        let body = GenerateBody {
            prompt: request.prompt.as_str(),
            max_new_tokens: p.max_new_tokens,
            temperature: p.temperature,
            top_k: p.top_k,
            top_p: p.top_p,
            no_repeat_ngram: p.no_repeat_ngram,
            sampling: p.sampling,
            seed: p.seed,
        };
        let reply: GenerateReply = self.post(url, &body, &request.correlation_id)?;
        Ok(reply.text)
    }
}

impl SentenceEncoder for HttpBackend {
    fn embed_sentences(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let url = Endpoints::require(&self.endpoints.embed_sentence_url, "embed_sentence_url")?;
        let body = EmbedSentenceBody {
            texts,
            granularity: "sentence",
        };
        let reply: EmbedReply = self.post(url, &body, "embed-sentence")?;
        let vectors = reply
            .vectors
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        for v in &vectors {
            self.sentence_dim.check(v.dim())?;
        }
        Ok(vectors)
    }
}

impl TokenEncoder for HttpBackend {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, BackendError> {
        let url = Endpoints::require(&self.endpoints.embed_token_url, "embed_token_url")?;
        let body = EmbedTokenBody {
            text,
            granularity: "token",
        };
        let reply: EmbedReply = self.post(url, &body, "embed-token")?;
        let rows = reply
            .vectors
            .into_iter()
            .map(EmbeddingVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        let tokens = TokenEmbeddings::new(rows)?;
        self.token_dim.check(tokens.dim())?;
        Ok(tokens)
    }
}

impl LogProbScorer for HttpBackend {
    fn score_logprob(
        &self,
        context: &str,
        continuation: &str,
        direction: Direction,
    ) -> Result<LogProbResult, BackendError> {
        let (url, body) = match direction {
            Direction::Forward => (
                Endpoints::require(&self.endpoints.logprob_forward_url, "logprob_forward_url")?,
                LogProbBody { context, continuation },
            ),
            Direction::Reverse => (
                Endpoints::require(&self.endpoints.logprob_reverse_url, "logprob_reverse_url")?,
                LogProbBody {
                    context: continuation,
                    continuation: context,
                },
            ),
        };
        let reply: LogProbReply = self.post(url, &body, "logprob")?;
        LogProbResult::new(reply.avg_logprob, reply.token_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff(0), Duration::from_millis(500));
        assert_eq!(r.backoff(1), Duration::from_millis(1000));
        assert_eq!(r.backoff(2), Duration::from_millis(2000));
    }

    #[test]
    fn endpoint_requirements() {
        let mut e = Endpoints::default();
        assert!(e.check_for_run().is_err());
        e.generate_url = Some("http://x/v1/generate".into());
        e.embed_sentence_url = Some("http://x/v1/embed".into());
        e.embed_token_url = Some("http://x/v1/embed".into());
        e.check_for_run().unwrap();
        let err = e.check_for_eval().unwrap_err();
        assert!(err.to_string().contains("logprob_forward_url"));
    }
}
