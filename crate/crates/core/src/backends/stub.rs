//! Deterministic offline backend.
//!
//! Token vectors: FNV-1a over the token bytes followed by the seed as 8
//! little-endian bytes gives a 64-bit state; 16 splitmix64 outputs mapped to
//! `[-1, 1)` and L2-normalized form the vector. Sentence vectors are the
//! normalized sum of the unigram and adjacent-bigram vectors. Every logprob is
//! `-ln 16` per token.

use crate::examples::tokenize;

use super::{
    BackendError, Direction, EmbeddingVector, GenerationRequest, LogProbResult, LogProbScorer, SentenceEncoder,
    TextGenerator, TokenEmbeddings, TokenEncoder,
};

pub const STUB_DIM: usize = 16;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// 64-bit hash of `(bytes, seed)`.
pub fn stub_hash(bytes: &[u8], seed: u64) -> u64 {
    fnv1a(fnv1a(FNV_OFFSET, bytes), &seed.to_le_bytes())
}

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn raw_vector(key: &str, seed: u64) -> [f64; STUB_DIM] {
    let mut state = stub_hash(key.as_bytes(), seed);
    let mut v = [0.0; STUB_DIM];
    for x in &mut v {
        let bits = splitmix_next(&mut state) >> 11;
        *x = (bits as f64) * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0;
    }
    v
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0).then(|| v.iter().map(|x| x / norm).collect())
}

/// Unit vector for one token.
pub fn stub_token_vector(token: &str, seed: u64) -> Vec<f64> {
    normalized(&raw_vector(token, seed)).expect("hash vector is never zero")
}

/// Stub tokenization: [`tokenize`], or the whole text when that finds nothing.
pub fn stub_tokens(text: &str) -> Vec<String> {
    let toks = tokenize(text);
    if toks.is_empty() {
        vec![text.to_string()]
    } else {
        toks
    }
}

const OPENERS: [&str; 8] = [
    "Great point!",
    "Good effort.",
    "Nice work.",
    "I see what you mean.",
    "Well done!",
    "That's interesting.",
    "Let's think about that.",
    "Thanks for sharing.",
];

#[derive(Debug, Clone, Copy)]
pub struct StubBackend {
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl TextGenerator for StubBackend {
    /// Returns a templated teacher line naming the template id and attempt.
    /// The phrasing and topic word depend only on the prompt bytes and seed.
    fn generate_once(&self, request: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let seed = request.params.seed.unwrap_or(self.seed.wrapping_add(u64::from(request.attempt)));
        let inner = request.prompt.inner();
        let h = stub_hash(inner.as_bytes(), seed);

        let dialogue: Vec<String> = inner
            .lines()
            .filter_map(|l| l.strip_prefix("teacher: ").or_else(|| l.strip_prefix("student: ")))
            .flat_map(tokenize)
            .filter(|t| t.chars().count() >= 4)
            .collect();
        let pool = if dialogue.is_empty() { tokenize(inner) } else { dialogue };
        let word = pool
            .get((h >> 16) as usize % pool.len().max(1))
            .cloned()
            .unwrap_or_else(|| "english".to_string());
        let opener = OPENERS[(h % OPENERS.len() as u64) as usize];
        let body = format!(
            "{opener} Let's talk more about '{word}'. (prompt {}, attempt {})",
            request.template_id, request.attempt
        );
        Ok(match (h >> 8) % 3 {
            0 => format!("**Teacher:**\n\n\"{body}\""),
            1 => format!("Teacher: \"{body}\"\n\nExplanation: this keeps the lesson moving."),
            _ => format!("\"{body}\""),
        })
    }
}

impl TokenEncoder for StubBackend {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptyText);
        }
        let rows = stub_tokens(text)
            .iter()
            .map(|t| EmbeddingVector::new(stub_token_vector(t, self.seed)))
            .collect::<Result<Vec<_>, _>>()?;
        TokenEmbeddings::new(rows)
    }
}

impl SentenceEncoder for StubBackend {
    fn embed_sentences(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        texts
            .iter()
            .map(|text| {
                if text.is_empty() {
                    return Err(BackendError::EmptyText);
                }
                let toks = stub_tokens(text);
                let mut sum = [0.0f64; STUB_DIM];
                let bigrams = toks.windows(2).map(|w| format!("{} {}", w[0], w[1]));
                for key in toks.iter().cloned().chain(bigrams) {
                    for (s, x) in sum.iter_mut().zip(stub_token_vector(&key, self.seed)) {
                        *s += x;
                    }
                }
                let v = normalized(&sum).ok_or_else(|| BackendError::Protocol("degenerate sentence vector".into()))?;
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl LogProbScorer for StubBackend {
    fn score_logprob(
        &self,
        context: &str,
        continuation: &str,
        direction: Direction,
    ) -> Result<LogProbResult, BackendError> {
        let scored = match direction {
            Direction::Forward => continuation,
            Direction::Reverse => context,
        };
        let count = u32::try_from(tokenize(scored).len().max(1)).unwrap_or(u32::MAX);
        LogProbResult::new(-(STUB_DIM as f64).ln(), count)
    }
}
