//! BM25 lexical ranking used to choose few-shot examples.
//!
//! Given a conversation history and a pool of candidate teacher responses, the
//! pool entry with the highest BM25 score becomes the positive example and the
//! one with the lowest score the negative example.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Conversation;
use crate::num::Real;

#[derive(Debug, Error, PartialEq)]
pub enum Bm25Error {
    #[error("example pool empty")]
    EmptyPool,
    #[error("document {doc_id} out of range (index holds {len})")]
    DocOutOfRange { doc_id: usize, len: usize },
    #[error("invalid BM25 parameters: k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
}

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params<T = f64> {
    pub k1: T,
    pub b: T,
}

impl<T: Real> Bm25Params<T> {
    pub fn new(k1: T, b: T) -> Result<Self, Bm25Error> {
        let ok = k1 >= T::zero() && b >= T::zero() && b <= T::one() && k1.is_finite();
        if ok {
            Ok(Self { k1, b })
        } else {
            Err(Bm25Error::InvalidParams {
                k1: k1.to_f64().unwrap_or(f64::NAN),
                b: b.to_f64().unwrap_or(f64::NAN),
            })
        }
    }
}

impl<T: Real> Default for Bm25Params<T> {
    fn default() -> Self {
        Self {
            k1: T::from_f64_lossy(1.2),
            b: T::from_f64_lossy(0.75),
        }
    }
}

/// Term statistics over a fixed document collection.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    term_freqs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    total_len: usize,
}

impl Bm25Index {
    /// Builds an index from raw texts, tokenized with [`tokenize`].
    pub fn from_texts<S: AsRef<str>>(docs: &[S]) -> Self {
        Self::from_tokens(docs.iter().map(|d| tokenize(d.as_ref())))
    }

    pub fn from_tokens<I, D, S>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = Self::default();
        for doc in docs {
            let mut tf: HashMap<String, usize> = HashMap::new();
            let mut len = 0;
            for tok in doc {
                *tf.entry(tok.into()).or_insert(0) += 1;
                len += 1;
            }
            for term in tf.keys() {
                *index.doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            index.total_len += len;
            index.lengths.push(len);
            index.term_freqs.push(tf);
        }
        index
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn doc_len(&self, doc_id: usize) -> Option<usize> {
        self.lengths.get(doc_id).copied()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn term_freq(&self, doc_id: usize, term: &str) -> usize {
        self.term_freqs
            .get(doc_id)
            .and_then(|tf| tf.get(term))
            .copied()
            .unwrap_or(0)
    }

    pub fn avg_doc_len<T: Real>(&self) -> T {
        if self.is_empty() {
            T::zero()
        } else {
            T::from_count(self.total_len) / T::from_count(self.len())
        }
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf<T: Real>(&self, term: &str) -> T {
        let half = T::from_f64_lossy(0.5);
        let n = T::from_count(self.len());
        let df = T::from_count(self.doc_freq(term));
        (T::one() + (n - df + half) / (df + half)).ln()
    }
}

/// Okapi BM25 score of one indexed document for a tokenized query.
///
/// Repeated query terms contribute once per occurrence.
pub fn bm25_score<T: Real, S: AsRef<str>>(
    query: &[S],
    doc_id: usize,
    index: &Bm25Index,
    params: &Bm25Params<T>,
) -> Result<T, Bm25Error> {
    let len = index.doc_len(doc_id).ok_or(Bm25Error::DocOutOfRange {
        doc_id,
        len: index.len(),
    })?;
    let avg: T = index.avg_doc_len();
    let mut score = T::zero();
    for term in query {
        let tf = index.term_freq(doc_id, term.as_ref());
        if tf == 0 {
            continue;
        }
        // tf > 0 implies len > 0, so avg > 0.
        let tf = T::from_count(tf);
        let norm = params.k1 * (T::one() - params.b + params.b * T::from_count(len) / avg);
        score = score + index.idf::<T>(term.as_ref()) * tf * (params.k1 + T::one()) / (tf + norm);
    }
    Ok(score)
}

/// Scores every document in the index.
pub fn bm25_scores<T: Real, S: AsRef<str>>(
    query: &[S],
    index: &Bm25Index,
    params: &Bm25Params<T>,
) -> Vec<T> {
    (0..index.len())
        .map(|d| bm25_score(query, d, index, params).expect("doc id in range"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub positive: String,
    pub negative: String,
}

/// Query text for example selection: all turn texts of the history.
pub fn history_query(history: &Conversation) -> Vec<String> {
    history
        .turns()
        .iter()
        .flat_map(|t| tokenize(t.text()))
        .collect()
}

/// Picks the best and worst BM25 matches for `history` from `pool`.
///
/// Ties go to the lowest pool index for both ends.
pub fn select_examples<T: Real, S: AsRef<str>>(
    history: &Conversation,
    pool: &[S],
    params: &Bm25Params<T>,
) -> Result<ExamplePair, Bm25Error> {
    select_examples_indexed(history, pool, &Bm25Index::from_texts(pool), params)
}

/// As [`select_examples`], reusing an index already built over `pool`.
pub fn select_examples_indexed<T: Real, S: AsRef<str>>(
    history: &Conversation,
    pool: &[S],
    index: &Bm25Index,
    params: &Bm25Params<T>,
) -> Result<ExamplePair, Bm25Error> {
    if pool.is_empty() {
        return Err(Bm25Error::EmptyPool);
    }
    if index.len() != pool.len() {
        return Err(Bm25Error::DocOutOfRange {
            doc_id: pool.len() - 1,
            len: index.len(),
        });
    }
    let query = history_query(history);
    let scores = bm25_scores(&query, index, params);
    let mut best = 0;
    let mut worst = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
        if *s < scores[worst] {
            worst = i;
        }
    }
    Ok(ExamplePair {
        positive: pool[best].as_ref().to_string(),
        negative: pool[worst].as_ref().to_string(),
    })
}
