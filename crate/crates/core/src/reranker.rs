//! Dual-encoder reranking.
//!
//! Each candidate is compared to the conversation context twice: once with
//! sentence-level embeddings and once with mean-pooled token embeddings. The
//! two cosine similarities are averaged and candidates are sorted by that
//! combined score, highest first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{embed_sentence, embed_tokens, BackendError, EmbeddingVector, SentenceEncoder, TokenEmbeddings, TokenEncoder};
use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("degenerate embedding (zero norm)")]
    DegenerateEmbedding,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no token embeddings to pool")]
    EmptyTokens,
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("reranker weight must be in [0, 1], got {0}")]
    InvalidWeight(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Component-wise mean over the token axis.
pub fn mean_pool<T: Real>(tokens: &TokenEmbeddings<T>) -> Result<EmbeddingVector<T>, RerankError> {
    let rows = tokens.rows();
    let first = rows.first().ok_or(RerankError::EmptyTokens)?;
    let mut acc = vec![T::zero(); first.dim()];
    for row in rows {
        for (a, x) in acc.iter_mut().zip(row.as_slice()) {
            *a = *a + *x;
        }
    }
    let n = T::from_count(rows.len());
    let mean = acc.into_iter().map(|a| a / n).collect();
    Ok(EmbeddingVector::new(mean)?)
}

/// `a·b / (|a||b|)`, clamped to `[-1, 1]`.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<T, RerankError> {
    if a.len() != b.len() {
        return Err(RerankError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if !denom.is_finite() || denom <= T::zero() {
        return Err(RerankError::DegenerateEmbedding);
    }
    Ok((dot / denom).max(-T::one()).min(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualScore<T = f64> {
    pub sentence_sim: T,
    pub token_sim: T,
    pub combined: T,
}

impl<T: Real> DualScore<T> {
    /// Plain average of the two similarities.
    pub fn averaged(sentence_sim: T, token_sim: T) -> Self {
        let two = T::one() + T::one();
        Self {
            sentence_sim,
            token_sim,
            combined: (sentence_sim + token_sim) / two,
        }
    }

    /// `weight * sentence_sim + (1 - weight) * token_sim`; 0.5 is the plain average.
    pub fn weighted(sentence_sim: T, token_sim: T, weight: T) -> Self {
        if weight == T::from_f64_lossy(0.5) {
            return Self::averaged(sentence_sim, token_sim);
        }
        let combined = weight * sentence_sim + (T::one() - weight) * token_sim;
        Self {
            sentence_sim,
            token_sim,
            combined: combined.max(-T::one()).min(T::one()),
        }
    }
}

/// Stable descending order of `scores`: ties keep their input order.
pub fn descending_order<T: Real>(scores: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// One generated response and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub template_id: u8,
    pub attempt: u32,
    pub raw: String,
    /// Cleaned text; this is what gets scored.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate<T = f64> {
    pub candidate: Candidate,
    pub score: DualScore<T>,
    /// 1-based; rank 1 is the final response.
    pub rank: usize,
}

/// Sorts scored items into a ranking.
pub fn rank_scored<T: Real>(scored: Vec<(Candidate, DualScore<T>)>) -> Vec<RankedCandidate<T>> {
    let combined: Vec<T> = scored.iter().map(|(_, s)| s.combined).collect();
    let order = descending_order(&combined);
    let mut slots: Vec<Option<(Candidate, DualScore<T>)>> = scored.into_iter().map(Some).collect();
    order
        .into_iter()
        .enumerate()
        .map(|(r, i)| {
            let (candidate, score) = slots[i].take().expect("permutation visits each index once");
            RankedCandidate {
                candidate,
                score,
                rank: r + 1,
            }
        })
        .collect()
}

/// Both embeddings of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEmbedding {
    pub sentence: EmbeddingVector,
    pub pooled_tokens: EmbeddingVector,
}

impl DualEmbedding {
    pub fn score_against(&self, context: &DualEmbedding, weight: f64) -> Result<DualScore, RerankError> {
        let s = cosine(context.sentence.as_slice(), self.sentence.as_slice())?;
        let t = cosine(context.pooled_tokens.as_slice(), self.pooled_tokens.as_slice())?;
        Ok(DualScore::weighted(s, t, weight))
    }
}

/// A ranking together with the embeddings behind it.
#[derive(Debug, Clone)]
pub struct RankingDetail {
    pub ranked: Vec<RankedCandidate>,
    pub context: DualEmbedding,
    /// In input candidate order.
    pub candidates: Vec<DualEmbedding>,
}

pub struct Reranker<'a> {
    sentence: &'a dyn SentenceEncoder,
    tokens: &'a dyn TokenEncoder,
    weight: f64,
}

impl<'a> Reranker<'a> {
    pub fn new(sentence: &'a dyn SentenceEncoder, tokens: &'a dyn TokenEncoder) -> Self {
        Self {
            sentence,
            tokens,
            weight: 0.5,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self, RerankError> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(RerankError::InvalidWeight(weight));
        }
        self.weight = weight;
        Ok(self)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<DualEmbedding>, RerankError> {
        let sentences = embed_sentence(self.sentence, texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for (text, sentence) in texts.iter().zip(sentences) {
            let pooled_tokens = mean_pool(&embed_tokens(self.tokens, text)?)?;
            out.push(DualEmbedding { sentence, pooled_tokens });
        }
        if let [first, rest @ ..] = out.as_slice() {
            for e in rest {
                if e.pooled_tokens.dim() != first.pooled_tokens.dim() {
                    return Err(BackendError::DimensionMismatch {
                        expected: first.pooled_tokens.dim(),
                        got: e.pooled_tokens.dim(),
                    }
                    .into());
                }
            }
        }
        Ok(out)
    }

    pub fn dual_score(&self, context: &str, candidate: &str) -> Result<DualScore, RerankError> {
        let e = self.embed_batch(&[context, candidate])?;
        e[1].score_against(&e[0], self.weight)
    }

    pub fn rank(&self, context: &str, candidates: Vec<Candidate>) -> Result<Vec<RankedCandidate>, RerankError> {
        Ok(self.rank_detailed(context, candidates)?.ranked)
    }

    /// Scores every candidate; any failure fails the whole ranking.
    pub fn rank_detailed(&self, context: &str, candidates: Vec<Candidate>) -> Result<RankingDetail, RerankError> {
        if candidates.is_empty() {
            return Err(RerankError::NoCandidates);
        }
        let mut texts: Vec<&str> = vec![context];
        texts.extend(candidates.iter().map(|c| c.text.as_str()));
        let mut embeddings = self.embed_batch(&texts)?;
        let context_emb = embeddings.remove(0);
        let scored = candidates
            .into_iter()
            .zip(&embeddings)
            .map(|(c, e)| Ok((c, e.score_against(&context_emb, self.weight)?)))
            .collect::<Result<Vec<_>, RerankError>>()?;
        Ok(RankingDetail {
            ranked: rank_scored(scored),
            context: context_emb,
            candidates: embeddings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::StubBackend;
    use proptest::prelude::*;

    fn tokens(rows: &[&[f64]]) -> TokenEmbeddings {
        TokenEmbeddings::new(rows.iter().map(|r| EmbeddingVector::new(r.to_vec()).unwrap()).collect()).unwrap()
    }

    fn cand(i: u32, text: &str) -> Candidate {
        Candidate {
            template_id: 1,
            attempt: i,
            raw: text.into(),
            text: text.into(),
        }
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool(&tokens(&[&[3.0, -1.0]])).unwrap().as_slice(), [3.0, -1.0]);
        assert_eq!(mean_pool(&tokens(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap().as_slice(), [0.5, 0.5]);
        assert_eq!(
            mean_pool(&tokens(&[&[2.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]])).unwrap().as_slice(),
            [1.0, 1.0]
        );
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(RerankError::DegenerateEmbedding));
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(RerankError::DimensionMismatch(1, 2)));
        assert!((cosine(&[1.0f32, 1.0], &[1.0, 0.0]).unwrap() - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn score_combination() {
        assert_eq!(DualScore::averaged(0.4, 0.4).combined, 0.4);
        assert!((DualScore::averaged(0.9f64, 0.5).combined - 0.7).abs() < 1e-15);
        assert_eq!(DualScore::weighted(0.9, 0.5, 1.0).combined, 0.9);
        assert_eq!(DualScore::weighted(0.9, 0.5, 0.5), DualScore::averaged(0.9, 0.5));
    }

    #[test]
    fn ranking_contract() {
        let one = rank_scored(vec![(cand(0, "a"), DualScore::averaged(0.1, 0.1))]);
        assert_eq!(one[0].rank, 1);

        let two = rank_scored(vec![
            (cand(0, "lo"), DualScore::averaged(0.3, 0.3)),
            (cand(1, "hi"), DualScore::averaged(0.8, 0.8)),
        ]);
        assert_eq!(two[0].candidate.text, "hi");
        assert_eq!(two[1].rank, 2);

        let tie = rank_scored(vec![
            (cand(0, "first"), DualScore::averaged(0.5, 0.5)),
            (cand(1, "second"), DualScore::averaged(0.5, 0.5)),
        ]);
        assert_eq!(tie[0].candidate.text, "first");
    }

    #[test]
    fn stub_ranking() {
        let stub = StubBackend::new(1);
        let r = Reranker::new(&stub, &stub);
        assert_eq!(r.rank("ctx", vec![]), Err(RerankError::NoCandidates));
        let ranked = r
            .rank(
                "teacher: let's practice prepositions",
                vec![cand(0, "the weather"), cand(1, "practice prepositions now"), cand(2, "hello")],
            )
            .unwrap();
        assert_eq!(ranked.len(), 3);
        assert_eq!(ranked[0].candidate.text, "practice prepositions now");
        for w in ranked.windows(2) {
            assert!(w[0].score.combined >= w[1].score.combined);
        }
        let again = r
            .rank(
                "teacher: let's practice prepositions",
                vec![cand(0, "the weather"), cand(1, "practice prepositions now"), cand(2, "hello")],
            )
            .unwrap();
        assert_eq!(ranked, again);
        assert!(Reranker::new(&stub, &stub).with_weight(1.5).is_err());
    }

    proptest! {
        #[test]
        fn combined_is_monotone(s in -1.0f64..1.0, t in -1.0f64..1.0, d in 1e-6f64..0.5, w in 0.01f64..0.99) {
            let base = DualScore::weighted(s, t, w).combined;
            prop_assert!(DualScore::weighted((s + d).min(1.0), t, w).combined >= base);
            prop_assert!(DualScore::weighted(s, t + d, w).combined > base || t + d > 1.0);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
