//! Reference-based evaluation: ROUGE-1/2/L/Lsum, greedy token-embedding
//! matching (BERTScore without IDF weighting or baseline rescaling), and a
//! mutual-information score from forward and reverse perplexities.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{embed_tokens, score_logprob, BackendError, Direction, LogProbScorer, TokenEmbeddings, TokenEncoder};
use crate::examples::tokenize;
use crate::num::{harmonic_f1, ratio_or_zero, Real, Scalar};
use crate::reranker::{cosine, RerankError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore<T = f64> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> PrfScore<T> {
    pub fn new(precision: T, recall: T) -> Self {
        Self {
            precision,
            recall,
            f1: harmonic_f1(precision, recall),
        }
    }

    /// Precision = hits/candidate_total, recall = hits/reference_total.
    pub fn from_counts(hits: usize, candidate_total: usize, reference_total: usize) -> Self {
        Self::new(ratio_or_zero(hits, candidate_total), ratio_or_zero(hits, reference_total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores<T = f64> {
    pub rouge1: PrfScore<T>,
    pub rouge2: PrfScore<T>,
    #[serde(rename = "rougeL")]
    pub rouge_l: PrfScore<T>,
    #[serde(rename = "rougeLsum")]
    pub rouge_lsum: PrfScore<T>,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap of two token sequences.
pub fn rouge_n_tokens<T: Scalar, S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> PrfScore<T> {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let hits = cand
        .iter()
        .map(|(g, c)| refc.get(g).map_or(0, |r| (*c).min(*r)))
        .sum();
    PrfScore::from_counts(hits, cand.values().sum(), refc.values().sum())
}

pub fn rouge_n<T: Scalar>(candidate: &str, reference: &str, n: usize) -> PrfScore<T> {
    rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n)
}

fn lcs_table<S: AsRef<str>>(a: &[S], b: &[S]) -> Vec<Vec<usize>> {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1].as_ref() == b[j - 1].as_ref() {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

pub fn rouge_l_tokens<T: Scalar, S: AsRef<str>>(candidate: &[S], reference: &[S]) -> PrfScore<T> {
    PrfScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l<T: Scalar>(candidate: &str, reference: &str) -> PrfScore<T> {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// Positions in `reference` that take part in one LCS with `candidate`.
fn lcs_positions<S: AsRef<str>>(reference: &[S], candidate: &[S]) -> Vec<usize> {
    let t = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1].as_ref() == candidate[j - 1].as_ref() {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if t[i][j - 1] > t[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    out.reverse();
    out
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    text.split('\n').map(tokenize).filter(|s| !s.is_empty()).collect()
}

/// Summary-level LCS: newline-separated sentences, union of LCS matches per
/// reference sentence, each token counted at most as often as it occurs on
/// both sides.
pub fn rouge_lsum<T: Scalar>(candidate: &str, reference: &str) -> PrfScore<T> {
    let cand = sentences(candidate);
    let refs = sentences(reference);
    let cand_total: usize = cand.iter().map(Vec::len).sum();
    let ref_total: usize = refs.iter().map(Vec::len).sum();

    let mut cand_left: HashMap<&str, usize> = HashMap::new();
    for t in cand.iter().flatten() {
        *cand_left.entry(t).or_insert(0) += 1;
    }
    let mut ref_left: HashMap<&str, usize> = HashMap::new();
    for t in refs.iter().flatten() {
        *ref_left.entry(t).or_insert(0) += 1;
    }

    let mut hits = 0;
    for r in &refs {
        let mut union: Vec<usize> = cand.iter().flat_map(|c| lcs_positions(r, c)).collect();
        union.sort_unstable();
        union.dedup();
        for pos in union {
            let tok = r[pos].as_str();
            let (Some(cl), Some(rl)) = (cand_left.get(tok).copied(), ref_left.get(tok).copied()) else {
                continue;
            };
            if cl > 0 && rl > 0 {
                hits += 1;
                cand_left.insert(tok, cl - 1);
                ref_left.insert(tok, rl - 1);
            }
        }
    }
    PrfScore::from_counts(hits, cand_total, ref_total)
}

pub fn rouge_all<T: Scalar>(candidate: &str, reference: &str) -> RougeScores<T> {
    RougeScores {
        rouge1: rouge_n(candidate, reference, 1),
        rouge2: rouge_n(candidate, reference, 2),
        rouge_l: rouge_l(candidate, reference),
        rouge_lsum: rouge_lsum(candidate, reference),
    }
}

/// Raw greedy-matching scores in `[-1, 1]`.
pub type BertScoreResult<T = f64> = PrfScore<T>;

/// Greedy max-cosine matching between two token-embedding sequences.
pub fn greedy_match<T: Real>(
    candidate: &TokenEmbeddings<T>,
    reference: &TokenEmbeddings<T>,
) -> Result<BertScoreResult<T>, RerankError> {
    let c = candidate.rows();
    let r = reference.rows();
    let mut sim = vec![vec![T::zero(); r.len()]; c.len()];
    for (i, cv) in c.iter().enumerate() {
        for (j, rv) in r.iter().enumerate() {
            sim[i][j] = cosine(cv.as_slice(), rv.as_slice())?;
        }
    }
    let max_of = |it: &mut dyn Iterator<Item = T>| it.fold(-T::infinity(), T::max);
    let precision = c
        .iter()
        .enumerate()
        .map(|(i, _)| max_of(&mut sim[i].iter().copied()))
        .fold(T::zero(), |a, b| a + b)
        / T::from_count(c.len());
    let recall = (0..r.len())
        .map(|j| max_of(&mut sim.iter().map(|row| row[j])))
        .fold(T::zero(), |a, b| a + b)
        / T::from_count(r.len());
    Ok(PrfScore::new(precision, recall))
}

pub fn bertscore(
    candidate: &str,
    reference: &str,
    provider: &dyn TokenEncoder,
) -> Result<BertScoreResult, RerankError> {
    let c = embed_tokens(provider, candidate)?;
    let r = embed_tokens(provider, reference)?;
    greedy_match(&c, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInfoScore<T = f64> {
    /// `-(ln forward_ppl + ln reverse_ppl) / 2`; higher means more mutually predictive.
    pub value: T,
    pub forward_ppl: T,
    pub reverse_ppl: T,
}

impl<T: Real> MutualInfoScore<T> {
    pub fn from_perplexities(forward_ppl: T, reverse_ppl: T) -> Self {
        let two = T::one() + T::one();
        Self {
            value: -(forward_ppl.ln() + reverse_ppl.ln()) / two,
            forward_ppl,
            reverse_ppl,
        }
    }

    /// From average per-token log-probabilities, avoiding an exp/ln round trip.
    pub fn from_logprobs(forward_avg: T, reverse_avg: T) -> Self {
        let two = T::one() + T::one();
        Self {
            value: (forward_avg + reverse_avg) / two,
            forward_ppl: (-forward_avg).exp(),
            reverse_ppl: (-reverse_avg).exp(),
        }
    }
}

pub fn mutual_info(
    context: &str,
    response: &str,
    scorer: &dyn LogProbScorer,
) -> Result<MutualInfoScore, BackendError> {
    let fwd = score_logprob(scorer, context, response, Direction::Forward)?;
    let rev = score_logprob(scorer, context, response, Direction::Reverse)?;
    Ok(MutualInfoScore::from_logprobs(fwd.avg_token_logprob, rev.avg_token_logprob))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowScores {
    pub rouge: RougeScores,
    pub bertscore: BertScoreResult,
    pub mi: MutualInfoScore,
}

/// `(metric, component)` names in the order [`RowScores::components`] uses.
pub const COMPONENT_NAMES: [(&str, &str); 18] = [
    ("rouge1", "precision"),
    ("rouge1", "recall"),
    ("rouge1", "f1"),
    ("rouge2", "precision"),
    ("rouge2", "recall"),
    ("rouge2", "f1"),
    ("rougeL", "precision"),
    ("rougeL", "recall"),
    ("rougeL", "f1"),
    ("rougeLsum", "precision"),
    ("rougeLsum", "recall"),
    ("rougeLsum", "f1"),
    ("bertscore", "precision"),
    ("bertscore", "recall"),
    ("bertscore", "f1"),
    ("mi", "value"),
    ("mi", "forward_ppl"),
    ("mi", "reverse_ppl"),
];

impl RowScores {
    /// `(metric, component, value)` triples in [`COMPONENT_NAMES`] order.
    pub fn components(&self) -> Vec<(&'static str, &'static str, f64)> {
        let values = [
            self.rouge.rouge1.precision,
            self.rouge.rouge1.recall,
            self.rouge.rouge1.f1,
            self.rouge.rouge2.precision,
            self.rouge.rouge2.recall,
            self.rouge.rouge2.f1,
            self.rouge.rouge_l.precision,
            self.rouge.rouge_l.recall,
            self.rouge.rouge_l.f1,
            self.rouge.rouge_lsum.precision,
            self.rouge.rouge_lsum.recall,
            self.rouge.rouge_lsum.f1,
            self.bertscore.precision,
            self.bertscore.recall,
            self.bertscore.f1,
            self.mi.value,
            self.mi.forward_ppl,
            self.mi.reverse_ppl,
        ];
        COMPONENT_NAMES
            .iter()
            .zip(values)
            .map(|(&(m, c), v)| (m, c, v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RowOutcome {
    Ok(RowScores),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub conversation_id: String,
    #[serde(flatten)]
    pub outcome: RowOutcome,
}

impl EvalRow {
    pub fn scores(&self) -> Option<&RowScores> {
        match &self.outcome {
            RowOutcome::Ok(s) => Some(s),
            RowOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Means over scored rows; absent when every row failed.
    pub aggregate: Option<RowScores>,
    pub scored_count: usize,
    pub failed_count: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Arithmetic means of every component over non-failed rows.
pub fn aggregate(rows: Vec<EvalRow>) -> EvalReport {
    let scored: Vec<&RowScores> = rows.iter().filter_map(EvalRow::scores).collect();
    let failed_count = rows.len() - scored.len();
    let aggregate = (!scored.is_empty()).then(|| {
        let prf = |f: &dyn Fn(&RowScores) -> PrfScore| PrfScore {
            precision: mean(scored.iter().map(|s| f(s).precision)),
            recall: mean(scored.iter().map(|s| f(s).recall)),
            f1: mean(scored.iter().map(|s| f(s).f1)),
        };
        RowScores {
            rouge: RougeScores {
                rouge1: prf(&|s| s.rouge.rouge1),
                rouge2: prf(&|s| s.rouge.rouge2),
                rouge_l: prf(&|s| s.rouge.rouge_l),
                rouge_lsum: prf(&|s| s.rouge.rouge_lsum),
            },
            bertscore: prf(&|s| s.bertscore),
            mi: MutualInfoScore {
                value: mean(scored.iter().map(|s| s.mi.value)),
                forward_ppl: mean(scored.iter().map(|s| s.mi.forward_ppl)),
                reverse_ppl: mean(scored.iter().map(|s| s.mi.reverse_ppl)),
            },
        }
    });
    let scored_count = scored.len();
    EvalReport {
        rows,
        aggregate,
        scored_count,
        failed_count,
    }
}
