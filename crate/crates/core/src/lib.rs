//! Teacher-response generation for educational dialogue: a five-prompt
//! ensemble against a pluggable generator, dual-encoder reranking of the
//! candidates, and reference-based evaluation.
//!
//! Scoring kernels are generic over the scalar type ([`num::Scalar`] for
//! count-based metrics, [`num::Real`] for anything with roots or logs); the
//! pipeline itself runs in `f64`. The aliases below name the common
//! instantiations.

pub mod backends;
pub mod corpus;
pub mod examples;
pub mod metrics;
pub mod num;
pub mod postprocess;
pub mod prompts;
pub mod reranker;

/// Exact rational used for count-based metrics and corpus fractions.
pub type Rational = num_rational::Ratio<i64>;

pub type Embedding = backends::EmbeddingVector<f64>;
pub type Embeddingf32 = backends::EmbeddingVector<f32>;
pub type Prf = metrics::PrfScore<f64>;
pub type Prff32 = metrics::PrfScore<f32>;
pub type ExactPrf = metrics::PrfScore<Rational>;
pub type Rouge = metrics::RougeScores<f64>;
pub type ExactRouge = metrics::RougeScores<Rational>;
pub type Bm25Params = examples::Bm25Params<f64>;
pub type Bm25Paramsf32 = examples::Bm25Params<f32>;
pub type DualScore = reranker::DualScore<f64>;
pub type MutualInfo = metrics::MutualInfoScore<f64>;

pub use corpus::{Conversation, EndingKind, Role, Split, Turn};
pub use examples::ExamplePair;
pub use reranker::{Candidate, RankedCandidate};
