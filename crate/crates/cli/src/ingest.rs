//! The `ingest` stage: validate corpora and summarize them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use cikmar_core::corpus::{corpus_stats, load_corpus, CorpusStats};
use cikmar_core::{Conversation, Split};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    #[serde(flatten)]
    pub stats: CorpusStats,
    pub continuation_fraction_decimal: f64,
}

impl From<CorpusStats> for SplitSummary {
    fn from(stats: CorpusStats) -> Self {
        let continuation_fraction_decimal = stats.continuation_fraction_f64();
        Self {
            stats,
            continuation_fraction_decimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub splits: BTreeMap<Split, SplitSummary>,
    pub total: SplitSummary,
}

pub fn ingest(inputs: &[(Split, PathBuf)]) -> Result<IngestSummary, CliError> {
    let mut all: Vec<Conversation> = Vec::new();
    let mut splits: BTreeMap<Split, SplitSummary> = BTreeMap::new();
    for (split, path) in inputs {
        let convs = load_corpus(path, *split)?;
        let mut stats = corpus_stats(&convs);
        stats.per_split.insert(*split, convs.len());
        splits.insert(*split, stats.into());
        all.extend(convs);
    }
    let mut total = corpus_stats(&all);
    for (split, s) in &splits {
        total.per_split.insert(*split, s.stats.conversation_count);
    }
    Ok(IngestSummary {
        splits,
        total: total.into(),
    })
}
