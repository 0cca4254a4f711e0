//! The `run` stage: ensemble, generate, clean, rerank, persist.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use cikmar_core::backends::{generate, HttpBackend, LogProbScorer, SentenceEncoder, StubBackend, TextGenerator, TokenEncoder};
use cikmar_core::corpus::{load_corpus, Role};
use cikmar_core::examples::{select_examples_indexed, Bm25Index};
use cikmar_core::postprocess::{clean_with, CleanOptions};
use cikmar_core::prompts::{build_ensemble, format_chat, render_conversation, PromptSet};
use cikmar_core::reranker::{DualEmbedding, Reranker};
use cikmar_core::{Candidate, Conversation, EndingKind, Split};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Purpose, RunConfig};
use crate::error::CliError;
use crate::fsio;
use crate::manifest::{RunManifest, Status};

/// Every capability the pipeline needs from a backend.
pub trait Provider: TextGenerator + SentenceEncoder + TokenEncoder + LogProbScorer {}

impl<T: TextGenerator + SentenceEncoder + TokenEncoder + LogProbScorer> Provider for T {}

pub fn build_provider(config: &RunConfig) -> Result<Box<dyn Provider>, CliError> {
    Ok(match config.backend {
        BackendKind::Stub => Box::new(StubBackend::new(config.seed)),
        BackendKind::Http => Box::new(HttpBackend::new(
            config.endpoints(),
            config.retry_policy(),
            config.bearer_token.clone(),
            Duration::from_secs(config.timeout_secs),
        )?),
    })
}

pub const NOTE_POOLED: &str = "all attempts of all prompts are pooled into a single rerank";
pub const NOTE_TEMPLATE_3: &str = "prompt 3 asks about teacher versus chatbot style; its first generation is used verbatim as a candidate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub template_id: u8,
    pub attempt: u32,
    pub text: String,
    pub raw: String,
    pub sentence_sim: f64,
    pub token_sim: f64,
    pub combined: f64,
    pub rank: usize,
}

/// A generation that cleaned down to nothing and so was not ranked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discarded {
    pub template_id: u8,
    pub attempt: u32,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub conversation_id: String,
    pub candidates: Vec<RankedEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<Discarded>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub conversation_id: String,
    pub ending_kind: EndingKind,
    pub response: String,
    pub template_id: u8,
    pub attempt: u32,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingRow {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    template_id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attempt: Option<u32>,
    sentence: Vec<f64>,
    pooled_tokens: Vec<f64>,
}

impl EmbeddingRow {
    fn new(kind: &'static str, c: Option<&Candidate>, e: &DualEmbedding) -> Self {
        Self {
            kind,
            template_id: c.map(|c| c.template_id),
            attempt: c.map(|c| c.attempt),
            sentence: e.sentence.as_slice().to_vec(),
            pooled_tokens: e.pooled_tokens.as_slice().to_vec(),
        }
    }
}

struct Produced {
    ranking: RankingRecord,
    fin: FinalRecord,
    embeddings: Vec<EmbeddingRow>,
}

struct Context<'a> {
    config: &'a RunConfig,
    provider: &'a dyn Provider,
    prompts: PromptSet,
    pool: Option<(Vec<String>, Bm25Index)>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Conversations attempted in this invocation.
    pub processed: usize,
    /// Conversations already done by an earlier invocation.
    pub skipped: usize,
}

impl RunOutcome {
    /// 0 when nothing failed, 2 when everything failed, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        let c = self.manifest.counts();
        match (c.failed, c.done) {
            (0, _) => 0,
            (_, 0) => 2,
            _ => 3,
        }
    }
}

/// Teacher turns of a corpus, in file order.
pub fn teacher_turns(conversations: &[Conversation]) -> Vec<String> {
    conversations
        .iter()
        .flat_map(|c| c.turns())
        .filter(|t| t.role() == Role::Teacher)
        .map(|t| t.text().to_string())
        .collect()
}

pub fn load_prompts(config: &RunConfig) -> Result<PromptSet, CliError> {
    Ok(match &config.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::builtin(),
    })
}

pub fn run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    config.validate(Purpose::Run)?;
    let provider = build_provider(config)?;
    run_with(config, provider.as_ref())
}

/// Runs the pipeline over the configured split using `provider`.
pub fn run_with(config: &RunConfig, provider: &dyn Provider) -> Result<RunOutcome, CliError> {
    let corpus_path = config
        .corpus_for(config.split)
        .ok_or_else(|| CliError::Config(format!("no corpus configured for split `{}`", config.split)))?;
    let conversations = load_corpus(corpus_path, config.split)?;
    let prompts = load_prompts(config)?;
    let pool = if config.iterative_examples {
        let path = config
            .example_pool_path()
            .ok_or_else(|| CliError::Config("iterative_examples needs an example pool".into()))?;
        let texts = teacher_turns(&load_corpus(path, Split::Train)?);
        if texts.is_empty() {
            return Err(CliError::Config(format!("example pool {} has no teacher turns", path.display())));
        }
        let index = Bm25Index::from_texts(&texts);
        Some((texts, index))
    } else {
        None
    };

    let out = config.output_dir.as_path();
    let ids: Vec<&str> = conversations.iter().map(Conversation::id).collect();
    let snapshot = config.snapshot(prompts.version());
    let mut manifest = match RunManifest::load(out)? {
        Some(mut m) => {
            m.check_resumable(&snapshot, &ids)?;
            m.reset_failed();
            m
        }
        None => RunManifest::new(
            snapshot,
            vec![NOTE_POOLED.to_string(), NOTE_TEMPLATE_3.to_string()],
            &ids,
            config.timestamps,
        ),
    };
    manifest.save(out)?;

    let pending: Vec<usize> = manifest
        .conversations
        .iter()
        .enumerate()
        .filter(|(_, e)| e.status == Status::Pending)
        .map(|(i, _)| i)
        .collect();
    let skipped = conversations.len() - pending.len();
    info!(
        "{} conversations, {} pending, {} already done",
        conversations.len(),
        pending.len(),
        skipped
    );

    let ctx = Context {
        config,
        provider,
        prompts,
        pool,
    };
    let manifest = Mutex::new(manifest);
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<(), CliError>> = workers.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let conv = &conversations[i];
                let status = match process(&ctx, conv) {
                    Ok(produced) => {
                        persist(config, out, &produced)?;
                        Status::Done
                    }
                    Err(reason) => {
                        warn!("{}: {reason}", conv.id());
                        Status::Failed { reason }
                    }
                };
                let mut m = manifest.lock().expect("manifest lock poisoned");
                m.advance(i, status)?;
                m.save(out)
            })
            .collect()
    });
    results.into_iter().collect::<Result<(), CliError>>()?;

    Ok(RunOutcome {
        manifest: manifest.into_inner().expect("manifest lock poisoned"),
        processed: pending.len(),
        skipped,
    })
}

/// Everything for one conversation; the error string is the failure reason.
fn process(ctx: &Context<'_>, conv: &Conversation) -> Result<Produced, String> {
    let config = ctx.config;
    let examples = match &ctx.pool {
        Some((texts, index)) => Some(
            select_examples_indexed(conv, texts, index, &config.bm25_params().map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?,
        ),
        None => None,
    };
    let ensemble = build_ensemble(&ctx.prompts, conv, examples.as_ref()).map_err(|e| e.to_string())?;
    let params = config.generation_params();
    let opts = CleanOptions {
        strip_trailing_quote: config.strip_trailing_quote,
        curly_quotes: config.curly_quotes,
    };

    let mut candidates = Vec::new();
    let mut discarded = Vec::new();
    for prompt in &ensemble {
        let request = format_chat(prompt).map_err(|e| e.to_string())?;
        let raws = generate(ctx.provider, &request, prompt.template_id, &params, config.attempts, conv.id())
            .map_err(|e| format!("generation failed for prompt {}: {e}", prompt.template_id))?;
        for (attempt, raw) in (0u32..).zip(raws) {
            let text = clean_with(&raw, opts).text;
            if text.is_empty() {
                discarded.push(Discarded {
                    template_id: prompt.template_id,
                    attempt,
                    raw,
                });
            } else {
                candidates.push(Candidate {
                    template_id: prompt.template_id,
                    attempt,
                    raw,
                    text,
                });
            }
        }
    }
    if candidates.is_empty() {
        return Err("every candidate was empty after cleaning".into());
    }

    let context = render_conversation(conv);
    let reranker = Reranker::new(ctx.provider, ctx.provider)
        .with_weight(config.rerank_weight)
        .map_err(|e| e.to_string())?;
    let input = candidates.clone();
    let detail = reranker
        .rank_detailed(&context, candidates)
        .map_err(|e| format!("reranking failed: {e}"))?;

    let embeddings = if config.dump_embeddings.is_some() {
        std::iter::once(EmbeddingRow::new("context", None, &detail.context))
            .chain(
                input
                    .iter()
                    .zip(&detail.candidates)
                    .map(|(c, e)| EmbeddingRow::new("candidate", Some(c), e)),
            )
            .collect()
    } else {
        Vec::new()
    };

    let entries: Vec<RankedEntry> = detail
        .ranked
        .into_iter()
        .map(|r| RankedEntry {
            template_id: r.candidate.template_id,
            attempt: r.candidate.attempt,
            text: r.candidate.text,
            raw: r.candidate.raw,
            sentence_sim: r.score.sentence_sim,
            token_sim: r.score.token_sim,
            combined: r.score.combined,
            rank: r.rank,
        })
        .collect();
    let top = &entries[0];
    let fin = FinalRecord {
        conversation_id: conv.id().to_string(),
        ending_kind: conv.ending_kind(),
        response: top.text.clone(),
        template_id: top.template_id,
        attempt: top.attempt,
        combined: top.combined,
    };
    Ok(Produced {
        ranking: RankingRecord {
            conversation_id: conv.id().to_string(),
            candidates: entries,
            discarded,
        },
        fin,
        embeddings,
    })
}

fn persist(config: &RunConfig, out: &Path, p: &Produced) -> Result<(), CliError> {
    let id = &p.ranking.conversation_id;
    fsio::write_jsonl(&fsio::ranking_path(out, id), std::slice::from_ref(&p.ranking))?;
    fsio::write_json(&fsio::final_path(out, id), &p.fin)?;
    if let Some(dir) = &config.dump_embeddings {
        fsio::write_jsonl(&embedding_path(dir, id), &p.embeddings)?;
    }
    Ok(())
}

pub fn embedding_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{}.jsonl", fsio::file_stem(id)))
}

/// Reads the persisted ranking for one conversation.
pub fn read_ranking(out: &Path, id: &str) -> Result<RankingRecord, CliError> {
    let path = fsio::ranking_path(out, id);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let line = text
        .lines()
        .next()
        .ok_or_else(|| CliError::Manifest(format!("{} is empty", path.display())))?;
    serde_json::from_str(line).map_err(|e| CliError::json(&path, e))
}

pub fn read_final(out: &Path, id: &str) -> Result<FinalRecord, CliError> {
    fsio::read_json(&fsio::final_path(out, id))
}
