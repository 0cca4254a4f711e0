//! The `evaluate` stage: score final responses against references.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use cikmar_core::corpus::load_corpus;
use cikmar_core::metrics::{aggregate, bertscore, mutual_info, rouge_all, EvalReport, EvalRow, RowOutcome, RowScores};
use cikmar_core::prompts::render_conversation;
use cikmar_core::{Conversation, Split};
use rayon::prelude::*;

use crate::config::{Purpose, RunConfig};
use crate::error::CliError;
use crate::fsio;
use crate::manifest::{RunManifest, Status};
use crate::pipeline::{build_provider, read_final, FinalRecord, Provider};

pub const ROWS_FILE: &str = "rows.jsonl";
pub const REPORT_FILE: &str = "report.json";

pub fn eval_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("eval")
}

/// What the run left behind for each conversation, in corpus order.
enum Outcome {
    Final(Box<FinalRecord>),
    Failed(String),
}

fn collect_outputs(run_dir: &Path) -> Result<Vec<(String, Outcome)>, CliError> {
    if let Some(m) = RunManifest::load(run_dir)? {
        let mut out = Vec::with_capacity(m.conversations.len());
        for e in m.conversations {
            let outcome = match e.status {
                Status::Done => Outcome::Final(Box::new(read_final(run_dir, &e.conversation_id)?)),
                Status::Failed { reason } => Outcome::Failed(format!("run failed: {reason}")),
                Status::Pending => Outcome::Failed("not yet run".into()),
            };
            out.push((e.conversation_id, outcome));
        }
        if out.is_empty() {
            return Err(CliError::NoRunOutputs(run_dir.to_path_buf()));
        }
        return Ok(out);
    }

    // No manifest: fall back to whatever finals exist, by file name.
    let finals = run_dir.join("finals");
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&finals) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if paths.is_empty() {
        return Err(CliError::NoRunOutputs(run_dir.to_path_buf()));
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let f: FinalRecord = fsio::read_json(&p)?;
            Ok((f.conversation_id.clone(), Outcome::Final(Box::new(f))))
        })
        .collect()
}

fn score_row(response: &str, reference: &Conversation, provider: &dyn Provider) -> Result<RowScores, String> {
    let gold = reference.reference().ok_or("no reference")?;
    if response.is_empty() {
        return Err("empty response".into());
    }
    let bert = bertscore(response, gold, provider).map_err(|e| format!("bertscore: {e}"))?;
    let mi = mutual_info(&render_conversation(reference), response, provider).map_err(|e| format!("mutual information: {e}"))?;
    Ok(RowScores {
        rouge: rouge_all(response, gold),
        bertscore: bert,
        mi,
    })
}

pub fn evaluate(config: &RunConfig, run_dir: &Path, references: &Path) -> Result<EvalReport, CliError> {
    config.validate(Purpose::Evaluate)?;
    let provider = build_provider(config)?;
    evaluate_with(run_dir, references, provider.as_ref(), config.concurrency)
}

/// Scores a run directory and writes `eval/rows.jsonl` and `eval/report.json`.
pub fn evaluate_with(
    run_dir: &Path,
    references: &Path,
    provider: &dyn Provider,
    concurrency: usize,
) -> Result<EvalReport, CliError> {
    let outputs = collect_outputs(run_dir)?;
    let refs: HashMap<String, Conversation> = load_corpus(references, Split::Test)?
        .into_iter()
        .map(|c| (c.id().to_string(), c))
        .collect();

    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let rows: Vec<EvalRow> = workers.install(|| {
        outputs
            .par_iter()
            .map(|(id, outcome)| {
                let result = match (outcome, refs.get(id)) {
                    (Outcome::Failed(reason), _) => Err(reason.clone()),
                    (Outcome::Final(_), None) => Err("no reference".to_string()),
                    (Outcome::Final(f), Some(conv)) => score_row(&f.response, conv, provider),
                };
                EvalRow {
                    conversation_id: id.clone(),
                    outcome: match result {
                        Ok(s) => RowOutcome::Ok(s),
                        Err(reason) => RowOutcome::Failed { reason },
                    },
                }
            })
            .collect()
    });

    let report = aggregate(rows);
    let dir = eval_dir(run_dir);
    fsio::write_jsonl(&dir.join(ROWS_FILE), &report.rows)?;
    fsio::write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}
