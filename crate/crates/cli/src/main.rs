use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use cikmar_cli::config::{BackendKind, RunConfig};
use cikmar_cli::ingest::ingest;
use cikmar_cli::report::{report, ReportFormat, DEFAULT_BINS};
use cikmar_cli::{evaluate, pipeline, CliError};
use cikmar_core::postprocess::{clean_with, CleanOptions};
use cikmar_core::Split;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use toml::Value;

#[derive(Parser)]
#[command(name = "cikmar", version, about = "Prompt-ensemble teacher response generation with dual-encoder reranking")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate corpora and print statistics as JSON.
    Ingest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Generate, clean and rerank candidates for every conversation of a split.
    Run(ConfigArgs),
    /// Score final responses against reference responses.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory; defaults to the configured output directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Corpus holding references; defaults to the configured split's corpus.
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Write CSV tables or MI histogram data from an evaluation report.
    Report {
        /// Report file, its eval directory, or the run directory.
        eval: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        /// Output directory; defaults to `reports/` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Apply response cleanup to text from the argument or stdin.
    CleanText {
        text: Option<String>,
        #[arg(long)]
        strip_trailing_quote: bool,
        #[arg(long)]
        curly_quotes: bool,
        /// Print the result and the steps applied as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// Flags mirroring configuration keys; each overrides file and environment.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    #[arg(long)]
    dev_corpus: Option<PathBuf>,
    #[arg(long)]
    test_corpus: Option<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    generate_url: Option<String>,
    #[arg(long)]
    embed_sentence_url: Option<String>,
    #[arg(long)]
    embed_token_url: Option<String>,
    #[arg(long)]
    logprob_forward_url: Option<String>,
    #[arg(long)]
    logprob_reverse_url: Option<String>,
    #[arg(long)]
    bearer_token: Option<String>,
    #[arg(long)]
    retry_limit: Option<u32>,
    #[arg(long)]
    retry_backoff_ms: Option<u64>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    no_repeat_ngram: Option<u32>,
    #[arg(long)]
    sampling: Option<bool>,
    #[arg(long)]
    attempts: Option<u32>,
    #[arg(long)]
    bm25_k1: Option<f64>,
    #[arg(long)]
    bm25_b: Option<f64>,
    #[arg(long)]
    iterative_examples: bool,
    #[arg(long)]
    example_pool: Option<PathBuf>,
    #[arg(long = "prompts")]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    rerank_weight: Option<f64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    strip_trailing_quote: bool,
    #[arg(long)]
    curly_quotes: bool,
    #[arg(long)]
    dump_embeddings: Option<PathBuf>,
    #[arg(long)]
    timestamps: bool,
}

fn value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    Value::try_from(v).map_err(|e| CliError::Config(e.to_string()))
}

macro_rules! overrides {
    ($args:ident, $out:ident; opt: $($o:ident),*; flag: $($f:ident),*) => {
        $(if let Some(v) = &$args.$o {
            $out.push((stringify!($o).to_string(), value(v)?));
        })*
        $(if $args.$f {
            $out.push((stringify!($f).to_string(), Value::Boolean(true)));
        })*
    };
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut out = Vec::new();
        overrides!(self, out;
            opt: backend, seed, train_corpus, dev_corpus, test_corpus, split, output_dir,
                generate_url, embed_sentence_url, embed_token_url, logprob_forward_url,
                logprob_reverse_url, bearer_token, retry_limit, retry_backoff_ms, timeout_secs,
                max_new_tokens, temperature, top_k, top_p, no_repeat_ngram, sampling, attempts,
                bm25_k1, bm25_b, example_pool, prompts_dir, rerank_weight, concurrency,
                dump_embeddings;
            flag: iterative_examples, strip_trailing_quote, curly_quotes, timestamps);
        RunConfig::load(self.config.as_deref(), std::env::vars(), out)
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Ingest { config, train, dev, test } => {
            let cfg = RunConfig::load(config.as_deref(), std::env::vars(), vec![])?;
            let inputs: Vec<(Split, PathBuf)> = [
                (Split::Train, train.or(cfg.train_corpus)),
                (Split::Dev, dev.or(cfg.dev_corpus)),
                (Split::Test, test.or(cfg.test_corpus)),
            ]
            .into_iter()
            .filter_map(|(s, p)| p.map(|p| (s, p)))
            .collect();
            if inputs.is_empty() {
                return Err(CliError::Config("no corpus given; pass --train, --dev or --test".into()));
            }
            print_json(&ingest(&inputs)?);
            Ok(0)
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let outcome = pipeline::run(&cfg)?;
            let c = outcome.manifest.counts();
            println!(
                "processed {}, skipped {}, done {}, failed {}",
                outcome.processed, outcome.skipped, c.done, c.failed
            );
            Ok(outcome.exit_code())
        }
        Command::Evaluate {
            config,
            run_dir,
            references,
        } => {
            let cfg = config.load()?;
            let run_dir = run_dir.unwrap_or_else(|| cfg.output_dir.clone());
            let references = references
                .or_else(|| cfg.corpus_for(cfg.split).map(PathBuf::from))
                .ok_or_else(|| CliError::Config("no references given".into()))?;
            let report = evaluate(&cfg, &run_dir, &references)?;
            println!("scored {}, failed {}", report.scored_count, report.failed_count);
            if let Some(agg) = &report.aggregate {
                for (m, c, v) in agg.components() {
                    println!("{m}\t{c}\t{v}");
                }
            }
            Ok(match (report.failed_count, report.scored_count) {
                (0, _) => 0,
                (_, 0) => 2,
                _ => 3,
            })
        }
        Command::Report { eval, format, out, bins } => {
            for path in report(&eval, format, out.as_deref(), bins)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::CleanText {
            text,
            strip_trailing_quote,
            curly_quotes,
            json,
        } => {
            let raw = match text {
                Some(t) => t,
                None => {
                    let mut s = String::new();
                    std::io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| CliError::io(std::path::Path::new("<stdin>"), e))?;
                    s
                }
            };
            let result = clean_with(
                &raw,
                CleanOptions {
                    strip_trailing_quote,
                    curly_quotes,
                },
            );
            if json {
                print_json(&result);
            } else {
                println!("{}", result.text);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
