//! Run configuration: a flat TOML file, `CIKMAR_*` environment overrides,
//! then command-line flags, in increasing precedence.

use std::path::{Path, PathBuf};
use std::time::Duration;

use cikmar_core::backends::{Endpoints, GenerationParams, RetryPolicy};
use cikmar_core::{Bm25Params, Split};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "CIKMAR_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub seed: u64,

    pub train_corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    /// Which split `run` processes.
    pub split: Split,
    pub output_dir: PathBuf,

    pub generate_url: Option<String>,
    pub embed_sentence_url: Option<String>,
    pub embed_token_url: Option<String>,
    pub logprob_forward_url: Option<String>,
    pub logprob_reverse_url: Option<String>,
    pub bearer_token: Option<String>,
    pub retry_limit: u32,
    pub retry_backoff_ms: u64,
    pub timeout_secs: u64,

    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub no_repeat_ngram: u32,
    pub sampling: bool,
    pub attempts: u32,

    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub iterative_examples: bool,
    /// Corpus whose teacher turns form the example pool; defaults to `train_corpus`.
    pub example_pool: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,

    pub rerank_weight: f64,
    pub concurrency: usize,
    pub strip_trailing_quote: bool,
    pub curly_quotes: bool,
    pub dump_embeddings: Option<PathBuf>,
    /// Record wall-clock times in the manifest. Off by default so reruns are byte-identical.
    pub timestamps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GenerationParams::default();
        let bm25 = Bm25Params::default();
        let retry = RetryPolicy::default();
        Self {
            backend: BackendKind::Stub,
            seed: 0,
            train_corpus: None,
            dev_corpus: None,
            test_corpus: None,
            split: Split::Test,
            output_dir: PathBuf::from("out"),
            generate_url: None,
            embed_sentence_url: None,
            embed_token_url: None,
            logprob_forward_url: None,
            logprob_reverse_url: None,
            bearer_token: None,
            retry_limit: retry.max_retries,
            retry_backoff_ms: retry.initial_backoff.as_millis() as u64,
            timeout_secs: 120,
            max_new_tokens: g.max_new_tokens,
            temperature: g.temperature,
            top_k: g.top_k,
            top_p: g.top_p,
            no_repeat_ngram: g.no_repeat_ngram,
            sampling: g.sampling,
            attempts: 3,
            bm25_k1: bm25.k1,
            bm25_b: bm25.b,
            iterative_examples: false,
            example_pool: None,
            prompts_dir: None,
            rerank_weight: 0.5,
            concurrency: 4,
            strip_trailing_quote: false,
            curly_quotes: false,
            dump_embeddings: None,
            timestamps: false,
        }
    }
}

/// Keys whose values are always strings, even when they look numeric.
const STRING_KEYS: &[&str] = &[
    "backend",
    "train_corpus",
    "dev_corpus",
    "test_corpus",
    "split",
    "output_dir",
    "generate_url",
    "embed_sentence_url",
    "embed_token_url",
    "logprob_forward_url",
    "logprob_reverse_url",
    "bearer_token",
    "example_pool",
    "prompts_dir",
    "dump_embeddings",
];

const PATH_KEYS: &[&str] = &[
    "train_corpus",
    "dev_corpus",
    "test_corpus",
    "output_dir",
    "example_pool",
    "prompts_dir",
    "dump_embeddings",
];

/// What the configuration is about to be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Run,
    Evaluate,
}

/// Parses an override string into a TOML value of the right shape for `key`.
pub fn override_value(key: &str, raw: &str) -> Value {
    if STRING_KEYS.contains(&key) {
        return Value::String(raw.to_string());
    }
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Layers file, environment and flags. Relative paths in the file are
    /// resolved against the file's directory; others against the working
    /// directory.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: Vec<(String, Value)>,
    ) -> Result<Self, CliError> {
        let mut table = Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            table = text
                .parse::<Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            for key in PATH_KEYS {
                if let Some(Value::String(p)) = table.get_mut(*key) {
                    if Path::new(p.as_str()).is_relative() {
                        *p = base.join(&*p).to_string_lossy().into_owned();
                    }
                }
            }
        }
        for (name, raw) in env {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                let value = override_value(&key, &raw);
                table.insert(key, value);
            }
        }
        for (key, value) in flags {
            table.insert(key, value);
        }
        Table::try_into(table).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn corpus_for(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => self.train_corpus.as_deref(),
            Split::Dev => self.dev_corpus.as_deref(),
            Split::Test => self.test_corpus.as_deref(),
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            no_repeat_ngram: self.no_repeat_ngram,
            sampling: self.sampling,
            seed: Some(self.seed),
        }
    }

    pub fn bm25_params(&self) -> Result<Bm25Params, CliError> {
        Bm25Params::new(self.bm25_k1, self.bm25_b).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn endpoints(&self) -> Endpoints {
        Endpoints {
            generate_url: self.generate_url.clone(),
            embed_sentence_url: self.embed_sentence_url.clone(),
            embed_token_url: self.embed_token_url.clone(),
            logprob_forward_url: self.logprob_forward_url.clone(),
            logprob_reverse_url: self.logprob_reverse_url.clone(),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.retry_limit,
            initial_backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }

    pub fn example_pool_path(&self) -> Option<&Path> {
        self.example_pool.as_deref().or(self.train_corpus.as_deref())
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self, purpose: Purpose) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.attempts < 1 {
            return bad("attempts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rerank_weight) {
            return bad(format!("rerank_weight must lie in [0, 1], got {}", self.rerank_weight));
        }
        if self.concurrency < 1 {
            return bad("concurrency must be at least 1".into());
        }
        self.generation_params()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.bm25_params()?;

        for (key, path) in [
            ("train_corpus", &self.train_corpus),
            ("dev_corpus", &self.dev_corpus),
            ("test_corpus", &self.test_corpus),
            ("example_pool", &self.example_pool),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return bad(format!("{key}: {} does not exist", p.display()));
                }
            }
        }
        if let Some(p) = &self.prompts_dir {
            if !p.is_dir() {
                return bad(format!("prompts_dir: {} is not a directory", p.display()));
            }
        }

        if purpose == Purpose::Run {
            if self.corpus_for(self.split).is_none() {
                return bad(format!("no corpus configured for split `{}`", self.split));
            }
            if self.iterative_examples && self.example_pool_path().is_none() {
                return bad("iterative_examples needs example_pool or train_corpus".into());
            }
        }

        if self.backend == BackendKind::Http {
            let endpoints = self.endpoints();
            let checked = match purpose {
                Purpose::Run => endpoints.check_for_run(),
                Purpose::Evaluate => endpoints.check_for_eval(),
            };
            checked.map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// The settings that determine output bytes. Excludes the output
    /// location, credentials and scheduling knobs, and reduces input paths to
    /// file names.
    pub fn snapshot(&self, prompts_version: u32) -> ConfigSnapshot {
        let name = |p: &Option<PathBuf>| {
            p.as_deref()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
        };
        let http = self.backend == BackendKind::Http;
        ConfigSnapshot {
            backend: self.backend,
            seed: self.seed,
            split: self.split,
            corpus: name(&self.corpus_for(self.split).map(Path::to_path_buf)),
            generation: self.generation_params(),
            attempts: self.attempts,
            bm25_k1: self.bm25_k1,
            bm25_b: self.bm25_b,
            iterative_examples: self.iterative_examples,
            example_pool: if self.iterative_examples {
                name(&self.example_pool_path().map(Path::to_path_buf))
            } else {
                None
            },
            prompts_version,
            custom_prompts: name(&self.prompts_dir),
            rerank_weight: self.rerank_weight,
            strip_trailing_quote: self.strip_trailing_quote,
            curly_quotes: self.curly_quotes,
            endpoints: http.then(|| self.endpoints()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub backend: BackendKind,
    pub seed: u64,
    pub split: Split,
    pub corpus: Option<String>,
    pub generation: GenerationParams,
    pub attempts: u32,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub iterative_examples: bool,
    pub example_pool: Option<String>,
    pub prompts_version: u32,
    pub custom_prompts: Option<String>,
    pub rerank_weight: f64,
    pub strip_trailing_quote: bool,
    pub curly_quotes: bool,
    pub endpoints: Option<Endpoints>,
}
