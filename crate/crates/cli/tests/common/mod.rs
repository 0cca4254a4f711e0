#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use cikmar_cli::RunConfig;
use cikmar_core::backends::{
    BackendError, Direction, EmbeddingVector, GenerationRequest, LogProbResult, LogProbScorer, SentenceEncoder,
    StubBackend, TextGenerator, TokenEmbeddings, TokenEncoder,
};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn stub_config(out: &Path) -> RunConfig {
    RunConfig {
        test_corpus: Some(fixture("stub_corpus.jsonl")),
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

/// Relative path to contents for every file under `root`.
pub fn snapshot_dir(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Stub backend that records every generation request and can be told to
/// fail generation for conversations whose id matches.
pub struct Recording {
    pub inner: StubBackend,
    pub prompts: Mutex<Vec<(String, u8, u32, String)>>,
    pub fail_ids: Vec<String>,
}

impl Recording {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: StubBackend::new(seed),
            prompts: Mutex::new(Vec::new()),
            fail_ids: Vec::new(),
        }
    }

    pub fn failing(seed: u64, ids: &[&str]) -> Self {
        Self {
            fail_ids: ids.iter().map(|s| s.to_string()).collect(),
            ..Self::new(seed)
        }
    }

    pub fn calls(&self) -> Vec<(String, u8, u32, String)> {
        let mut v = self.prompts.lock().unwrap().clone();
        v.sort();
        v
    }
}

impl TextGenerator for Recording {
    fn generate_once(&self, r: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let conv = r.correlation_id.rsplitn(3, '/').last().unwrap_or_default().to_string();
        self.prompts
            .lock()
            .unwrap()
            .push((conv.clone(), r.template_id, r.attempt, r.prompt.as_str().to_string()));
        if self.fail_ids.contains(&conv) {
            return Err(BackendError::Transport {
                attempts: 4,
                message: "connection refused".into(),
            });
        }
        self.inner.generate_once(r)
    }
}

impl SentenceEncoder for Recording {
    fn embed_sentences(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.inner.embed_sentences(texts)
    }
}

impl TokenEncoder for Recording {
    fn embed_tokens(&self, text: &str) -> Result<TokenEmbeddings, BackendError> {
        self.inner.embed_tokens(text)
    }
}

impl LogProbScorer for Recording {
    fn score_logprob(&self, c: &str, x: &str, d: Direction) -> Result<LogProbResult, BackendError> {
        self.inner.score_logprob(c, x, d)
    }
}
