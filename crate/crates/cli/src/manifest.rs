//! Per-run record of which conversations are done.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ConfigSnapshot;
use crate::error::CliError;
use crate::fsio;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Pending,
    Done,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub conversation_id: String,
    #[serde(flatten)]
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ConfigSnapshot,
    /// Interpretations baked into this run.
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_unix: Option<u64>,
    pub conversations: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatusCounts {
    pub pending: usize,
    pub done: usize,
    pub failed: usize,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: ConfigSnapshot, notes: Vec<String>, ids: &[&str], timestamps: bool) -> Self {
        let t = timestamps.then(now);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            notes,
            started_unix: t,
            updated_unix: t,
            conversations: ids
                .iter()
                .map(|id| Entry {
                    conversation_id: id.to_string(),
                    status: Status::Pending,
                })
                .collect(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    pub fn load(out: &Path) -> Result<Option<Self>, CliError> {
        let path = Self::path(out);
        if !path.exists() {
            return Ok(None);
        }
        fsio::read_json(&path).map(Some)
    }

    pub fn save(&mut self, out: &Path) -> Result<(), CliError> {
        if self.updated_unix.is_some() {
            self.updated_unix = Some(now());
        }
        fsio::write_json(&Self::path(out), self)
    }

    /// Checks that a manifest from an earlier run covers exactly `ids`, in
    /// order, under the same settings.
    pub fn check_resumable(&self, config: &ConfigSnapshot, ids: &[&str]) -> Result<(), CliError> {
        if &self.config != config {
            return Err(CliError::Manifest(
                "existing manifest was written with different settings; use a fresh output directory".into(),
            ));
        }
        let listed: Vec<&str> = self.conversations.iter().map(|e| e.conversation_id.as_str()).collect();
        if listed != ids {
            return Err(CliError::Manifest(
                "existing manifest lists different conversations than the corpus".into(),
            ));
        }
        Ok(())
    }

    /// Failed conversations get another try on resume.
    pub fn reset_failed(&mut self) {
        for e in &mut self.conversations {
            if matches!(e.status, Status::Failed { .. }) {
                e.status = Status::Pending;
            }
        }
    }

    /// Moves a pending conversation to `status`. Done and failed entries
    /// never move.
    pub fn advance(&mut self, index: usize, status: Status) -> Result<(), CliError> {
        let entry = &mut self.conversations[index];
        if entry.status != Status::Pending {
            return Err(CliError::Manifest(format!(
                "conversation {} is not pending",
                entry.conversation_id
            )));
        }
        entry.status = status;
        Ok(())
    }

    pub fn counts(&self) -> StatusCounts {
        let mut c = StatusCounts::default();
        for e in &self.conversations {
            match e.status {
                Status::Pending => c.pending += 1,
                Status::Done => c.done += 1,
                Status::Failed { .. } => c.failed += 1,
            }
        }
        c
    }
}
