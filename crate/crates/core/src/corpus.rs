//! Teacher–student conversation data: loading, validation and statistics.
//!
//! Corpus files are line-delimited JSON, one conversation per line:
//!
//! ```text
//! {"id":"c1","turns":[{"role":"teacher","text":"Hi"}],"reference":"Hello!"}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("conversation {id}: turn {turn} has empty text")]
    EmptyTurn { id: String, turn: usize },
    #[error("conversation {id}: no turns")]
    NoTurns { id: String },
    #[error("line {line}: duplicate conversation id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = CorpusError;

    /// Accepts `teacher`, `Teacher:`, `STUDENT` and so on.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_suffix(':').unwrap_or(t).trim_end();
        if t.eq_ignore_ascii_case("teacher") {
            Ok(Role::Teacher)
        } else if t.eq_ignore_ascii_case("student") {
            Ok(Role::Student)
        } else {
            Err(CorpusError::UnknownRole(s.to_string()))
        }
    }
}

/// One message. The text is never blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    role: Role,
    text: String,
}

impl Turn {
    /// Returns `None` when `text` is empty after trimming.
    pub fn new(role: Role, text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            None
        } else {
            Some(Self { role, text })
        }
    }

    pub fn teacher(text: impl Into<String>) -> Option<Self> {
        Self::new(Role::Teacher, text)
    }

    pub fn student(text: impl Into<String>) -> Option<Self> {
        Self::new(Role::Student, text)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndingKind {
    /// Last turn is the student's; the teacher answers.
    TeacherReply,
    /// Last turn is the teacher's; the teacher keeps going.
    TeacherContinuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    id: String,
    turns: Vec<Turn>,
    reference: Option<String>,
}

impl Conversation {
    pub fn new(
        id: impl Into<String>,
        turns: Vec<Turn>,
        reference: Option<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        if turns.is_empty() {
            return Err(CorpusError::NoTurns { id });
        }
        Ok(Self { id, turns, reference })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn reference(&self) -> Option<&str> {
        self.reference.as_deref()
    }

    pub fn last_turn(&self) -> &Turn {
        self.turns.last().expect("conversation has at least one turn")
    }

    pub fn ending_kind(&self) -> EndingKind {
        ending_kind(self)
    }

    /// Serializes to a single corpus line (no trailing newline).
    pub fn to_record_line(&self) -> String {
        let record = RecordOut {
            id: &self.id,
            turns: self
                .turns
                .iter()
                .map(|t| TurnOut { role: t.role, text: &t.text })
                .collect(),
            reference: self.reference.as_deref(),
        };
        serde_json::to_string(&record).expect("corpus record serializes")
    }
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    turns: Vec<TurnOut<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<&'a str>,
}

#[derive(Serialize)]
struct TurnOut<'a> {
    role: Role,
    text: &'a str,
}

pub fn ending_kind(conversation: &Conversation) -> EndingKind {
    match conversation.last_turn().role() {
        Role::Teacher => EndingKind::TeacherContinuation,
        Role::Student => EndingKind::TeacherReply,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "dev" | "development" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(CorpusError::UnknownSplit(s.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Loads every conversation of one split file, in file order.
///
/// The split only labels log output; validation does not depend on it.
pub fn load_corpus(path: &Path, split: Split) -> Result<Vec<Conversation>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let conversations = parse_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    log::debug!("loaded {} {split} conversations from {}", conversations.len(), path.display());
    Ok(conversations)
}

/// Parses line-delimited corpus records. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Conversation>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let conversation = parse_record(&line, line_no)?;
        if !seen.insert(conversation.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: conversation.id,
            });
        }
        out.push(conversation);
    }
    Ok(out)
}

fn malformed(line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<Conversation, CorpusError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| malformed(line_no, "<record>", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(malformed(line_no, "<record>", "expected a JSON object"));
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "id" | "turns" | "reference") {
            log::warn!("line {line_no}: ignoring unknown field `{key}`");
        }
    }
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed(line_no, "id", "expected a string")),
        None => return Err(malformed(line_no, "id", "missing")),
    };
    let reference = match obj.get("reference") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(malformed(line_no, "reference", "expected a string")),
    };
    let raw_turns = match obj.get("turns") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(malformed(line_no, "turns", "expected an array")),
        None => return Err(malformed(line_no, "turns", "missing")),
    };
    let mut turns = Vec::with_capacity(raw_turns.len());
    for (i, t) in raw_turns.iter().enumerate() {
        turns.push(parse_turn(t, i, &id, line_no)?);
    }
    Conversation::new(id, turns, reference)
}

fn parse_turn(value: &Value, index: usize, id: &str, line_no: usize) -> Result<Turn, CorpusError> {
    let field = |name: &str| format!("turns[{index}].{name}");
    let obj: &Map<String, Value> = value
        .as_object()
        .ok_or_else(|| malformed(line_no, &format!("turns[{index}]"), "expected an object"))?;
    let role = match obj.get("role") {
        Some(Value::String(s)) => s
            .parse::<Role>()
            .map_err(|_| malformed(line_no, &field("role"), format!("unknown role `{s}`")))?,
        Some(_) => return Err(malformed(line_no, &field("role"), "expected a string")),
        None => return Err(malformed(line_no, &field("role"), "missing")),
    };
    let text = match obj.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed(line_no, &field("text"), "expected a string")),
        None => return Err(malformed(line_no, &field("text"), "missing")),
    };
    Turn::new(role, text).ok_or_else(|| CorpusError::EmptyTurn {
        id: id.to_string(),
        turn: index,
    })
}

/// Writes conversations in corpus format, one per line.
pub fn write_corpus<W: Write>(mut writer: W, conversations: &[Conversation]) -> std::io::Result<()> {
    for c in conversations {
        writeln!(writer, "{}", c.to_record_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub conversation_count: usize,
    pub continuation_count: usize,
    /// Exact share of teacher-continuation conversations; 0 for an empty corpus.
    #[serde(serialize_with = "serialize_ratio")]
    pub continuation_fraction: Ratio<i64>,
    pub per_split: BTreeMap<Split, usize>,
}

fn serialize_ratio<S: serde::Serializer>(r: &Ratio<i64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

impl CorpusStats {
    pub fn continuation_fraction_f64(&self) -> f64 {
        *self.continuation_fraction.numer() as f64 / *self.continuation_fraction.denom() as f64
    }
}

pub fn corpus_stats(conversations: &[Conversation]) -> CorpusStats {
    corpus_stats_by_split(&[]).merge_unlabelled(conversations)
}

/// Statistics over several labelled splits at once.
pub fn corpus_stats_by_split(splits: &[(Split, &[Conversation])]) -> CorpusStats {
    let mut stats = CorpusStats {
        conversation_count: 0,
        continuation_count: 0,
        continuation_fraction: Ratio::from_integer(0),
        per_split: BTreeMap::new(),
    };
    for (split, convs) in splits {
        *stats.per_split.entry(*split).or_insert(0) += convs.len();
        stats = stats.merge_unlabelled(convs);
    }
    stats
}

impl CorpusStats {
    fn merge_unlabelled(mut self, conversations: &[Conversation]) -> Self {
        self.conversation_count += conversations.len();
        self.continuation_count += conversations
            .iter()
            .filter(|c| c.ending_kind() == EndingKind::TeacherContinuation)
            .count();
        self.continuation_fraction = if self.conversation_count == 0 {
            Ratio::from_integer(0)
        } else {
            Ratio::new(self.continuation_count as i64, self.conversation_count as i64)
        };
        self
    }
}
