//! The five-prompt ensemble and instruct-model chat framing.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Conversation;
use crate::examples::ExamplePair;

pub const START_OF_TURN: &str = "<start_of_turn>";
pub const END_OF_TURN: &str = "<end_of_turn>";

const USER_OPEN: &str = "<start_of_turn>user\n";
const MODEL_OPEN: &str = "<end_of_turn>\n<start_of_turn>model\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template_id} needs positive/negative examples but none were supplied")]
    MissingExamples { template_id: u8 },
    #[error("prompt already contains control tokens")]
    AlreadyFramed,
    #[error("prompt is empty")]
    Empty,
    #[error("cannot read prompt assets at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid prompt manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Conversation,
    Positive,
    Negative,
}

/// A prompt body with `{conversation}`, `{positive}` and `{negative}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: u8,
    kind: PromptKind,
    body: String,
    segments: Vec<Segment>,
    handcrafted: Option<ExamplePair>,
}

fn parse_segments(body: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut text = String::new();
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let tail = &rest[open..];
        let slot = [
            ("{conversation}", Segment::Conversation),
            ("{positive}", Segment::Positive),
            ("{negative}", Segment::Negative),
        ]
        .into_iter()
        .find(|(name, _)| tail.starts_with(name));
        match slot {
            Some((name, seg)) => {
                if !text.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut text)));
                }
                out.push(seg);
                rest = &tail[name.len()..];
            }
            None => {
                text.push('{');
                rest = &tail[1..];
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    out
}

impl PromptTemplate {
    pub fn new(
        id: u8,
        kind: PromptKind,
        body: impl Into<String>,
        handcrafted: Option<ExamplePair>,
    ) -> Result<Self, PromptError> {
        let body = body.into();
        let segments = parse_segments(&body);
        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        if count(&Segment::Conversation) != 1 {
            return Err(PromptError::Manifest(format!(
                "template {id} must contain exactly one {{conversation}} slot"
            )));
        }
        if kind == PromptKind::ZeroShot && (count(&Segment::Positive) + count(&Segment::Negative)) > 0 {
            return Err(PromptError::Manifest(format!(
                "zero-shot template {id} cannot have example slots"
            )));
        }
        Ok(Self {
            id,
            kind,
            body,
            segments,
            handcrafted,
        })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    /// Template text with slots unexpanded.
    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn has_example_slots(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s, Segment::Positive | Segment::Negative))
    }

    pub fn handcrafted_examples(&self) -> Option<&ExamplePair> {
        self.handcrafted.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub template_id: u8,
    pub conversation_id: String,
    pub rendered: String,
}

/// Model input wrapped in user/model control tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChatRequestText(String);

impl ChatRequestText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The prompt inside the frame.
    pub fn inner(&self) -> &str {
        &self.0[USER_OPEN.len()..self.0.len() - MODEL_OPEN.len()]
    }
}

static FRAME_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\A<start_of_turn>user\n(?s:(.*))<end_of_turn>\n<start_of_turn>model\n\z").expect("valid regex")
});

/// True when `text` is a single user turn followed by an open model turn.
pub fn is_valid_chat_frame(text: &str) -> bool {
    FRAME_RE.captures(text).is_some_and(|c| {
        let inner = c.get(1).map_or("", |m| m.as_str());
        !inner.is_empty() && !inner.contains(START_OF_TURN) && !inner.contains(END_OF_TURN)
    })
}

/// One `role: text` line per turn.
pub fn render_conversation(conversation: &Conversation) -> String {
    conversation
        .turns()
        .iter()
        .map(|t| format!("{}: {}", t.role(), t.text()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fills the template's slots. Example slots take `examples` when given,
/// otherwise the template's handcrafted pair.
pub fn render_prompt(
    template: &PromptTemplate,
    conversation: &Conversation,
    examples: Option<&ExamplePair>,
) -> Result<PromptInstance, PromptError> {
    let pair = if template.has_example_slots() {
        Some(
            examples
                .or(template.handcrafted.as_ref())
                .ok_or(PromptError::MissingExamples { template_id: template.id })?,
        )
    } else {
        None
    };
    let convo = render_conversation(conversation);
    let mut rendered = String::with_capacity(template.body.len() + convo.len());
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => rendered.push_str(t),
            Segment::Conversation => rendered.push_str(&convo),
            Segment::Positive => rendered.push_str(&pair.expect("slots imply pair").positive),
            Segment::Negative => rendered.push_str(&pair.expect("slots imply pair").negative),
        }
    }
    Ok(PromptInstance {
        template_id: template.id,
        conversation_id: conversation.id().to_string(),
        rendered,
    })
}

pub fn format_chat(prompt: &PromptInstance) -> Result<ChatRequestText, PromptError> {
    let p = &prompt.rendered;
    if p.is_empty() {
        return Err(PromptError::Empty);
    }
    if p.contains(START_OF_TURN) || p.contains(END_OF_TURN) {
        return Err(PromptError::AlreadyFramed);
    }
    Ok(ChatRequestText(format!("{USER_OPEN}{p}{MODEL_OPEN}")))
}

/// The ordered prompt ensemble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    version: u32,
    templates: Vec<PromptTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    template: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: u8,
    kind: PromptKind,
    file: String,
    extends: Option<u8>,
    positive: Option<String>,
    negative: Option<String>,
}

const BUILTIN_MANIFEST: &str = include_str!("../assets/prompts/manifest.toml");
const BUILTIN_FILES: &[(&str, &str)] = &[
    ("prompt_1.txt", include_str!("../assets/prompts/prompt_1.txt")),
    ("prompt_2_suffix.txt", include_str!("../assets/prompts/prompt_2_suffix.txt")),
    ("prompt_3_suffix.txt", include_str!("../assets/prompts/prompt_3_suffix.txt")),
    ("prompt_4.txt", include_str!("../assets/prompts/prompt_4.txt")),
    ("prompt_5_suffix.txt", include_str!("../assets/prompts/prompt_5_suffix.txt")),
];

/// Asset files end with one newline that is not part of the text; CRLF
/// checkouts are normalized.
fn normalize_asset(raw: &str) -> String {
    let s = raw.replace("\r\n", "\n");
    s.strip_suffix('\n').map(str::to_string).unwrap_or(s)
}

impl PromptSet {
    /// The versioned templates compiled into the binary.
    pub fn builtin() -> Self {
        Self::from_manifest(BUILTIN_MANIFEST, |name| {
            BUILTIN_FILES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| PromptError::Manifest(format!("missing builtin asset {name}")))
        })
        .expect("builtin prompt assets are valid")
    }

    /// Loads `manifest.toml` and the files it names from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |p: PathBuf| fs::read_to_string(&p).map_err(|source| PromptError::Io { path: p, source });
        let manifest = read(dir.join("manifest.toml"))?;
        Self::from_manifest(&manifest, |name| read(dir.join(name)))
    }

    fn from_manifest(
        manifest: &str,
        mut read: impl FnMut(&str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let m: ManifestFile = toml::from_str(manifest).map_err(|e| PromptError::Manifest(e.to_string()))?;
        let ids: BTreeSet<u8> = m.template.iter().map(|t| t.id).collect();
        if ids.len() != m.template.len() || ids != (1..=5).collect() {
            return Err(PromptError::Manifest("template ids must be exactly 1..=5".into()));
        }
        let mut own: Vec<(u8, String)> = Vec::new();
        for t in &m.template {
            own.push((t.id, normalize_asset(&read(&t.file)?)));
        }
        let own_body = |id: u8| own.iter().find(|(i, _)| *i == id).map(|(_, b)| b.clone());
        let mut templates = Vec::new();
        for t in &m.template {
            let mut body = own_body(t.id).expect("loaded above");
            if let Some(base) = t.extends {
                let parent = m
                    .template
                    .iter()
                    .find(|p| p.id == base)
                    .ok_or_else(|| PromptError::Manifest(format!("template {} extends unknown {base}", t.id)))?;
                if parent.extends.is_some() {
                    return Err(PromptError::Manifest("nested extends not supported".into()));
                }
                body = format!("{}\n\n{body}", own_body(base).expect("loaded above"));
            }
            let handcrafted = match (&t.positive, &t.negative) {
                (Some(p), Some(n)) => Some(ExamplePair {
                    positive: p.clone(),
                    negative: n.clone(),
                }),
                (None, None) => None,
                _ => {
                    return Err(PromptError::Manifest(format!(
                        "template {} sets only one of positive/negative",
                        t.id
                    )))
                }
            };
            templates.push(PromptTemplate::new(t.id, t.kind, body, handcrafted)?);
        }
        templates.sort_by_key(|t| t.id);
        Ok(Self {
            version: m.version,
            templates,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn get(&self, id: u8) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }
}

/// One rendered prompt per template, in id order.
///
/// `examples` replaces the handcrafted example sentences wherever a template
/// has example slots; `None` keeps the handcrafted ones.
pub fn build_ensemble(
    set: &PromptSet,
    conversation: &Conversation,
    examples: Option<&ExamplePair>,
) -> Result<Vec<PromptInstance>, PromptError> {
    set.templates()
        .iter()
        .map(|t| render_prompt(t, conversation, examples))
        .collect()
}
