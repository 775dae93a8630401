//! Domain types shared by the engine, backends, and evaluation harness.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Where an image lives. Exactly one source variant; images pass through opaque.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Url(String),
    Inline { b64: String, media_type: String },
}

impl ImageRef {
    pub fn media_type(&self) -> Option<&str> {
        match self {
            ImageRef::Inline { media_type, .. } => Some(media_type),
            _ => None,
        }
    }
}

/// One VQA item: question text, image, optional multiple-choice options,
/// acceptable gold answers, and free-form grouping tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    pub image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<(String, String)>,
}

impl QuestionInstance {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Zero-based choice index rendered as an uppercase letter (0 -> A, 1 -> B, ...).
pub fn choice_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

/// Inverse of [`choice_letter`]; None when the letter is out of range for `n_choices`.
pub fn letter_index(letter: char, n_choices: usize) -> Option<usize> {
    let upper = letter.to_ascii_uppercase();
    if !upper.is_ascii_uppercase() {
        return None;
    }
    let idx = (upper as u8 - b'A') as usize;
    (idx < n_choices).then_some(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    ChoiceLetter,
    FreeText,
    None,
}

/// An extracted model answer: the verbatim payload plus its canonical
/// comparison form. A none-kind answer always has an empty normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw: String,
    pub normalized: String,
    pub kind: AnswerKind,
}

impl Answer {
    pub fn none() -> Self {
        Answer {
            raw: String::new(),
            normalized: String::new(),
            kind: AnswerKind::None,
        }
    }

    pub fn is_none_kind(&self) -> bool {
        self.kind == AnswerKind::None
    }
}

/// Ordered image descriptions with the iteration at which each was produced.
/// Append-only within an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub descriptions: Vec<(u32, String)>,
}

impl FeatureSet {
    pub fn push(&mut self, iteration: u32, description: String) {
        self.descriptions.push((iteration, description));
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.descriptions.iter().map(|(_, d)| d.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }
}

/// Ordered history of valid answers. Append-only within an episode; iteration 0
/// marks seeded entries that precede the first real iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerList {
    pub entries: Vec<(u32, Answer)>,
}

impl AnswerList {
    pub fn push(&mut self, iteration: u32, answer: Answer) {
        self.entries.push((iteration, answer));
    }

    pub fn answers(&self) -> impl Iterator<Item = &Answer> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&Answer> {
        self.entries.last().map(|(_, a)| a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "hgivr")]
    Hgivr,
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "simple_cot")]
    SimpleCot,
    #[serde(rename = "complex_cot")]
    ComplexCot,
    #[serde(rename = "self_consistency")]
    SelfConsistency,
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Hgivr => "hgivr",
            Strategy::Standard => "standard",
            Strategy::SimpleCot => "simple_cot",
            Strategy::ComplexCot => "complex_cot",
            Strategy::SelfConsistency => "self_consistency",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "hgivr" => Some(Strategy::Hgivr),
            "standard" => Some(Strategy::Standard),
            "simple_cot" => Some(Strategy::SimpleCot),
            "complex_cot" => Some(Strategy::ComplexCot),
            "self_consistency" => Some(Strategy::SelfConsistency),
            _ => None,
        }
    }
}

/// One few-shot exemplar: question, reasoning, answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub reasoning: String,
    pub answer: String,
}

/// Per-call sampling knobs forwarded to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

fn default_max_iterations() -> u32 {
    10
}
fn default_reobserve_period() -> u32 {
    2
}
fn default_sc_k() -> u32 {
    5
}
fn default_true() -> bool {
    true
}

/// All knobs of one episode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub strategy: Strategy,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "default_reobserve_period")]
    pub reobserve_period: u32,
    #[serde(default = "default_true")]
    pub enable_visual_description: bool,
    #[serde(default = "default_true")]
    pub enable_history_context: bool,
    #[serde(default = "default_true")]
    pub enable_reobservation: bool,
    #[serde(default = "default_sc_k")]
    pub self_consistency_k: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub false_seed: Vec<Answer>,
    #[serde(default)]
    pub describe_sampling: SamplingParams,
    #[serde(default)]
    pub answer_sampling: SamplingParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<Exemplar>,
}

impl EpisodeConfig {
    pub fn new(strategy: Strategy) -> Self {
        EpisodeConfig {
            strategy,
            max_iterations: default_max_iterations(),
            reobserve_period: default_reobserve_period(),
            enable_visual_description: true,
            enable_history_context: true,
            enable_reobservation: true,
            self_consistency_k: default_sc_k(),
            false_seed: Vec::new(),
            describe_sampling: SamplingParams::default(),
            answer_sampling: SamplingParams::default(),
            exemplars: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be >= 1".into());
        }
        if self.reobserve_period < 1 {
            return Err("reobserve_period must be >= 1".into());
        }
        if self.self_consistency_k < 1 {
            return Err("self_consistency_k must be >= 1".into());
        }
        if self.false_seed.iter().any(Answer::is_none_kind) {
            return Err("false_seed must not contain none-kind answers".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Confirmed,
    NoneBreak,
    Exhausted,
    SingleShot,
    Voted,
}

/// Live loop state for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub iteration: u32,
    pub features: FeatureSet,
    pub answers: AnswerList,
    pub none_run: u32,
    pub status: EpisodeStatus,
}

impl EpisodeState {
    pub fn new() -> Self {
        EpisodeState {
            iteration: 0,
            features: FeatureSet::default(),
            answers: AnswerList::default(),
            none_run: 0,
            status: EpisodeStatus::Running,
        }
    }
}

impl Default for EpisodeState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Describe,
    Answer,
}

/// One model request/response pair inside an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCallRecord {
    pub seq: u32,
    pub kind: CallKind,
    pub iteration: u32,
    pub prompt: String,
    pub image_attached: bool,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<Answer>,
    #[serde(with = "duration_micros")]
    pub wall_time: Duration,
    pub backend_id: String,
}

mod duration_micros {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

/// Full record of one episode, sufficient to recompute every report number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub config: EpisodeConfig,
    pub calls: Vec<ModelCallRecord>,
    pub final_answer: Answer,
    pub terminal_status: EpisodeStatus,
    pub answer_call_count: u32,
    pub total_call_count: u32,
}

impl Transcript {
    /// Recount the call records; must agree with the stored counters.
    pub fn recount(&self) -> (u32, u32) {
        let answers = self
            .calls
            .iter()
            .filter(|c| c.kind == CallKind::Answer)
            .count() as u32;
        (answers, self.calls.len() as u32)
    }
}

/// Scoring result for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub question_id: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_gold: Option<String>,
    pub final_answer: Answer,
}

/// Checks every QuestionInstance invariant plus id uniqueness. Violations are
/// returned as human-readable strings, never thrown.
pub fn validate_manifest(entries: &[QuestionInstance]) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for q in entries {
        if !seen.insert(q.id.as_str()) {
            violations.push(format!("duplicate id: {}", q.id));
        }
        if q.text.trim().is_empty() {
            violations.push(format!("{}: empty question text", q.id));
        }
        if q.gold.is_empty() {
            violations.push(format!("{}: gold_answers empty", q.id));
        }
        if let Some(choices) = &q.choices {
            if choices.len() < 2 {
                violations.push(format!("{}: fewer than 2 choices", q.id));
            }
            for g in &q.gold {
                if !gold_resolves_to_choice(g, choices) {
                    violations.push(format!(
                        "{}: gold answer {:?} resolves to no choice",
                        q.id, g
                    ));
                }
            }
        }
    }
    violations
}

/// A gold answer is resolvable when it is a valid choice letter or matches a
/// choice's text under the default normalization.
fn gold_resolves_to_choice(gold: &str, choices: &[String]) -> bool {
    let norm = crate::codec::normalize(gold, &crate::codec::NormalizationPolicy::default());
    let mut letters = norm.chars();
    if let (Some(c), None) = (letters.next(), letters.next()) {
        if letter_index(c, choices.len()).is_some() {
            return true;
        }
    }
    choices.iter().any(|ch| {
        crate::codec::normalize(ch, &crate::codec::NormalizationPolicy::default()) == norm
    })
}

/// Raw manifest line as it appears on disk (tags as a JSON string map).
#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    question: String,
    image: ManifestImage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
    gold: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<std::collections::BTreeMap<String, String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ManifestImage {
    Plain(String),
    Inline { b64: String, media_type: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Reads the newline-delimited manifest format: one JSON object per line with
/// fields `id`, `question`, `image`, optional `choices`, `gold`, optional `tags`.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<QuestionInstance>, ManifestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)
            .map_err(|source| ManifestError::Parse { line: i + 1, source })?;
        let image = match parsed.image {
            ManifestImage::Inline { b64, media_type } => ImageRef::Inline { b64, media_type },
            ManifestImage::Plain(s) => {
                if s.starts_with("http://") || s.starts_with("https://") {
                    ImageRef::Url(s)
                } else {
                    ImageRef::Path(s)
                }
            }
        };
        out.push(QuestionInstance {
            id: parsed.id,
            text: parsed.question,
            image,
            choices: parsed.choices,
            gold: parsed.gold,
            tags: parsed
                .tags
                .map(|m| m.into_iter().collect())
                .unwrap_or_default(),
        });
    }
    Ok(out)
}

pub fn read_manifest_file(path: &std::path::Path) -> Result<Vec<QuestionInstance>, ManifestError> {
    let file = std::fs::File::open(path)?;
    read_manifest(std::io::BufReader::new(file))
}

/// Writes transcripts as newline-delimited JSON.
pub fn write_transcripts<W: Write>(
    mut writer: W,
    transcripts: &[Transcript],
) -> std::io::Result<()> {
    for t in transcripts {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transcripts<R: BufRead>(reader: R) -> Result<Vec<Transcript>, ManifestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| ManifestError::Parse { line: i + 1, source })?,
        );
    }
    Ok(out)
}
