//! Deterministic prompt rendering. Default templates reproduce the printed
//! interaction transcripts byte-for-byte; blocks are separated by a single
//! blank line and trailing whitespace is trimmed per line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AnswerList, EpisodeConfig, Exemplar, QuestionInstance, Strategy};

pub const DEFAULT_DESCRIBE_FIRST: &str = "Observe the image and describe its visual features.";
pub const DEFAULT_DESCRIBE_AGAIN: &str =
    "Observe the image again and describe its visual features.";
pub const DEFAULT_ANSWER_INSTRUCTION: &str =
    "Strictly output the answer in the format \"The answer is \".";
pub const DEFAULT_HISTORY_PREAMBLE: &str = "Consider these answers carefully. If you think all \
     of these answers are wrong, provide a new answer. If you think there is a correct answer \
     among these answers, output that answer.";
pub const DEFAULT_SIMPLE_COT_SUFFIX: &str = "Let's think step by step";
pub const DEFAULT_EXEMPLAR_BLOCK: &str = "Question: {question}\n\n{reasoning}\n\n{answer}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplateSet {
    pub describe_first: String,
    pub describe_again: String,
    pub answer_instruction: String,
    pub history_preamble: String,
    pub simple_cot_suffix: String,
    pub exemplar_block: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet {
            describe_first: DEFAULT_DESCRIBE_FIRST.into(),
            describe_again: DEFAULT_DESCRIBE_AGAIN.into(),
            answer_instruction: DEFAULT_ANSWER_INSTRUCTION.into(),
            history_preamble: DEFAULT_HISTORY_PREAMBLE.into(),
            simple_cot_suffix: DEFAULT_SIMPLE_COT_SUFFIX.into(),
            exemplar_block: DEFAULT_EXEMPLAR_BLOCK.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("unresolved placeholder {{{0}}} in template")]
    UnresolvedPlaceholder(String),
}

/// Substitutes `{name}` placeholders. Unknown placeholders are an error so a
/// bad override file fails loudly instead of rendering garbage.
fn fill(template: &str, vars: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::UnresolvedPlaceholder(name.to_string())),
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn build_describe_prompt(templates: &PromptTemplateSet, first_time: bool) -> String {
    if first_time {
        templates.describe_first.clone()
    } else {
        templates.describe_again.clone()
    }
}

/// Renders few-shot exemplars; empty input yields an empty block.
pub fn render_exemplars(
    templates: &PromptTemplateSet,
    exemplars: &[Exemplar],
) -> Result<String, PromptError> {
    let mut blocks = Vec::with_capacity(exemplars.len());
    for ex in exemplars {
        let vars = BTreeMap::from([
            ("question", ex.question.as_str()),
            ("reasoning", ex.reasoning.as_str()),
            ("answer", ex.answer.as_str()),
        ]);
        blocks.push(fill(&templates.exemplar_block, &vars)?);
    }
    Ok(blocks.join("\n\n"))
}

/// Assembles the answer prompt: exemplars (ComplexCoT), question block, choice
/// block, image-features block, previous-answers block, strict-format
/// instruction, step-by-step suffix (SimpleCoT). Identical inputs produce
/// byte-identical output.
pub fn build_answer_prompt(
    templates: &PromptTemplateSet,
    q: &QuestionInstance,
    features: &crate::model::FeatureSet,
    answers: &AnswerList,
    cfg: &EpisodeConfig,
) -> Result<String, PromptError> {
    if q.text.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let mut blocks: Vec<String> = Vec::new();

    if cfg.strategy == Strategy::ComplexCot && !cfg.exemplars.is_empty() {
        let block = render_exemplars(templates, &cfg.exemplars)?;
        if !block.is_empty() {
            blocks.push(block);
        }
    }

    blocks.push(format!("Question: {}", q.text));

    if let Some(choices) = &q.choices {
        let mut block = String::from("Choice:");
        for c in choices {
            block.push('\n');
            block.push_str(c);
        }
        blocks.push(block);
    }

    if cfg.enable_visual_description && !features.is_empty() {
        let mut block = String::from("Image features:");
        for d in features.texts() {
            block.push('\n');
            block.push_str(d);
        }
        blocks.push(block);
    }

    if cfg.enable_history_context && !answers.is_empty() {
        let list = answers
            .answers()
            .map(|a| a.normalized.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        blocks.push(format!(
            "Previous answers: [{}]. {}",
            list, templates.history_preamble
        ));
    }

    blocks.push(templates.answer_instruction.clone());

    if cfg.strategy == Strategy::SimpleCot {
        blocks.push(templates.simple_cot_suffix.clone());
    }

    let joined = blocks.join("\n\n");
    Ok(joined
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Template overrides: a UTF-8 file keyed by template name, one per key.
/// Missing keys keep their defaults.
pub fn load_template_overrides(text: &str) -> Result<PromptTemplateSet, toml::de::Error> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Overrides {
        describe_first: Option<String>,
        describe_again: Option<String>,
        answer_instruction: Option<String>,
        history_preamble: Option<String>,
        simple_cot_suffix: Option<String>,
        exemplar_block: Option<String>,
    }
    let o: Overrides = toml::from_str(text)?;
    let mut t = PromptTemplateSet::default();
    if let Some(v) = o.describe_first {
        t.describe_first = v;
    }
    if let Some(v) = o.describe_again {
        t.describe_again = v;
    }
    if let Some(v) = o.answer_instruction {
        t.answer_instruction = v;
    }
    if let Some(v) = o.history_preamble {
        t.history_preamble = v;
    }
    if let Some(v) = o.simple_cot_suffix {
        t.simple_cot_suffix = v;
    }
    if let Some(v) = o.exemplar_block {
        t.exemplar_block = v;
    }
    Ok(t)
}
