//! Answer extraction and normalization, and the equality used by the
//! confirmation mechanism.
//!
//! Extraction inverts the strict output instruction: the payload is whatever
//! follows the last occurrence of "the answer is" up to the end of that
//! sentence. A missing pattern, an empty payload, or a literal "none" payload
//! all map to a none-kind answer.

use serde::{Deserialize, Serialize};

use crate::model::{letter_index, Answer, AnswerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceResolution {
    LetterOnly,
    LetterOrText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationPolicy {
    pub case_fold: bool,
    pub strip_terminal_punctuation: bool,
    pub collapse_whitespace: bool,
    pub choice_resolution: ChoiceResolution,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            case_fold: true,
            strip_terminal_punctuation: true,
            collapse_whitespace: true,
            choice_resolution: ChoiceResolution::LetterOrText,
        }
    }
}

/// Canonicalizes an answer payload. Idempotent for any policy.
pub fn normalize(raw_payload: &str, policy: &NormalizationPolicy) -> String {
    let mut s = if policy.collapse_whitespace {
        raw_payload.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        raw_payload.trim().to_string()
    };
    if policy.strip_terminal_punctuation {
        while let Some(last) = s.chars().last() {
            if matches!(last, '.' | '!' | '?') {
                s.pop();
            } else {
                break;
            }
        }
        s = s.trim_end().to_string();
    }
    if policy.case_fold {
        s = s.to_lowercase();
    }
    s
}

const PATTERN: &str = "the answer is";

/// Payload of the last "the answer is" occurrence: the remainder of that
/// sentence, stopped at a sentence terminator or newline.
fn payload(raw: &str) -> Option<&str> {
    // ASCII-case-insensitive search over the original bytes; to_lowercase()
    // would shift byte offsets for some Unicode characters.
    let bytes = raw.as_bytes();
    let pat = PATTERN.as_bytes();
    let start = bytes
        .windows(pat.len())
        .enumerate()
        .rev()
        .find(|(_, w)| w.eq_ignore_ascii_case(pat))
        .map(|(i, _)| i)?
        + PATTERN.len();
    let rest = &raw[start..];
    let end = rest
        .char_indices()
        .find(|(_, c)| matches!(c, '.' | '!' | '?' | '\n'))
        .map(|(i, _)| i)
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Total: every raw string maps to an Answer, possibly none-kind.
pub fn extract_answer(raw: &str, choices: Option<&[String]>) -> Answer {
    extract_answer_with(raw, choices, &NormalizationPolicy::default())
}

pub fn extract_answer_with(
    raw: &str,
    choices: Option<&[String]>,
    policy: &NormalizationPolicy,
) -> Answer {
    let payload = match payload(raw) {
        Some(p) => p,
        None => return Answer::none(),
    };
    let norm = normalize(payload, policy);
    if norm.is_empty() || norm == "none" {
        return Answer::none();
    }
    if let Some(choices) = choices {
        // Single letter within range resolves directly.
        let mut chars = norm.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if letter_index(c, choices.len()).is_some() {
                return Answer {
                    raw: payload.trim().to_string(),
                    normalized: c.to_ascii_uppercase().to_string(),
                    kind: AnswerKind::ChoiceLetter,
                };
            }
        }
        if policy.choice_resolution == ChoiceResolution::LetterOrText {
            if let Some(idx) = choices.iter().position(|ch| normalize(ch, policy) == norm) {
                return Answer {
                    raw: payload.trim().to_string(),
                    normalized: crate::model::choice_letter(idx).to_string(),
                    kind: AnswerKind::ChoiceLetter,
                };
            }
        }
    }
    Answer {
        raw: payload.trim().to_string(),
        normalized: norm,
        kind: AnswerKind::FreeText,
    }
}

/// The confirmation equality: true iff both answers are non-none and their
/// normalized forms are identical. None never equals anything, including none.
pub fn answers_equal(a: &Answer, b: &Answer) -> bool {
    !a.is_none_kind() && !b.is_none_kind() && a.normalized == b.normalized
}
