//! Deterministic scripted backend for replaying fixed transcripts. Cursors are
//! episode-local: use one instance per episode.

use std::sync::Mutex;

use super::{BackendError, ModelBackend};
use crate::model::ImageRef;

pub struct ScriptedBackend {
    id: String,
    descriptions: Vec<String>,
    answers: Vec<String>,
    describe_cursor: Mutex<usize>,
    answer_cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(
        descriptions: impl IntoIterator<Item = impl Into<String>>,
        answers: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        ScriptedBackend {
            id: "scripted".into(),
            descriptions: descriptions.into_iter().map(Into::into).collect(),
            answers: answers.into_iter().map(Into::into).collect(),
            describe_cursor: Mutex::new(0),
            answer_cursor: Mutex::new(0),
        }
    }

    /// Convenience: wraps each payload as "The answer is <x>." and supplies
    /// generic description text. A payload of "none" becomes an output with no
    /// extractable answer.
    pub fn from_answer_payloads(payloads: &[&str]) -> Self {
        let answers: Vec<String> = payloads
            .iter()
            .map(|p| {
                if p.eq_ignore_ascii_case("none") {
                    "I cannot determine the answer.".to_string()
                } else {
                    format!("The answer is {p}.")
                }
            })
            .collect();
        let descriptions: Vec<String> = (0..)
            .take(32)
            .map(|i| format!("Scripted description {i}."))
            .collect();
        ScriptedBackend::new(descriptions, answers)
    }
}

impl ModelBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn describe(&self, _image: &ImageRef, _prompt: &str) -> Result<String, BackendError> {
        let mut cursor = self.describe_cursor.lock().unwrap();
        let ordinal = *cursor;
        match self.descriptions.get(ordinal) {
            Some(d) => {
                *cursor += 1;
                Ok(d.clone())
            }
            None => Err(BackendError::ScriptExhausted {
                kind: "describe",
                ordinal,
            }),
        }
    }

    fn answer(&self, _image: &ImageRef, _prompt: &str) -> Result<String, BackendError> {
        let mut cursor = self.answer_cursor.lock().unwrap();
        let ordinal = *cursor;
        match self.answers.get(ordinal) {
            Some(a) => {
                *cursor += 1;
                Ok(a.clone())
            }
            None => Err(BackendError::ScriptExhausted {
                kind: "answer",
                ordinal,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageRef {
        ImageRef::Path("x.png".into())
    }

    #[test]
    fn replays_in_order() {
        let b = ScriptedBackend::new(vec!["d0"], vec!["a0", "a1"]);
        assert_eq!(b.describe(&img(), "p").unwrap(), "d0");
        assert_eq!(b.answer(&img(), "p").unwrap(), "a0");
        assert_eq!(b.answer(&img(), "p").unwrap(), "a1");
    }

    #[test]
    fn exhaustion_is_an_error() {
        let b = ScriptedBackend::new(Vec::<String>::new(), vec!["a0"]);
        let err = b.describe(&img(), "p").unwrap_err();
        assert!(matches!(
            err,
            BackendError::ScriptExhausted { kind: "describe", ordinal: 0 }
        ));
        assert!(!err.is_transport());
    }

    #[test]
    fn none_payload_has_no_pattern() {
        let b = ScriptedBackend::from_answer_payloads(&["none", "B"]);
        let first = b.answer(&img(), "p").unwrap();
        assert!(!first.to_lowercase().contains("the answer is"));
        assert_eq!(b.answer(&img(), "p").unwrap(), "The answer is B.");
    }
}
