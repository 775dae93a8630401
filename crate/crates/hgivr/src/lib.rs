//! H-GIVR: an iterative visual-reasoning engine and evaluation harness.
//!
//! The engine runs a describe/answer loop against a multimodal model backend:
//! it generates an image description first, feeds previously generated answers
//! back into each subsequent prompt, re-observes the image periodically, and
//! stops as soon as an answer repeats. Baseline strategies (direct invocation,
//! chain-of-thought variants, self-consistency voting) share the same backend
//! and scoring machinery, so runs are directly comparable.

pub mod backends;
pub mod codec;
pub mod engine;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod prompt;
pub mod runner;

pub use backends::{
    BackendError, HttpBackend, HttpBackendConfig, ModelBackend, ScriptedBackend,
    StochasticBackend, StochasticBackendConfig,
};
pub use codec::{answers_equal, extract_answer, normalize, NormalizationPolicy};
pub use engine::{plurality_vote, Engine, EngineError, StrategyOutcome};
pub use eval::{aggregate, compare, config_digest, manifest_digest, score, RunReport};
pub use model::{
    validate_manifest, Answer, AnswerKind, AnswerList, EpisodeConfig, EpisodeState,
    EpisodeStatus, FeatureSet, ImageRef, QuestionInstance, Strategy, Transcript, Verdict,
};
pub use prompt::{build_answer_prompt, build_describe_prompt, PromptTemplateSet};
