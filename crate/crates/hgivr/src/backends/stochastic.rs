//! Parametric stochastic backend: a desk-scale stand-in that samples answers
//! from a configured categorical distribution. Bias is applied by reading the
//! rendered prompt text, so the real prompt pathway is exercised: entries in
//! the "Previous answers:" block gain `history_bias`, and the gold option
//! gains `description_quality_lift` when an "Image features:" block is
//! present.

use std::sync::Mutex;

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ModelBackend};
use crate::model::ImageRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticBackendConfig {
    /// Option labels the backend samples from (e.g. ["A", "B"]).
    pub answer_space: Vec<String>,
    /// Categorical weights over `answer_space`; must sum to 1.
    pub distribution: Vec<f64>,
    #[serde(default)]
    pub history_bias: f64,
    #[serde(default)]
    pub description_quality_lift: f64,
    /// Label treated as gold for the description lift; ignored when the lift
    /// is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
    pub seed: u64,
}

impl StochasticBackendConfig {
    pub fn uniform(labels: &[&str], seed: u64) -> Self {
        let n = labels.len();
        StochasticBackendConfig {
            answer_space: labels.iter().map(|s| s.to_string()).collect(),
            distribution: vec![1.0 / n as f64; n],
            history_bias: 0.0,
            description_quality_lift: 0.0,
            gold_label: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.answer_space.is_empty() {
            return Err("answer_space must be non-empty".into());
        }
        if self.answer_space.len() != self.distribution.len() {
            return Err("distribution length must match answer_space".into());
        }
        let total: f64 = self.distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("distribution sums to {total}, expected 1"));
        }
        if self.distribution.iter().any(|w| *w < 0.0) {
            return Err("distribution weights must be non-negative".into());
        }
        Ok(())
    }

    /// True when the expected-calls enumerator applies: draws are i.i.d., no
    /// prompt-dependent bias.
    pub fn is_iid(&self) -> bool {
        self.history_bias == 0.0 && self.description_quality_lift == 0.0
    }
}

pub struct StochasticBackend {
    config: StochasticBackendConfig,
    rng: Mutex<ChaCha8Rng>,
}

impl StochasticBackend {
    pub fn new(config: StochasticBackendConfig) -> Result<Self, String> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(StochasticBackend {
            config,
            rng: Mutex::new(rng),
        })
    }

    /// Labels listed in the prompt's "Previous answers: [...]" block.
    fn history_labels(prompt: &str) -> Vec<String> {
        let Some(start) = prompt.find("Previous answers: [") else {
            return Vec::new();
        };
        let rest = &prompt[start + "Previous answers: [".len()..];
        let Some(end) = rest.find(']') else {
            return Vec::new();
        };
        rest[..end]
            .split(", ")
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    fn weights_for(&self, prompt: &str) -> Vec<f64> {
        let cfg = &self.config;
        let history = Self::history_labels(prompt);
        let in_history: Vec<bool> = cfg
            .answer_space
            .iter()
            .map(|l| history.iter().any(|h| h.eq_ignore_ascii_case(l)))
            .collect();

        // Infinite history bias restricts sampling to the history set.
        if cfg.history_bias.is_infinite() && in_history.iter().any(|&b| b) {
            return cfg
                .answer_space
                .iter()
                .enumerate()
                .map(|(i, _)| if in_history[i] { 1.0 } else { 0.0 })
                .collect();
        }

        let has_description = prompt.contains("Image features:");
        let mut weights = cfg.distribution.clone();
        for (i, label) in cfg.answer_space.iter().enumerate() {
            if in_history[i] {
                weights[i] += cfg.history_bias;
            }
            if has_description && cfg.description_quality_lift != 0.0 {
                if let Some(gold) = &cfg.gold_label {
                    if label.eq_ignore_ascii_case(gold) {
                        weights[i] += cfg.description_quality_lift;
                    }
                }
            }
            weights[i] = weights[i].max(0.0);
        }
        weights
    }
}

impl ModelBackend for StochasticBackend {
    fn backend_id(&self) -> &str {
        "stochastic"
    }

    fn describe(&self, _image: &ImageRef, _prompt: &str) -> Result<String, BackendError> {
        Ok("Synthetic description of the image contents.".to_string())
    }

    fn answer(&self, _image: &ImageRef, prompt: &str) -> Result<String, BackendError> {
        let weights = self.weights_for(prompt);
        let dist = rand::distributions::WeightedIndex::new(&weights)
            .map_err(|e| BackendError::Transport(format!("degenerate weights: {e}")))?;
        let idx = dist.sample(&mut *self.rng.lock().unwrap());
        Ok(format!("The answer is {}.", self.config.answer_space[idx]))
    }
}
