//! Run configuration file: a TOML document mirroring the episode, backend, and
//! output settings. Unknown keys are rejected. CLI flags override environment
//! variables, which override file values.

use serde::{Deserialize, Serialize};

use hgivr::backends::{HttpBackendConfig, StochasticBackendConfig};
use hgivr::codec::NormalizationPolicy;
use hgivr::model::{Answer, AnswerKind, EpisodeConfig, Strategy};
use hgivr::prompt::PromptTemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Http,
    Scripted,
    Stochastic,
}

impl BackendChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "http" => Some(BackendChoice::Http),
            "scripted" => Some(BackendChoice::Scripted),
            "stochastic" => Some(BackendChoice::Stochastic),
            _ => None,
        }
    }
}

/// Scripted backend script, embeddable in the config file for fixture runs.
/// `answers` may hold per-question sequences keyed by question id, with
/// `default` as the fallback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptedConfig {
    pub descriptions: Vec<String>,
    pub default_answers: Vec<String>,
    pub answers_by_id: std::collections::BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub strategy: Option<String>,
    #[serde(default)]
    pub episode: Option<EpisodeOverrides>,
    pub backend: Option<String>,
    #[serde(default)]
    pub http: Option<HttpBackendConfig>,
    #[serde(default)]
    pub stochastic: Option<StochasticBackendConfig>,
    #[serde(default)]
    pub scripted: Option<ScriptedConfig>,
    pub manifest: Option<String>,
    pub out_dir: Option<String>,
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub group_tags: Vec<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub normalization: Option<NormalizationPolicy>,
    pub templates_file: Option<String>,
    #[serde(default)]
    pub keep_going: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeOverrides {
    pub max_iterations: Option<u32>,
    pub reobserve_period: Option<u32>,
    pub enable_visual_description: Option<bool>,
    pub enable_history_context: Option<bool>,
    pub enable_reobservation: Option<bool>,
    pub self_consistency_k: Option<u32>,
    pub false_seed: Option<Vec<String>>,
    pub exemplars: Option<Vec<hgivr::model::Exemplar>>,
}

impl RunConfigFile {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("parse {}: {e}", path.display()))
    }

    pub fn empty() -> Self {
        RunConfigFile {
            strategy: None,
            episode: None,
            backend: None,
            http: None,
            stochastic: None,
            scripted: None,
            manifest: None,
            out_dir: None,
            parallelism: None,
            group_tags: Vec::new(),
            seed: None,
            normalization: None,
            templates_file: None,
            keep_going: None,
        }
    }
}

/// Comma-separated seed answers from `--false-seed`, normalized as free text
/// or choice letters.
pub fn parse_false_seed(list: &str) -> Result<Vec<Answer>, String> {
    let policy = NormalizationPolicy::default();
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let normalized = hgivr::codec::normalize(s, &policy);
            if normalized.is_empty() || normalized == "none" {
                return Err(format!("invalid seed answer {s:?}"));
            }
            let mut chars = normalized.chars();
            let answer = if let (Some(c), None) = (chars.next(), chars.next()) {
                if c.is_ascii_alphabetic() {
                    Answer {
                        raw: s.to_string(),
                        normalized: c.to_ascii_uppercase().to_string(),
                        kind: AnswerKind::ChoiceLetter,
                    }
                } else {
                    Answer {
                        raw: s.to_string(),
                        normalized,
                        kind: AnswerKind::FreeText,
                    }
                }
            } else {
                Answer {
                    raw: s.to_string(),
                    normalized,
                    kind: AnswerKind::FreeText,
                }
            };
            Ok(answer)
        })
        .collect()
}

pub fn build_episode_config(
    strategy: Strategy,
    file: &RunConfigFile,
    max_iterations: Option<u32>,
    no_describe: bool,
    no_history: bool,
    no_reobserve: bool,
    sc_k: Option<u32>,
    false_seed: Option<&str>,
) -> Result<EpisodeConfig, String> {
    let mut cfg = EpisodeConfig::new(strategy);
    if let Some(ep) = &file.episode {
        if let Some(v) = ep.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = ep.reobserve_period {
            cfg.reobserve_period = v;
        }
        if let Some(v) = ep.enable_visual_description {
            cfg.enable_visual_description = v;
        }
        if let Some(v) = ep.enable_history_context {
            cfg.enable_history_context = v;
        }
        if let Some(v) = ep.enable_reobservation {
            cfg.enable_reobservation = v;
        }
        if let Some(v) = ep.self_consistency_k {
            cfg.self_consistency_k = v;
        }
        if let Some(seeds) = &ep.false_seed {
            cfg.false_seed = parse_false_seed(&seeds.join(","))?;
        }
        if let Some(ex) = &ep.exemplars {
            cfg.exemplars = ex.clone();
        }
    }
    // CLI flags win over the file.
    if let Some(v) = max_iterations {
        cfg.max_iterations = v;
    }
    if no_describe {
        cfg.enable_visual_description = false;
    }
    if no_history {
        cfg.enable_history_context = false;
    }
    if no_reobserve {
        cfg.enable_reobservation = false;
    }
    if let Some(k) = sc_k {
        cfg.self_consistency_k = k;
    }
    if let Some(list) = false_seed {
        cfg.false_seed = parse_false_seed(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_templates(file: &RunConfigFile) -> Result<PromptTemplateSet, String> {
    match &file.templates_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("read {path}: {e}"))?;
            hgivr::prompt::load_template_overrides(&text).map_err(|e| e.to_string())
        }
        None => Ok(PromptTemplateSet::default()),
    }
}
