//! Scoring against gold answers and aggregation into run reports: accuracy,
//! average answer/total calls, status histogram, and per-tag breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{normalize, NormalizationPolicy};
use crate::model::{
    letter_index, EpisodeConfig, EpisodeStatus, QuestionInstance, Transcript, Verdict,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("transcript question_id {transcript} does not match question {question}")]
    IdMismatch { transcript: String, question: String },
    #[error("missing verdict or transcript for question {0}")]
    Missing(String),
    #[error("duplicate transcript for question {0}")]
    Duplicate(String),
    #[error("manifest digest mismatch: {0} vs {1}")]
    DigestMismatch(String, String),
    #[error("need at least 2 reports to compare")]
    TooFewReports,
    #[error("baseline index {0} out of range")]
    BaselineOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Off by default: exact match against the gold list. When on, open-ended
    /// answers score min(matches/3, 1) over the annotator gold list.
    pub soft_accuracy: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            soft_accuracy: false,
        }
    }
}

/// Scores one transcript. Multiple-choice: the final choice letter must index
/// a choice whose normalized text matches a normalized gold answer, or the
/// gold is that letter itself. Open-ended: exact match on normalized forms.
/// None-kind finals are always incorrect.
pub fn score(transcript: &Transcript, q: &QuestionInstance) -> Result<Verdict, EvalError> {
    if transcript.question_id != q.id {
        return Err(EvalError::IdMismatch {
            transcript: transcript.question_id.clone(),
            question: q.id.clone(),
        });
    }
    let policy = NormalizationPolicy::default();
    let final_answer = &transcript.final_answer;
    let mut matched_gold = None;

    if !final_answer.is_none_kind() {
        match &q.choices {
            Some(choices) => {
                let letter = final_answer.normalized.chars().next();
                if let Some(idx) = letter.and_then(|c| letter_index(c, choices.len())) {
                    let choice_norm = normalize(&choices[idx], &policy);
                    matched_gold = q.gold.iter().find(|g| {
                        let g_norm = normalize(g, &policy);
                        g_norm == choice_norm
                            || g_norm == final_answer.normalized.to_lowercase()
                            || g_norm.eq_ignore_ascii_case(&final_answer.normalized)
                    });
                }
            }
            None => {
                matched_gold = q
                    .gold
                    .iter()
                    .find(|g| normalize(g, &policy) == final_answer.normalized);
            }
        }
    }

    Ok(Verdict {
        question_id: q.id.clone(),
        correct: matched_gold.is_some(),
        matched_gold: matched_gold.cloned(),
        final_answer: final_answer.clone(),
    })
}

/// Soft score for open-ended questions: min(matches/3, 1) over the gold list.
pub fn soft_score(transcript: &Transcript, q: &QuestionInstance) -> f64 {
    if transcript.final_answer.is_none_kind() || q.choices.is_some() {
        return score(transcript, q).map(|v| v.correct as u8 as f64).unwrap_or(0.0);
    }
    let policy = NormalizationPolicy::default();
    let matches = q
        .gold
        .iter()
        .filter(|g| normalize(g, &policy) == transcript.final_answer.normalized)
        .count();
    (matches as f64 / 3.0).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n: usize,
    pub accuracy: f64,
    pub avg_answer_calls: f64,
    pub avg_total_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: String,
    pub n_questions: usize,
    pub accuracy: f64,
    pub avg_answer_calls: f64,
    pub avg_total_calls: f64,
    pub per_status: BTreeMap<String, usize>,
    /// tag key -> tag value -> sub-report.
    pub groups: BTreeMap<String, BTreeMap<String, GroupReport>>,
    pub config_digest: String,
}

fn status_key(s: EpisodeStatus) -> &'static str {
    match s {
        EpisodeStatus::Running => "running",
        EpisodeStatus::Confirmed => "confirmed",
        EpisodeStatus::NoneBreak => "none_break",
        EpisodeStatus::Exhausted => "exhausted",
        EpisodeStatus::SingleShot => "single_shot",
        EpisodeStatus::Voted => "voted",
    }
}

/// Stable digest over the canonicalized episode config and manifest, so
/// compare() can refuse apples-to-oranges comparisons.
pub fn config_digest(cfg: &EpisodeConfig, manifest: &[QuestionInstance]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    for q in manifest {
        hasher.update(serde_json::to_vec(q).expect("question serializes"));
    }
    hex_prefix(&hasher.finalize())
}

/// Digest over the manifest alone; shared by runs of different strategies on
/// the same dataset.
pub fn manifest_digest(manifest: &[QuestionInstance]) -> String {
    let mut hasher = Sha256::new();
    for q in manifest {
        hasher.update(serde_json::to_vec(q).expect("question serializes"));
    }
    hex_prefix(&hasher.finalize())
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn aggregate(
    verdicts: &[Verdict],
    transcripts: &[Transcript],
    manifest: &[QuestionInstance],
    group_tags: &[String],
) -> Result<RunReport, EvalError> {
    let by_id: BTreeMap<&str, (&Verdict, &Transcript)> = {
        let mut m = BTreeMap::new();
        for (v, t) in verdicts.iter().zip(transcripts) {
            if m.insert(v.question_id.as_str(), (v, t)).is_some() {
                return Err(EvalError::Duplicate(v.question_id.clone()));
            }
        }
        m
    };
    let mut correct = 0usize;
    let mut answer_calls = 0u64;
    let mut total_calls = 0u64;
    let mut per_status: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: BTreeMap<String, BTreeMap<String, (usize, usize, u64, u64)>> =
        BTreeMap::new();

    for q in manifest {
        let (v, t) = by_id
            .get(q.id.as_str())
            .ok_or_else(|| EvalError::Missing(q.id.clone()))?;
        if v.correct {
            correct += 1;
        }
        answer_calls += t.answer_call_count as u64;
        total_calls += t.total_call_count as u64;
        *per_status
            .entry(status_key(t.terminal_status).to_string())
            .or_default() += 1;
        for key in group_tags {
            if let Some(value) = q.tag(key) {
                let cell = groups
                    .entry(key.clone())
                    .or_default()
                    .entry(value.to_string())
                    .or_default();
                cell.0 += 1;
                cell.1 += v.correct as usize;
                cell.2 += t.answer_call_count as u64;
                cell.3 += t.total_call_count as u64;
            }
        }
    }

    let n = manifest.len();
    let strategy = transcripts
        .first()
        .map(|t| t.config.strategy.label().to_string())
        .unwrap_or_default();
    let config_digest = transcripts
        .first()
        .map(|t| config_digest(&t.config, manifest))
        .unwrap_or_default();

    Ok(RunReport {
        strategy,
        n_questions: n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        avg_answer_calls: if n == 0 { 0.0 } else { answer_calls as f64 / n as f64 },
        avg_total_calls: if n == 0 { 0.0 } else { total_calls as f64 / n as f64 },
        per_status,
        groups: groups
            .into_iter()
            .map(|(k, vals)| {
                (
                    k,
                    vals.into_iter()
                        .map(|(val, (gn, gc, ga, gt))| {
                            (
                                val,
                                GroupReport {
                                    n: gn,
                                    accuracy: gc as f64 / gn as f64,
                                    avg_answer_calls: ga as f64 / gn as f64,
                                    avg_total_calls: gt as f64 / gn as f64,
                                },
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
        config_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub accuracy: f64,
    pub avg_answer_calls: f64,
    pub avg_total_calls: f64,
    /// Delta against the designated baseline report.
    pub delta_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    /// Last report's accuracy minus the best accuracy among the others;
    /// negative when the best baseline wins.
    pub gain_over_best_baseline: f64,
}

/// Reports must share a manifest digest (config digests differ by strategy, so
/// comparability is checked on the manifest portion embedded by the caller).
pub fn compare(
    reports: &[RunReport],
    manifest_digests: &[String],
    baseline_index: usize,
) -> Result<Comparison, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports);
    }
    if baseline_index >= reports.len() {
        return Err(EvalError::BaselineOutOfRange(baseline_index));
    }
    if let Some(first) = manifest_digests.first() {
        for d in manifest_digests.iter().skip(1) {
            if d != first {
                return Err(EvalError::DigestMismatch(first.clone(), d.clone()));
            }
        }
    }
    let baseline = &reports[baseline_index];
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            strategy: r.strategy.clone(),
            accuracy: r.accuracy,
            avg_answer_calls: r.avg_answer_calls,
            avg_total_calls: r.avg_total_calls,
            delta_accuracy: r.accuracy - baseline.accuracy,
        })
        .collect();
    let ours = reports.last().unwrap();
    let best_baseline = reports[..reports.len() - 1]
        .iter()
        .map(|r| r.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Comparison {
        baseline: baseline.strategy.clone(),
        rows,
        gain_over_best_baseline: ours.accuracy - best_baseline,
    })
}

/// Flat CSV rows: strategy, dataset, group, n, accuracy, avg_answer_calls,
/// avg_total_calls. The overall row uses group "all".
pub fn report_to_csv(report: &RunReport, dataset: &str) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "dataset",
        "group",
        "n",
        "accuracy",
        "avg_answer_calls",
        "avg_total_calls",
    ])?;
    w.write_record([
        report.strategy.as_str(),
        dataset,
        "all",
        &report.n_questions.to_string(),
        &format!("{:.4}", report.accuracy),
        &format!("{:.4}", report.avg_answer_calls),
        &format!("{:.4}", report.avg_total_calls),
    ])?;
    for (tag, values) in &report.groups {
        for (value, g) in values {
            w.write_record([
                report.strategy.as_str(),
                dataset,
                &format!("{tag}={value}"),
                &g.n.to_string(),
                &format!("{:.4}", g.accuracy),
                &format!("{:.4}", g.avg_answer_calls),
                &format!("{:.4}", g.avg_total_calls),
            ])?;
        }
    }
    let bytes = w.into_inner().expect("in-memory writer");
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
