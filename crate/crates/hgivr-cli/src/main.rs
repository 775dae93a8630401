mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{BackendChoice, RunConfigFile};
use hgivr::backends::{HttpBackend, HttpBackendConfig, ScriptedBackend, StochasticBackend};
use hgivr::engine::Engine;
use hgivr::model::{
    read_manifest_file, validate_manifest, write_transcripts, QuestionInstance, Strategy,
};
use hgivr::runner::{episode_seed, run_manifest};
use hgivr::StochasticBackendConfig;

#[derive(Parser)]
#[command(name = "hgivr", about = "Iterative visual-reasoning harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy over a manifest and write transcripts + a report
    Run(RunArgs),
    /// Run seeded stochastic episodes and report empirical mean answer calls
    Simulate(SimulateArgs),
    /// Compare report files against a baseline
    Compare(CompareArgs),
    /// Validate a manifest file and list violations
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for transcripts.jsonl, report.json, report.csv
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    no_describe: bool,
    #[arg(long)]
    no_history: bool,
    #[arg(long)]
    no_reobserve: bool,
    #[arg(long)]
    sc_k: Option<u32>,
    /// Comma-separated answers pre-loaded into the history list
    #[arg(long)]
    false_seed: Option<String>,
    /// Tag keys for grouped breakdowns, comma-separated
    #[arg(long)]
    group_by: Option<String>,
    #[arg(long)]
    keep_going: bool,
    // HTTP overrides (flag > env > config file)
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size of the uniform answer space
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    no_describe: bool,
    #[arg(long)]
    no_history: bool,
    #[arg(long)]
    no_reobserve: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Print the exact expected value next to the empirical mean
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    history_bias: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report JSON files; the last one is "ours" in the gain row
    reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    baseline_index: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    manifest: PathBuf,
}

/// Report file layout: the aggregate plus the manifest digest used for
/// compatibility checks in `compare`.
#[derive(Serialize, Deserialize)]
struct ReportFile {
    manifest_digest: String,
    report: hgivr::RunReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile, String> {
    match path {
        Some(p) => RunConfigFile::load(p),
        None => Ok(RunConfigFile::empty()),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let file = load_config(args.config.as_deref())?;

    let strategy_name = args
        .strategy
        .or_else(|| file.strategy.clone())
        .ok_or("strategy required (--strategy or config)")?;
    let strategy = Strategy::parse(&strategy_name)
        .ok_or_else(|| format!("unknown strategy {strategy_name:?}"))?;

    let cfg = config::build_episode_config(
        strategy,
        &file,
        args.max_iterations,
        args.no_describe,
        args.no_history,
        args.no_reobserve,
        args.sc_k,
        args.false_seed.as_deref(),
    )?;
    if !cfg.false_seed.is_empty() {
        eprintln!(
            "note: --false-seed pre-loads known answers into the history list; \
             this mode is for methodological validation, not deployment"
        );
    }

    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| file.manifest.clone().map(PathBuf::from))
        .ok_or("manifest required (--manifest or config)")?;
    let manifest = read_manifest_file(&manifest_path).map_err(|e| e.to_string())?;
    let violations = validate_manifest(&manifest);
    if !violations.is_empty() {
        eprintln!("manifest validation failed:");
        for v in &violations {
            eprintln!("  {v}");
        }
        return Ok(ExitCode::from(2));
    }

    let backend_name = args
        .backend
        .or_else(|| file.backend.clone())
        .ok_or("backend required (--backend or config)")?;
    let backend = BackendChoice::parse(&backend_name)
        .ok_or_else(|| format!("unknown backend {backend_name:?} (http|scripted|stochastic)"))?;

    let templates = config::load_templates(&file)?;
    let engine = Engine {
        templates,
        policy: file.normalization.unwrap_or_default(),
    };

    let seed = args.seed.or(file.seed).unwrap_or(0);
    let parallelism = args.parallelism.or(file.parallelism).unwrap_or(1);
    let keep_going = args.keep_going || file.keep_going.unwrap_or(false);

    // Shared HTTP backend across episodes; scripted/stochastic are per-episode.
    let http_backend = match backend {
        BackendChoice::Http => {
            let mut http_cfg = file.http.clone().unwrap_or_else(|| {
                HttpBackendConfig::new("", "")
            });
            if let Some(v) = &args.base_url {
                http_cfg.base_url = v.clone();
            }
            if let Some(v) = &args.model {
                http_cfg.model_name = v.clone();
            }
            if let Some(v) = &args.api_key {
                http_cfg.api_key = Some(v.clone());
            }
            http_cfg.apply_env();
            Some(std::sync::Arc::new(HttpBackend::new(http_cfg)?))
        }
        _ => None,
    };

    let scripted_cfg = file.scripted.clone().unwrap_or_default();
    let stochastic_cfg = file.stochastic.clone();

    let factory = |i: usize, q: &QuestionInstance| -> Result<
        Box<dyn hgivr::ModelBackend>,
        String,
    > {
        match backend {
            BackendChoice::Http => {
                let shared = http_backend.as_ref().unwrap().clone();
                Ok(Box::new(SharedHttp(shared)))
            }
            BackendChoice::Scripted => {
                let answers = scripted_cfg
                    .answers_by_id
                    .get(&q.id)
                    .unwrap_or(&scripted_cfg.default_answers);
                let descriptions = if scripted_cfg.descriptions.is_empty() {
                    (0..32).map(|i| format!("Scripted description {i}.")).collect()
                } else {
                    scripted_cfg.descriptions.clone()
                };
                Ok(Box::new(ScriptedBackend::new(descriptions, answers.clone())))
            }
            BackendChoice::Stochastic => {
                let mut cfg = stochastic_cfg
                    .clone()
                    .ok_or("stochastic backend requires a [stochastic] config section")?;
                cfg.seed = episode_seed(seed, i);
                StochasticBackend::new(cfg).map(|b| Box::new(b) as Box<dyn hgivr::ModelBackend>)
            }
        }
    };

    let outcome = run_manifest(&engine, &manifest, &cfg, &factory, parallelism, keep_going);

    let mut transcripts = Vec::new();
    let mut verdicts = Vec::new();
    let mut failures = 0usize;
    for (q, result) in manifest.iter().zip(&outcome.results) {
        match result {
            Ok(o) => {
                verdicts.push(hgivr::score(&o.transcript, q).map_err(|e| e.to_string())?);
                transcripts.push(o.transcript.clone());
            }
            Err(e) => {
                eprintln!("episode {} failed: {e}", q.id);
                failures += 1;
            }
        }
    }

    if failures > 0 && !keep_going {
        return Ok(ExitCode::from(1));
    }

    let scored_manifest: Vec<QuestionInstance> = manifest
        .iter()
        .filter(|q| transcripts.iter().any(|t| t.question_id == q.id))
        .cloned()
        .collect();
    let group_tags: Vec<String> = args
        .group_by
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect())
        .unwrap_or_else(|| file.group_tags.clone());
    let report = hgivr::aggregate(&verdicts, &transcripts, &scored_manifest, &group_tags)
        .map_err(|e| e.to_string())?;
    let manifest_digest = hgivr::manifest_digest(&manifest);

    if let Some(out_dir) = args.out.clone().or_else(|| file.out_dir.clone().map(PathBuf::from)) {
        std::fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
        let f = std::fs::File::create(out_dir.join("transcripts.jsonl"))
            .map_err(|e| e.to_string())?;
        write_transcripts(std::io::BufWriter::new(f), &transcripts)
            .map_err(|e| e.to_string())?;
        let report_file = ReportFile {
            manifest_digest: manifest_digest.clone(),
            report: report.clone(),
        };
        std::fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&report_file).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let dataset = manifest_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("manifest");
        std::fs::write(
            out_dir.join("report.csv"),
            hgivr::eval::report_to_csv(&report, dataset).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
    }

    println!(
        "strategy={} n={} accuracy={:.4} avg_answer_calls={:.3} avg_total_calls={:.3}",
        report.strategy,
        report.n_questions,
        report.accuracy,
        report.avg_answer_calls,
        report.avg_total_calls
    );
    for (status, count) in &report.per_status {
        println!("  status {status}: {count}");
    }
    for (tag, values) in &report.groups {
        for (value, g) in values {
            println!(
                "  group {tag}={value}: n={} accuracy={:.4} avg_answer_calls={:.3}",
                g.n, g.accuracy, g.avg_answer_calls
            );
        }
    }

    Ok(if failures > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Adapter sharing one HTTP backend across per-episode factory calls.
struct SharedHttp(std::sync::Arc<HttpBackend>);

impl hgivr::ModelBackend for SharedHttp {
    fn backend_id(&self) -> &str {
        self.0.backend_id()
    }
    fn describe(
        &self,
        image: &hgivr::ImageRef,
        prompt: &str,
    ) -> Result<String, hgivr::BackendError> {
        self.0.describe(image, prompt)
    }
    fn answer(
        &self,
        image: &hgivr::ImageRef,
        prompt: &str,
    ) -> Result<String, hgivr::BackendError> {
        self.0.answer(image, prompt)
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, String> {
    let file = load_config(args.config.as_deref())?;
    if args.m < 1 || args.m > 24 {
        return Err("--m must be between 1 and 24".into());
    }
    let mut cfg = hgivr::EpisodeConfig::new(Strategy::Hgivr);
    if let Some(v) = args.max_iterations {
        cfg.max_iterations = v;
    }
    if args.no_describe {
        cfg.enable_visual_description = false;
    }
    if args.no_history {
        cfg.enable_history_context = false;
    }
    if args.no_reobserve {
        cfg.enable_reobservation = false;
    }

    let labels: Vec<String> = (0..args.m)
        .map(|i| hgivr::model::choice_letter(i).to_string())
        .collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut sto_cfg = file.stochastic.clone().unwrap_or_else(|| {
        StochasticBackendConfig::uniform(&label_refs, args.seed)
    });
    if let Some(bias) = args.history_bias {
        sto_cfg.history_bias = bias;
    }
    if args.oracle && !sto_cfg.is_iid() {
        return Err(
            "--oracle requires an i.i.d. configuration: the exact enumerator does not apply \
             when history_bias or description_quality_lift is nonzero"
                .into(),
        );
    }

    // Synthetic open-ended question; the answer space carries the labels.
    let question = QuestionInstance {
        id: "sim".into(),
        text: "Synthetic simulation question.".into(),
        image: hgivr::ImageRef::Path("synthetic.png".into()),
        choices: None,
        gold: vec![labels[0].clone()],
        tags: vec![],
    };
    let manifest: Vec<QuestionInstance> = (0..args.episodes)
        .map(|i| {
            let mut q = question.clone();
            q.id = format!("sim{i}");
            q
        })
        .collect();

    let engine = Engine::default();
    let factory = |i: usize, _q: &QuestionInstance| -> Result<Box<dyn hgivr::ModelBackend>, String> {
        let mut cfg = sto_cfg.clone();
        cfg.seed = episode_seed(args.seed, i);
        StochasticBackend::new(cfg).map(|b| Box::new(b) as Box<dyn hgivr::ModelBackend>)
    };
    let parallelism = args.parallelism.unwrap_or(1);
    let outcome = run_manifest(&engine, &manifest, &cfg, &factory, parallelism, false);

    let mut total_answer_calls = 0u64;
    let mut total_calls = 0u64;
    let mut n = 0u64;
    for r in &outcome.results {
        let o = r.as_ref().map_err(|e| e.to_string())?;
        total_answer_calls += o.transcript.answer_call_count as u64;
        total_calls += o.transcript.total_call_count as u64;
        n += 1;
    }
    let mean_answer = total_answer_calls as f64 / n as f64;
    let mean_total = total_calls as f64 / n as f64;
    println!(
        "episodes={} m={} mean_answer_calls={:.4} mean_total_calls={:.4}",
        n, args.m, mean_answer, mean_total
    );
    if args.oracle {
        let exact =
            hgivr::oracle::expected_answer_calls(&sto_cfg.distribution, cfg.max_iterations);
        let rel = (mean_answer - exact).abs() / exact;
        println!(
            "exact_expected_answer_calls={:.6} relative_error={:.4}",
            exact, rel
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, String> {
    if args.reports.len() < 2 {
        eprintln!("usage: hgivr compare <report.json> <report.json> [...]");
        return Ok(ExitCode::from(2));
    }
    if args.baseline_index >= args.reports.len() {
        eprintln!(
            "usage: --baseline-index {} out of range for {} reports",
            args.baseline_index,
            args.reports.len()
        );
        return Ok(ExitCode::from(2));
    }
    let mut reports = Vec::new();
    let mut digests = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("read {}: {e}", path.display()))?;
        let rf: ReportFile = serde_json::from_str(&text)
            .map_err(|e| format!("parse {}: {e}", path.display()))?;
        digests.push(rf.manifest_digest);
        reports.push(rf.report);
    }
    let cmp = hgivr::compare(&reports, &digests, args.baseline_index)
        .map_err(|e| e.to_string())?;

    println!(
        "{:<18} {:>9} {:>12} {:>11} {:>8}",
        "strategy", "accuracy", "answer_calls", "total_calls", "delta"
    );
    for row in &cmp.rows {
        println!(
            "{:<18} {:>9.4} {:>12.3} {:>11.3} {:>+8.4}",
            row.strategy, row.accuracy, row.avg_answer_calls, row.avg_total_calls,
            row.delta_accuracy
        );
    }
    println!("gain over best baseline: {:+.4}", cmp.gain_over_best_baseline);

    if let Some(out) = &args.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&cmp).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode, String> {
    let manifest = read_manifest_file(&args.manifest).map_err(|e| e.to_string())?;
    let violations = validate_manifest(&manifest);
    if violations.is_empty() {
        println!("ok: {} questions", manifest.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &violations {
            println!("{v}");
        }
        Ok(ExitCode::from(2))
    }
}
