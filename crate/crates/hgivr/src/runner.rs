//! Runs a strategy over a whole manifest. Episodes are independent; the
//! parallelism knob bounds worker threads, and results come back in manifest
//! order regardless of scheduling. Each episode gets its own backend instance
//! from the factory, keyed by a per-episode seed derived from the base seed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::backends::ModelBackend;
use crate::engine::{Engine, EngineError, StrategyOutcome};
use crate::model::{EpisodeConfig, QuestionInstance};

/// Per-episode seed: stable under parallelism and question order.
pub fn episode_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(index as u64)
}

pub type BackendFactory<'a> =
    dyn Fn(usize, &QuestionInstance) -> Result<Box<dyn ModelBackend>, String> + Sync + 'a;

pub struct RunOutcome {
    /// One entry per manifest question, in manifest order.
    pub results: Vec<Result<StrategyOutcome, EngineError>>,
}

impl RunOutcome {
    pub fn failed(&self) -> usize {
        self.results.iter().filter(|r| r.is_err()).count()
    }
}

pub fn run_manifest(
    engine: &Engine,
    manifest: &[QuestionInstance],
    cfg: &EpisodeConfig,
    factory: &BackendFactory,
    parallelism: usize,
    keep_going: bool,
) -> RunOutcome {
    let n = manifest.len();
    let slots: Vec<Mutex<Option<Result<StrategyOutcome, EngineError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = std::sync::atomic::AtomicBool::new(false);
    let workers = parallelism.max(1).min(n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let q = &manifest[i];
                let result = match factory(i, q) {
                    Ok(backend) => engine.run_episode(q, cfg, backend.as_ref()),
                    Err(msg) => Err(EngineError::Config(msg)),
                };
                let failed = result.is_err();
                *slots[i].lock().unwrap() = Some(result);
                if failed && !keep_going {
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            });
        }
    });

    RunOutcome {
        results: slots
            .into_iter()
            .map(|s| {
                s.into_inner().unwrap().unwrap_or_else(|| {
                    Err(EngineError::Config("episode skipped after abort".into()))
                })
            })
            .collect(),
    }
}
