//! The self-consuming loop: every iteration attaches a fresh adapter to the
//! fixed base model, finetunes it on the previous generation and samples the
//! next one with the prompt list of the original set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::analyze::{analyze_set, save_final_state};
use super::config::ChainConfig;
use super::persist::{round_to_f32, save_adapter, save_set, write_json};
use super::report::emit_report;
use super::scenario::apply_scenario;
use crate::diffusion::{attach_lora, finetune, EpsModel, NoiseSchedule};
use crate::forensics::{diff_trace_summary, TraceRow};
use crate::glyphgen::LabeledSet;
use crate::guidance::{generate_set, SamplerOptions};
use crate::metrics::{reusability, Evaluator, MetricsRecord};
use crate::rng::{derive_seed, purpose_id};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationArtifact {
    pub iteration: usize,
    /// Paths are relative to the run directory.
    pub adapter_path: String,
    pub set_path: String,
    pub trace_path: String,
    pub loss_path: String,
    pub fingerprint_paths: Vec<String>,
    pub metrics: MetricsRecord,
    pub mean_diff_norm: f64,
    pub pixel_std: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub config: ChainConfig,
    pub records: Vec<MetricsRecord>,
    /// `None` for single-iteration chains.
    pub reusability: Option<f64>,
    pub d0_pixel_std: f64,
    pub iterations: Vec<IterationArtifact>,
    pub traces: Vec<TraceRow>,
    /// Seconds per iteration; kept out of the deterministic report files.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
}

impl ChainReport {
    pub fn iteration(&self, k: usize) -> Option<&IterationArtifact> {
        self.iterations.iter().find(|a| a.iteration == k)
    }
}

pub fn iteration_dir_name(k: usize) -> String {
    format!("iter_{k:02}")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Seed of the adapter attached at iteration `k`.
fn adapter_seed(seed: u64, k: usize) -> u64 {
    derive_seed(&[seed, purpose_id("adapter"), k as u64])
}

fn train_seed(cfg: &ChainConfig, k: usize) -> u64 {
    derive_seed(&[cfg.seed, cfg.train.seed, purpose_id("finetune"), k as u64])
}

pub fn run_chain(
    cfg: &ChainConfig,
    base: &EpsModel,
    d0: &LabeledSet,
    evaluator: &Evaluator,
    sched: &NoiseSchedule,
) -> Result<ChainReport> {
    run_chain_with(cfg, base, d0, evaluator, sched, |_, _| {})
}

/// [`run_chain`] with a callback after every completed iteration.
pub fn run_chain_with(
    cfg: &ChainConfig,
    base: &EpsModel,
    d0: &LabeledSet,
    evaluator: &Evaluator,
    sched: &NoiseSchedule,
    mut progress: impl FnMut(&IterationArtifact, f64),
) -> Result<ChainReport> {
    cfg.validate()?;
    if d0.iteration != 0 {
        return Err(Error::config(format!(
            "original set must be iteration 0, got {}",
            d0.iteration
        )));
    }
    if d0.len() != cfg.n {
        return Err(Error::Shape {
            expected: cfg.n,
            actual: d0.len(),
        });
    }
    let out = cfg.output_dir.as_path();
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;

    let origin_dir = out.join(iteration_dir_name(0));
    create_dir(&origin_dir)?;
    save_set(&origin_dir.join("set"), d0)?;
    analyze_set(&origin_dir, d0, None)?;

    let prompts = d0.labels();
    let mut current = d0.clone();
    let mut iterations = Vec::with_capacity(cfg.k_iterations);
    let mut traces = Vec::new();
    let mut wall_clock = Vec::new();
    for k in 0..cfg.k_iterations {
        let started = Instant::now();
        let it = k + 1;
        let (artifact, next, rows) =
            run_iteration(cfg, base, d0, &current, &prompts, evaluator, sched, k).map_err(|e| {
                Error::Iteration {
                    iteration: it,
                    source: Box::new(e),
                }
            })?;
        let secs = started.elapsed().as_secs_f64();
        progress(&artifact, secs);
        wall_clock.push(secs);
        traces.extend(rows);
        iterations.push(artifact);
        current = next;
    }

    let records: Vec<MetricsRecord> = iterations.iter().map(|a| a.metrics).collect();
    let reusability = if cfg.k_iterations >= 2 {
        Some(reusability(&records, cfg.k_iterations)?)
    } else {
        None
    };
    let report = ChainReport {
        config: cfg.clone(),
        records,
        reusability,
        d0_pixel_std: d0.pixel_std(),
        iterations,
        traces,
        wall_clock,
    };
    emit_report(&report, out)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    cfg: &ChainConfig,
    base: &EpsModel,
    d0: &LabeledSet,
    current: &LabeledSet,
    prompts: &[usize],
    evaluator: &Evaluator,
    sched: &NoiseSchedule,
    k: usize,
) -> Result<(IterationArtifact, LabeledSet, Vec<TraceRow>)> {
    let it = k + 1;
    let name = iteration_dir_name(it);
    let dir: PathBuf = cfg.output_dir.join(&name);
    create_dir(&dir)?;

    let train_set = apply_scenario(current, d0, &cfg.scenario, cfg.seed, k)?;
    let mut adapter = attach_lora(
        base,
        cfg.lora.rank,
        cfg.lora.weight_scaling,
        adapter_seed(cfg.seed, k),
    )?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = train_seed(cfg, k);
    tcfg.freeze_embed = cfg.freeze_embed();
    let outcome = finetune(base, &mut adapter, &train_set, &tcfg, sched)?;
    round_to_f32(&mut adapter);
    save_adapter(&dir.join("adapter.rdt"), &adapter)?;
    outcome.write_csv(&dir.join("loss.csv"))?;

    let options = SamplerOptions {
        record_snapshots: true,
    };
    let (mut generated, mut trace) = generate_set(
        base,
        Some(&adapter),
        prompts,
        &cfg.guidance,
        sched,
        cfg.seed,
        it,
        cfg.scenario.images_per_prompt,
        options,
    )?;
    if generated.samples[..prompts.len()]
        .iter()
        .map(|s| s.label)
        .ne(prompts.iter().copied())
    {
        return Err(Error::config(
            "generated labels diverged from the prompt list",
        ));
    }
    generated.iteration = it;
    let canonical = generated.head(cfg.n);
    let image_dim = base.config.image_dim;
    let final_state = trace.final_state().map(|s| s[..cfg.n * image_dim].to_vec());
    trace.snapshots = Vec::new();

    let metrics = evaluator.evaluate(it, &canonical)?;
    save_set(&dir.join("set"), &canonical)?;
    if let Some(state) = &final_state {
        save_final_state(&dir, state, cfg.n)?;
    }
    let forensics = analyze_set(&dir, &canonical, final_state.as_deref())?;
    trace.write_csv(it, &dir.join("trace.csv"))?;
    let rows = diff_trace_summary(&[(it, vec![trace.clone()])])?;

    let artifact = IterationArtifact {
        iteration: it,
        adapter_path: format!("{name}/adapter.rdt"),
        set_path: format!("{name}/set"),
        trace_path: format!("{name}/trace.csv"),
        loss_path: format!("{name}/loss.csv"),
        fingerprint_paths: forensics
            .files
            .iter()
            .map(|f| format!("{name}/{f}"))
            .collect(),
        metrics,
        mean_diff_norm: trace.mean_diff_norm(),
        pixel_std: canonical.pixel_std(),
        final_loss: outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
    };
    Ok((artifact, generated, rows))
}
