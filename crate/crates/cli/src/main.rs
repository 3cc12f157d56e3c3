use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use diffchain::chain::persist::{
    load_classifier, load_model, load_set, read_json, round_to_f32, save_classifier, save_model,
    save_set, write_json,
};
use diffchain::chain::{analyze_run, emit_report, load_report, run_chain_with, ChainConfig};
use diffchain::diffusion::{pretrain, EpsModel, ModelConfig, NoiseSchedule, TrainConfig};
use diffchain::glyphgen::{generate_set, Role, NUM_CLASSES};
use diffchain::metrics::{make_extractor, train_frozen_classifier, Evaluator};

const MODEL_FILE: &str = "model.rdt";
const CLASSIFIER_FILE: &str = "classifier.rdt";
const PRETRAIN_META: &str = "pretrain.json";

#[derive(Parser)]
#[command(
    name = "diffchain",
    version,
    about = "Self-consuming diffusion chains on procedural glyphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labeled glyph set.
    GenData {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base model and the frozen alignment classifier.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a chain from a JSON config.
    Chain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the forensic files of a finished run.
    Analyze {
        #[arg(long)]
        run: PathBuf,
    },
    /// Rewrite the report files of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Chain { .. } => "chain",
            Command::Analyze { .. } => "analyze",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PretrainMeta {
    seed: u64,
    train: TrainConfig,
    model: ModelConfig,
    final_loss: f64,
}

fn gen_data(role: Role, n: usize, seed: u64, out: &Path) -> Result<()> {
    let set = generate_set(role, n, seed)?;
    save_set(out, &set)?;
    eprintln!("wrote {n} glyphs to {}", out.display());
    Ok(())
}

fn run_pretrain(data: &Path, epochs: Option<usize>, seed: u64, out: &Path) -> Result<()> {
    let set = load_set(data).with_context(|| format!("loading {}", data.display()))?;
    let mut cfg = TrainConfig::pretrain();
    cfg.seed = seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let sched = NoiseSchedule::default();
    let mut model = EpsModel::new(ModelConfig::default(), seed)?;
    let outcome = pretrain(&mut model, &set, &cfg, &sched)?;
    round_to_f32(&mut model);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_model(&out.join(MODEL_FILE), &model)?;
    outcome.write_csv(&out.join("loss.csv"))?;

    let mut clf = train_frozen_classifier(&set, NUM_CLASSES, seed)?;
    round_to_f32(&mut clf);
    save_classifier(&out.join(CLASSIFIER_FILE), &clf)?;

    let final_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let meta = PretrainMeta {
        seed,
        train: cfg,
        model: model.config.clone(),
        final_loss,
    };
    write_json(&out.join(PRETRAIN_META), &meta)?;
    eprintln!(
        "pretrained to {} (final loss {final_loss:.5})",
        out.display()
    );
    Ok(())
}

fn run_chain_cmd(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ChainConfig::load(config)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let pre = &cfg.pretrained_dir;
    let model = load_model(&pre.join(MODEL_FILE))
        .with_context(|| format!("loading base model from {}", pre.display()))?;
    let clf = load_classifier(&pre.join(CLASSIFIER_FILE))
        .with_context(|| format!("loading classifier from {}", pre.display()))?;
    let _: PretrainMeta = read_json(&pre.join(PRETRAIN_META))?;
    let d0 = match &cfg.d0_dir {
        Some(dir) => load_set(dir).with_context(|| format!("loading {}", dir.display()))?,
        None => generate_set(Role::Target, cfg.n, cfg.seed)?,
    };
    let evaluator = Evaluator::new(make_extractor(cfg.metrics_seed), clf, &d0)?;
    let sched = NoiseSchedule::default();
    let report = run_chain_with(&cfg, &model, &d0, &evaluator, &sched, |a, secs| {
        eprintln!(
            "iteration {}: ffd {:.4} sfd {:.4} alignment {:.3} diff {:.4} std {:.4} ({secs:.1}s)",
            a.iteration,
            a.metrics.ffd,
            a.metrics.sfd,
            a.metrics.alignment,
            a.mean_diff_norm,
            a.pixel_std
        );
    })?;
    match report.reusability {
        Some(r) => eprintln!("reusability {r:.4}; report in {}", cfg.output_dir.display()),
        None => eprintln!("report in {}", cfg.output_dir.display()),
    }
    Ok(())
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::GenData { role, n, seed, out } => gen_data(*role, *n, *seed, out),
        Command::Pretrain {
            data,
            epochs,
            seed,
            out,
        } => run_pretrain(data, *epochs, *seed, out),
        Command::Chain { config, out } => run_chain_cmd(config, out.clone()),
        Command::Analyze { run } => {
            let rows = analyze_run(run)?;
            eprintln!("analyzed {} sets in {}", rows.len(), run.display());
            Ok(())
        }
        Command::Report { run } => {
            let report = load_report(run)?;
            if report.iterations.is_empty() {
                bail!("run has no iterations");
            }
            emit_report(&report, run)?;
            eprintln!("report rewritten in {}", run.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", cli.command.stage());
            ExitCode::FAILURE
        }
    }
}
