use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conda_core::adaptation::ContinualState;
use conda_core::harness::{
    domains, evaluate, grid_batchsize, grid_buffersize, load_checkpoint, run_experiment, run_seed,
    save_checkpoint, source_model, write_runs, ExperimentConfig, GridReport, Method, RunControl,
};
use conda_core::Result;

#[derive(Parser)]
#[command(
    name = "conda",
    version,
    about = "Continual source-free domain adaptation on synthetic domain pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set losses.gamma1=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source model and save it as a checkpoint per seed.
    TrainSource(Common),
    /// Adapt on the whole target domain at once.
    AdaptFull(Common),
    /// Adapt batch by batch with the configured method.
    AdaptContinual {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint (single seed only).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many batches in total and save a checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Continual-no-buffer and conda over several batch sizes.
    GridBatchsize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated batch sizes; defaults to `grid.batch_sizes`.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Conda over several buffer sizes (slots per class).
    GridBuffersize {
        #[command(flatten)]
        common: Common,
        /// Comma-separated slots per class; defaults to `grid.slots_per_class`.
        #[arg(long, value_delimiter = ',')]
        slots: Vec<usize>,
    },
    /// Target accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p, &c.set)?,
        None => ExperimentConfig::from_json_str("{}", &c.set)?,
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn single_seed(cfg: &ExperimentConfig) -> Result<u64> {
    match cfg.seeds.as_slice() {
        [s] => Ok(*s),
        _ => Err(conda_core::Error::Config(
            "this command needs exactly one seed (use --seed)".into(),
        )),
    }
}

fn print_grid(report: &GridReport, label: &str) {
    let mut seen = Vec::new();
    for r in &report.rows {
        if !seen.contains(&(r.variant, r.setting)) {
            seen.push((r.variant, r.setting));
            println!(
                "{} {label}={} mean_final_accuracy={:.4}",
                r.variant.name(),
                r.setting,
                report.mean(r.variant, r.setting)
            );
        }
    }
}

fn ckpt_path(dir: &Path, stem: &str, seed: u64) -> PathBuf {
    dir.join(format!("{stem}_seed{seed}.ckpt"))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::TrainSource(c) => {
            let cfg = load_config(&c)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| conda_core::Error::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
            for &seed in &cfg.seeds {
                let (src, tgt) = domains(&cfg, seed)?;
                let model = source_model(&cfg, seed, &src)?;
                println!(
                    "seed {seed}: source accuracy {:.4}, target accuracy {:.4}",
                    evaluate(&model, &src)?,
                    evaluate(&model, &tgt)?
                );
                let state = ContinualState::new(model, &cfg.continual_config(cfg.method), seed)?;
                save_checkpoint(&ckpt_path(&cfg.out_dir, "source", seed), &state)?;
            }
            Ok(false)
        }
        Command::AdaptFull(c) => {
            let mut cfg = load_config(&c)?;
            cfg.method = Method::FullTarget;
            report_runs(&run_experiment(&cfg)?.runs)
        }
        Command::AdaptContinual {
            common,
            resume,
            stop_after,
        } => {
            let cfg = load_config(&common)?;
            if cfg.method == Method::FullTarget {
                return Err(conda_core::Error::Config(
                    "adapt-continual needs method continual-no-buffer or conda".into(),
                ));
            }
            if resume.is_none() && stop_after.is_none() {
                let report = run_experiment(&cfg)?;
                for r in &report.runs {
                    save_checkpoint(&ckpt_path(&cfg.out_dir, "final", r.seed), &r.state)?;
                }
                return report_runs(&report.runs);
            }
            let seed = single_seed(&cfg)?;
            let (src, tgt) = domains(&cfg, seed)?;
            let model = source_model(&cfg, seed, &src)?;
            let control = RunControl {
                resume: resume.as_deref().map(load_checkpoint).transpose()?,
                stop_after,
            };
            let run = run_seed(&cfg, cfg.method, seed, model, &tgt, control)?;
            write_runs(&cfg.out_dir, std::slice::from_ref(&run))?;
            let path = ckpt_path(
                &cfg.out_dir,
                &format!("batch{}", run.state.batches_done),
                seed,
            );
            save_checkpoint(&path, &run.state)?;
            println!("checkpoint written to {}", path.display());
            report_runs(std::slice::from_ref(&run))
        }
        Command::GridBatchsize { common, sizes } => {
            let cfg = load_config(&common)?;
            let sizes = if sizes.is_empty() {
                cfg.grid.batch_sizes.clone()
            } else {
                sizes
            };
            let report = grid_batchsize(&cfg, &sizes)?;
            print_grid(&report, "batch_size");
            Ok(report.failed())
        }
        Command::GridBuffersize { common, slots } => {
            let cfg = load_config(&common)?;
            let slots = if slots.is_empty() {
                cfg.grid.slots_per_class.clone()
            } else {
                slots
            };
            let report = grid_buffersize(&cfg, &slots)?;
            print_grid(&report, "slots_per_class");
            Ok(report.failed())
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let seed = single_seed(&cfg)?;
            let state = load_checkpoint(&checkpoint)?;
            let (_, tgt) = domains(&cfg, seed)?;
            println!("{:.16e}", evaluate(&state.model, &tgt)?);
            Ok(false)
        }
    }
}

fn report_runs(runs: &[conda_core::harness::SeedRun]) -> Result<bool> {
    let mut failed = false;
    for r in runs {
        match &r.failure {
            None => println!(
                "seed {}: {} source {:.4} -> final {:.4}",
                r.seed,
                r.method.name(),
                r.source_accuracy,
                r.final_accuracy()
            ),
            Some((j, msg)) => {
                failed = true;
                eprintln!("seed {}: failed at batch {j}: {msg}", r.seed);
            }
        }
    }
    Ok(failed)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
