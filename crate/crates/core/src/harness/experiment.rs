use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::adaptation::{step_continual, train_source, ContinualState, MetricsRecord};
use crate::data::{make_domain_pair, stream_batches, Dataset, DomainPairConfig};
use crate::error::{Error, Result};
use crate::netcore::Model;

use super::config::{ExperimentConfig, Method};
use super::metrics::{fmt_f64, mean_std, Csv};

pub const METRICS_COLUMNS: [&str; 8] = [
    "seed",
    "batch_index",
    "accuracy",
    "loss_ent",
    "loss_eqdiv",
    "loss_mixup",
    "loss_total",
    "status",
];

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    let labels = dataset.labels().ok_or(Error::Unlabeled)?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let (pred, _) = model.predict(dataset.samples())?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Source and target domains for one experiment seed.
pub fn domains(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    make_domain_pair(&DomainPairConfig {
        seed,
        ..cfg.data.clone()
    })
}

pub fn source_model(cfg: &ExperimentConfig, seed: u64, source: &Dataset) -> Result<Model> {
    train_source(source, &cfg.model_config(), &cfg.source, seed)
}

/// Outcome of one seed under one method.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub method: Method,
    pub source_accuracy: f64,
    /// One record per batch processed in this call.
    pub records: Vec<MetricsRecord>,
    /// Batch index and message of a non-finite loss, if one occurred.
    pub failure: Option<(usize, String)>,
    pub state: ContinualState,
}

impl SeedRun {
    pub fn final_accuracy(&self) -> f64 {
        match (&self.failure, self.records.last()) {
            (None, Some(r)) => r.accuracy,
            (None, None) => self.source_accuracy,
            (Some(_), _) => f64::NAN,
        }
    }
}

/// Optional mid-stream controls for [`run_seed`].
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Continue from this state instead of the source model.
    pub resume: Option<ContinualState>,
    /// Stop once this many batches have been consumed in total.
    pub stop_after: Option<usize>,
}

/// Adapts `source` to `target` with `method`, evaluating on the whole target
/// after every incoming batch.
pub fn run_seed(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    source: Model,
    target: &Dataset,
    control: RunControl,
) -> Result<SeedRun> {
    let mut ccfg = cfg.continual_config(method);
    if method == Method::FullTarget {
        ccfg.batch_size = target.len().max(1);
    }
    let source_accuracy = evaluate(&source, target)?;
    let mut state = match control.resume {
        Some(s) => s,
        None => ContinualState::new(source, &ccfg, seed)?,
    };
    let stream = stream_batches(target.len(), ccfg.batch_size, seed)?;
    let mut records = Vec::new();
    let mut failure = None;
    while control.stop_after.is_none_or(|k| state.batches_done < k) {
        let t0 = Instant::now();
        match step_continual(&mut state, target.samples(), &stream, &ccfg) {
            Ok(Some(terms)) => records.push(MetricsRecord {
                batch_index: state.batches_done,
                accuracy: evaluate(&state.model, target)?,
                terms,
                wall_seconds: t0.elapsed().as_secs_f64(),
            }),
            Ok(None) => break,
            Err(Error::NonFinite(msg)) => {
                failure = Some((state.batches_done + 1, msg));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SeedRun {
        seed,
        method,
        source_accuracy,
        records,
        failure,
        state,
    })
}

/// Trains the source model for `seed` and runs `method` on the matching target.
pub fn run_method(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<SeedRun> {
    let (source, target) = domains(cfg, seed)?;
    let model = source_model(cfg, seed, &source)?;
    run_seed(cfg, method, seed, model, &target, RunControl::default())
}

pub fn metrics_csv(run: &SeedRun) -> Csv {
    let mut csv = Csv::new(&METRICS_COLUMNS);
    for r in &run.records {
        let t = r.terms;
        csv.row([
            run.seed.to_string(),
            r.batch_index.to_string(),
            fmt_f64(r.accuracy),
            fmt_f64(t.entropy),
            fmt_f64(t.eqdiv),
            fmt_f64(t.mixup),
            fmt_f64(t.total),
            "ok".to_string(),
        ]);
    }
    if let Some((j, _)) = &run.failure {
        let nan = fmt_f64(f64::NAN);
        csv.row([
            run.seed.to_string(),
            j.to_string(),
            nan.clone(),
            nan.clone(),
            nan.clone(),
            nan.clone(),
            nan,
            "failed".to_string(),
        ]);
    }
    csv
}

fn timing_csv(run: &SeedRun) -> Csv {
    let mut csv = Csv::new(&["seed", "batch_index", "wall_seconds"]);
    for r in &run.records {
        csv.row([
            run.seed.to_string(),
            r.batch_index.to_string(),
            format!("{:.6}", r.wall_seconds),
        ]);
    }
    csv
}

pub fn summary_csv(runs: &[SeedRun]) -> Csv {
    let mut csv = Csv::new(&["seed", "source_accuracy", "final_accuracy", "status"]);
    for r in runs {
        csv.row([
            r.seed.to_string(),
            fmt_f64(r.source_accuracy),
            fmt_f64(r.final_accuracy()),
            if r.failure.is_some() { "failed" } else { "ok" }.to_string(),
        ]);
    }
    let src: Vec<f64> = runs.iter().map(|r| r.source_accuracy).collect();
    let fin: Vec<f64> = runs.iter().map(SeedRun::final_accuracy).collect();
    let (sm, ss) = mean_std(&src);
    let (fm, fs) = mean_std(&fin);
    csv.row(["mean".into(), fmt_f64(sm), fmt_f64(fm), String::new()]);
    csv.row(["std".into(), fmt_f64(ss), fmt_f64(fs), String::new()]);
    csv
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<SeedRun>,
}

impl ExperimentReport {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.failure.is_some())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `cfg.method` for every seed and writes, into `cfg.out_dir`:
/// `metrics_seed{s}.csv`, `timing_seed{s}.csv` and `summary.csv`.
///
/// Wall-clock times vary between runs and therefore live in their own files,
/// keeping the other outputs byte-reproducible.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&s| run_method(cfg, cfg.method, s))
        .collect::<Result<Vec<_>>>()?;
    write_runs(&cfg.out_dir, &runs)?;
    Ok(ExperimentReport { runs })
}

pub fn write_runs(dir: &Path, runs: &[SeedRun]) -> Result<()> {
    ensure_dir(dir)?;
    for r in runs {
        metrics_csv(r).write(&dir.join(format!("metrics_seed{}.csv", r.seed)))?;
        timing_csv(r).write(&dir.join(format!("timing_seed{}.csv", r.seed)))?;
    }
    summary_csv(runs).write(&dir.join("summary.csv"))
}

/// One cell of a grid: a variant at one setting for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub variant: Method,
    /// Batch size or slots per class, depending on the grid.
    pub setting: usize,
    pub seed: u64,
    /// NaN when the run hit a non-finite loss.
    pub final_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.final_accuracy.is_nan())
    }

    /// Mean final accuracy of one cell over seeds.
    pub fn mean(&self, variant: Method, setting: usize) -> f64 {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant && r.setting == setting)
            .map(|r| r.final_accuracy)
            .collect();
        mean_std(&xs).0
    }
}

fn run_grid(
    cfg: &ExperimentConfig,
    variants: &[Method],
    settings: &[usize],
    apply: fn(&ExperimentConfig, usize) -> ExperimentConfig,
) -> Result<GridReport> {
    cfg.validate()?;
    let sources = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let (src, tgt) = domains(cfg, s)?;
            Ok((s, source_model(cfg, s, &src)?, tgt))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &v in variants {
        for &x in settings {
            for i in 0..sources.len() {
                cells.push((v, x, i));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(v, x, i)| {
            let (seed, model, target) = &sources[i];
            let c = apply(cfg, x);
            c.validate()?;
            let run = run_seed(&c, v, *seed, model.clone(), target, RunControl::default())?;
            Ok(GridRow {
                variant: v,
                setting: x,
                seed: *seed,
                final_accuracy: run.final_accuracy(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport { rows })
}

fn write_grid(dir: &Path, name: &str, column: &str, report: &GridReport) -> Result<()> {
    ensure_dir(dir)?;
    let mut long = Csv::new(&["variant", column, "seed", "final_accuracy"]);
    for r in &report.rows {
        long.row([
            r.variant.name().to_string(),
            r.setting.to_string(),
            r.seed.to_string(),
            fmt_f64(r.final_accuracy),
        ]);
    }
    long.write(&dir.join(format!("{name}.csv")))?;

    let mut summary = Csv::new(&[
        "variant",
        column,
        "mean_final_accuracy",
        "std_final_accuracy",
        "seeds",
    ]);
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in &report.rows {
        if !keys.contains(&(r.variant, r.setting)) {
            keys.push((r.variant, r.setting));
        }
    }
    for (v, x) in keys {
        let xs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.variant == v && r.setting == x)
            .map(|r| r.final_accuracy)
            .collect();
        let (m, s) = mean_std(&xs);
        summary.row([
            v.name().to_string(),
            x.to_string(),
            fmt_f64(m),
            fmt_f64(s),
            xs.len().to_string(),
        ]);
    }
    summary.write(&dir.join(format!("{name}_summary.csv")))
}

fn check_grid_list(name: &str, xs: &[usize]) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::Config(format!(
            "{name} grid needs at least two values"
        )));
    }
    Ok(())
}

/// Continual-no-buffer and conda at every batch size, for every seed. Writes
/// `grid_batchsize.csv` and `grid_batchsize_summary.csv`.
pub fn grid_batchsize(cfg: &ExperimentConfig, batch_sizes: &[usize]) -> Result<GridReport> {
    check_grid_list("batch-size", batch_sizes)?;
    let report = run_grid(
        cfg,
        &[Method::ContinualNoBuffer, Method::Conda],
        batch_sizes,
        |c, x| {
            let mut c = c.clone();
            c.adaptation.batch_size = x;
            c
        },
    )?;
    write_grid(&cfg.out_dir, "grid_batchsize", "batch_size", &report)?;
    Ok(report)
}

/// Conda at every slots-per-class setting, for every seed. Writes
/// `grid_buffersize.csv` and `grid_buffersize_summary.csv`.
pub fn grid_buffersize(cfg: &ExperimentConfig, slots: &[usize]) -> Result<GridReport> {
    check_grid_list("buffer-size", slots)?;
    let report = run_grid(cfg, &[Method::Conda], slots, |c, x| {
        let mut c = c.clone();
        c.buffer.slots_per_class = x;
        c
    })?;
    write_grid(&cfg.out_dir, "grid_buffersize", "slots_per_class", &report)?;
    Ok(report)
}
