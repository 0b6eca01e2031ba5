use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::buffer::{merged_set, relabel_buffer, update_buffer, Buffer};
use crate::clustering::pseudo_labels;
use crate::data::{stream_batches, BatchStream};
use crate::error::{Error, Result};
use crate::losses::{total_objective_with_grad, HyperParams, ObjectiveTerms};
use crate::matrix::Matrix;
use crate::netcore::{HeadMode, Mode, Model};
use crate::seed::{rng_for, ExpRng, Purpose};

use super::minibatch_ranges;
use super::mixup::{make_virtual_batch, VirtualBatch};
use super::optim::{lr_schedule, sgd_step, OptimConfig, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinualConfig {
    /// Samples per incoming target batch.
    pub batch_size: usize,
    pub epochs_per_batch: usize,
    /// SGD minibatch over the merged set; independent of `batch_size`.
    pub minibatch_size: usize,
    pub buffer_capacity: usize,
    pub hp: HyperParams,
    /// Train on mixed virtual samples. When off, samples are used as-is.
    pub mixup: bool,
    pub optim: OptimConfig,
    /// Clear momentum buffers when a new target batch arrives.
    pub reset_momentum: bool,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            batch_size: 25,
            epochs_per_batch: 15,
            minibatch_size: 32,
            buffer_capacity: 0,
            hp: HyperParams::default(),
            mixup: true,
            optim: OptimConfig::default(),
            reset_momentum: false,
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs_per_batch == 0 {
            return Err(Error::Config("epochs_per_batch must be >= 1".into()));
        }
        if self.minibatch_size < 2 {
            return Err(Error::Config(
                "minibatch_size must be >= 2 for batch-norm".into(),
            ));
        }
        self.hp.validate()?;
        self.optim.validate()
    }
}

/// Result of adapting on one incoming batch.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub buffer: Buffer,
    pub predictions: Vec<usize>,
    pub confidences: Vec<f64>,
    /// Objective terms averaged over the final epoch's minibatches.
    pub terms: ObjectiveTerms,
}

/// Adapts the feature generator on `batch ∪ buffer` for the configured number of
/// epochs, then scores the batch and produces the next buffer state.
///
/// The hypothesis never receives an update.
pub fn adapt_on_batch(
    model: &mut Model,
    batch: &Matrix,
    buffer: &Buffer,
    cfg: &ContinualConfig,
    rng: &mut ExpRng,
) -> Result<BatchOutcome> {
    cfg.validate()?;
    if cfg.reset_momentum {
        for (_, p) in model.params_mut(HeadMode::Frozen) {
            p.momentum.fill(0.0);
        }
    }
    // X* carries samples only; buffer labels stay inside the buffer.
    let x_star = merged_set(buffer, batch)?;
    let n = x_star.rows();
    if n < 2 {
        return Err(Error::DegenerateMixup(n));
    }
    let ranges = minibatch_ranges(n, cfg.minibatch_size);
    let total_steps = cfg.epochs_per_batch * ranges.len();
    let mut opt = OptimState::new(cfg.optim);
    let needs_labels = cfg.hp.gamma2 > 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut last_epoch = ObjectiveTerms::default();

    for _epoch in 0..cfg.epochs_per_batch {
        let labels = if needs_labels {
            pseudo_labels(model, &x_star)?.labels
        } else {
            vec![0; n]
        };
        order.shuffle(rng);
        let xs = x_star.select_rows(&order);
        let ys: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let vb = if cfg.mixup {
            make_virtual_batch(&xs, &ys, cfg.hp.rho, rng)?
        } else {
            VirtualBatch::unmixed(&xs, &ys)?
        };

        let mut acc = ObjectiveTerms::default();
        for r in &ranges {
            let mb = vb.slice(r.clone());
            opt.set_progress(step, total_steps);
            let lr = lr_schedule(&opt);

            model.zero_grad();
            let f = model.forward_features(&mb.x_mix, Mode::Train)?;
            let logits = model.forward_logits(&f)?;
            let (terms, dlogits) =
                total_objective_with_grad(&logits, &mb.y_a, &mb.y_b, &mb.lambdas, &cfg.hp)?;
            if !terms.is_finite() {
                return Err(Error::NonFinite(format!(
                    "adaptation objective at step {step}"
                )));
            }
            model.backward(&dlogits, HeadMode::Frozen)?;
            sgd_step(
                model.params_mut(HeadMode::Frozen),
                lr,
                cfg.optim.momentum,
                cfg.optim.head_lr_multiplier,
            )?;
            acc.entropy += terms.entropy;
            acc.eqdiv += terms.eqdiv;
            if needs_labels {
                // Without pseudo-labels the mixup term is computed against placeholders.
                acc.mixup += terms.mixup;
            }
            acc.total += terms.total;
            step += 1;
        }
        let k = ranges.len() as f64;
        last_epoch = ObjectiveTerms {
            entropy: acc.entropy / k,
            eqdiv: acc.eqdiv / k,
            mixup: acc.mixup / k,
            total: acc.total / k,
        };
    }

    let (predictions, confidences) = if batch.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        model.predict(batch)?
    };
    let relabel = relabel_buffer(model, buffer)?;
    let buffer = update_buffer(buffer, batch, &predictions, &confidences, &relabel, rng)?;
    Ok(BatchOutcome {
        buffer,
        predictions,
        confidences,
        terms: last_epoch,
    })
}

/// One evaluation point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// 0 for the unadapted source model, `j` after the `j`-th incoming batch.
    pub batch_index: usize,
    pub accuracy: f64,
    pub terms: ObjectiveTerms,
    pub wall_seconds: f64,
}

/// Everything that evolves over a continual run.
#[derive(Debug, Clone)]
pub struct ContinualState {
    pub model: Model,
    pub buffer: Buffer,
    pub rng: ExpRng,
    /// Number of incoming batches already consumed.
    pub batches_done: usize,
}

impl ContinualState {
    /// Starts adaptation from a source model with fresh momentum and an empty buffer.
    pub fn new(mut source: Model, cfg: &ContinualConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        for (_, p) in source.params_mut(HeadMode::Trainable) {
            p.momentum.fill(0.0);
            p.zero_grad();
        }
        let buffer = Buffer::new(
            cfg.buffer_capacity,
            source.num_classes(),
            source.input_dim(),
        )?;
        Ok(Self {
            model: source,
            buffer,
            rng: rng_for(seed, Purpose::Adaptation),
            batches_done: 0,
        })
    }
}

/// Consumes the next batch of `stream`. Returns `None` once the stream is exhausted.
pub fn step_continual(
    state: &mut ContinualState,
    target: &Matrix,
    stream: &BatchStream,
    cfg: &ContinualConfig,
) -> Result<Option<ObjectiveTerms>> {
    let Some(idx) = stream.batches.get(state.batches_done) else {
        return Ok(None);
    };
    let batch = target.select_rows(idx);
    let out = adapt_on_batch(&mut state.model, &batch, &state.buffer, cfg, &mut state.rng)?;
    state.buffer = out.buffer;
    state.batches_done += 1;
    Ok(Some(out.terms))
}

/// Folds [`adapt_on_batch`] over the remaining stream, evaluating after every
/// batch. A fresh state also yields a leading record for the source model.
pub fn run_continual<E>(
    state: &mut ContinualState,
    target: &Matrix,
    stream: &BatchStream,
    cfg: &ContinualConfig,
    mut evaluate: E,
) -> Result<Vec<MetricsRecord>>
where
    E: FnMut(&Model) -> Result<f64>,
{
    let mut records = Vec::with_capacity(stream.len() + 1);
    if state.batches_done == 0 {
        records.push(MetricsRecord {
            batch_index: 0,
            accuracy: evaluate(&state.model)?,
            terms: ObjectiveTerms::default(),
            wall_seconds: 0.0,
        });
    }
    loop {
        let t0 = Instant::now();
        let Some(terms) = step_continual(state, target, stream, cfg)? else {
            break;
        };
        records.push(MetricsRecord {
            batch_index: state.batches_done,
            accuracy: evaluate(&state.model)?,
            terms,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// Non-continual adaptation: the whole target as a single batch, no replay.
pub fn adapt_full<E>(
    source: Model,
    target: &Matrix,
    cfg: &ContinualConfig,
    seed: u64,
    evaluate: E,
) -> Result<(Model, MetricsRecord)>
where
    E: FnMut(&Model) -> Result<f64>,
{
    let cfg = ContinualConfig {
        batch_size: target.rows().max(1),
        buffer_capacity: 0,
        ..cfg.clone()
    };
    let stream = stream_batches(target.rows(), cfg.batch_size, seed)?;
    let mut state = ContinualState::new(source, &cfg, seed)?;
    let records = run_continual(&mut state, target, &stream, &cfg, evaluate)?;
    let last = *records
        .last()
        .expect("run_continual yields at least one record");
    Ok((state.model, last))
}
