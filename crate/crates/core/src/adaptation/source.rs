use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::label_smoothing_ce_with_grad;
use crate::netcore::{HeadMode, Mode, Model, ModelConfig};
use crate::seed::{rng_for, Purpose};

use super::minibatch_ranges;
use super::optim::{lr_schedule, sgd_step, OptimConfig, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub smoothing: f64,
    pub optim: OptimConfig,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            minibatch_size: 32,
            smoothing: 0.1,
            optim: OptimConfig {
                eta0: 1e-2,
                ..OptimConfig::default()
            },
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size < 2 {
            return Err(Error::Config("source minibatch_size must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        self.optim.validate()
    }
}

/// Supervised training of generator and hypothesis with label-smoothed
/// cross-entropy. Momentum buffers are cleared before returning.
pub fn train_source(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &SourceConfig,
    seed: u64,
) -> Result<Model> {
    cfg.validate()?;
    let mut model = Model::new(model_cfg, &mut rng_for(seed, Purpose::ModelInit))?;
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let labels = dataset.labels().ok_or(Error::Unlabeled)?;
    let x = dataset.samples();
    if x.rows() < 2 {
        return Err(Error::DegenerateBatch(x.rows()));
    }
    if x.cols() != model.input_dim() {
        return Err(Error::shape("train_source", model.input_dim(), x.cols()));
    }
    let mut rng = rng_for(seed, Purpose::SourceTraining);
    let ranges = minibatch_ranges(x.rows(), cfg.minibatch_size);
    let total = cfg.epochs * ranges.len();
    let mut opt = OptimState::new(cfg.optim);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for r in &ranges {
            let idx = &order[r.clone()];
            let xb = x.select_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            opt.set_progress(step, total);
            let lr = lr_schedule(&opt);

            model.zero_grad();
            let f = model.forward_features(&xb, Mode::Train)?;
            let logits = model.forward_logits(&f)?;
            let (loss, dlogits) = label_smoothing_ce_with_grad(&logits, &yb, cfg.smoothing)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "source loss at epoch {epoch}, step {step}"
                )));
            }
            model.backward(&dlogits, HeadMode::Trainable)?;
            sgd_step(
                model.params_mut(HeadMode::Trainable),
                lr,
                cfg.optim.momentum,
                cfg.optim.head_lr_multiplier,
            )?;
            step += 1;
        }
    }
    for (_, p) in model.params_mut(HeadMode::Trainable) {
        p.momentum.fill(0.0);
        p.zero_grad();
    }
    Ok(model)
}
