use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Param, ParamGroup};

/// SGD-with-momentum settings shared by source training and adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub eta0: f64,
    pub momentum: f64,
    /// Learning-rate factor for every layer after the backbone.
    pub head_lr_multiplier: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta0: 1e-3,
            momentum: 0.9,
            head_lr_multiplier: 10.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need eta0 > 0 and momentum in [0, 1)".into()));
        }
        if !(self.head_lr_multiplier > 0.0) {
            return Err(Error::Config("head_lr_multiplier must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    /// Training progress in `[0, 1]`.
    pub progress: f64,
}

impl OptimState {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            progress: 0.0,
        }
    }

    pub fn set_progress(&mut self, step: usize, total_steps: usize) {
        self.progress = if total_steps == 0 {
            0.0
        } else {
            (step as f64 / total_steps as f64).clamp(0.0, 1.0)
        };
    }
}

/// `eta0 * (1 + 10 p)^-0.75`.
pub fn lr_schedule(state: &OptimState) -> f64 {
    state.config.eta0 * (1.0 + 10.0 * state.progress).powf(-0.75)
}

/// Heavy-ball update `m <- mu m + g; w <- w - lr_eff m`, where `lr_eff` is `lr`
/// scaled by the head multiplier for post-backbone parameters.
///
/// All gradients are checked before any parameter moves.
pub fn sgd_step(
    params: Vec<(ParamGroup, &mut Param)>,
    lr: f64,
    momentum: f64,
    head_lr_multiplier: f64,
) -> Result<()> {
    for (i, (_, p)) in params.iter().enumerate() {
        if let Some(j) = p.grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter #{i} at element {j} ({})",
                p.grad.as_slice()[j]
            )));
        }
    }
    for (group, p) in params {
        let lr_eff = match group {
            ParamGroup::Backbone => lr,
            ParamGroup::Head => lr * head_lr_multiplier,
        };
        let Param {
            value,
            grad,
            momentum: m,
        } = p;
        for ((w, g), v) in value
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(m.as_mut_slice())
        {
            *v = momentum * *v + g;
            *w -= lr_eff * *v;
        }
    }
    Ok(())
}
