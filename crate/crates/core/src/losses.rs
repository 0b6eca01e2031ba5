//! Scalar objectives and their gradients with respect to logits.
//!
//! Every logarithm is taken of `max(p, EPS_DIV)` so saturated softmax outputs
//! never produce infinities. Gradients are the exact piecewise derivatives of
//! that clamped form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netcore::softmax;

/// Floor applied inside every logarithm.
pub const EPS_DIV: f64 = 1e-12;

#[inline]
fn clamped_ln(p: f64) -> f64 {
    p.max(EPS_DIV).ln()
}

/// d/dp of `ln(max(p, EPS_DIV))`.
#[inline]
fn clamped_ln_grad(p: f64) -> f64 {
    if p > EPS_DIV {
        1.0 / p
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Weight of the equal-diversity term.
    pub gamma1: f64,
    /// Weight of the mixup cross-entropy term.
    pub gamma2: f64,
    /// Beta(rho, rho) shape for mixup coefficients.
    pub rho: f64,
    /// Label smoothing for source training.
    pub smoothing: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 0.5,
            rho: 1.0,
            smoothing: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 >= 0.0) || !(self.gamma2 >= 0.0) {
            return Err(Error::Config("gamma1 and gamma2 must be >= 0".into()));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config("rho must be a positive finite number".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// The uniform target distribution `q_k = 1/C` for the diversity term.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPrior {
    q: Vec<f64>,
}

impl UniformPrior {
    pub fn new(num_classes: usize) -> Self {
        Self {
            q: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    Ok(())
}

fn smoothed_targets(labels: &[usize], classes: usize, smoothing: f64) -> Matrix {
    let mut t = Matrix::zeros(labels.len(), classes);
    let off = smoothing / classes as f64;
    for (i, &y) in labels.iter().enumerate() {
        for (k, v) in t.row_mut(i).iter_mut().enumerate() {
            *v = off + if k == y { 1.0 - smoothing } else { 0.0 };
        }
    }
    t
}

/// Cross-entropy against one-hot targets mixed with the uniform distribution.
pub fn label_smoothing_ce(logits: &Matrix, labels: &[usize], smoothing: f64) -> Result<f64> {
    Ok(label_smoothing_ce_with_grad(logits, labels, smoothing)?.0)
}

/// Loss value and `dL/dlogits`.
pub fn label_smoothing_ce_with_grad(
    logits: &Matrix,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, Matrix)> {
    let (n, c) = logits.shape();
    if n == 0 {
        return Err(Error::EmptyInput("label_smoothing_ce"));
    }
    check_labels(labels, n, c)?;
    let t = smoothed_targets(labels, c, smoothing);
    let mut loss = 0.0;
    let mut grad = softmax(logits);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        for k in 0..c {
            loss -= t[(i, k)] * (row[k] - lse);
            grad[(i, k)] = (grad[(i, k)] - t[(i, k)]) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean Shannon entropy of the rows.
pub fn entropy_loss(probs: &Matrix) -> f64 {
    if probs.rows() == 0 {
        return 0.0;
    }
    let total: f64 = probs
        .row_iter()
        .map(|r| -r.iter().map(|&p| p * clamped_ln(p)).sum::<f64>())
        .sum();
    total / probs.rows() as f64
}

/// `KL(q || mean_probs)`.
pub fn eqdiv_loss(mean_probs: &[f64], prior: &UniformPrior) -> Result<f64> {
    if mean_probs.len() != prior.len() {
        return Err(Error::shape("eqdiv_loss", prior.len(), mean_probs.len()));
    }
    Ok(prior
        .as_slice()
        .iter()
        .zip(mean_probs)
        .map(|(&q, &qh)| q * (q.ln() - clamped_ln(qh)))
        .sum())
}

/// Mean of `-λ log p[y_a] - (1-λ) log p[y_b]`.
pub fn mixup_ce_loss(probs: &Matrix, y_a: &[usize], y_b: &[usize], lambdas: &[f64]) -> Result<f64> {
    let (n, c) = probs.shape();
    if n == 0 {
        return Err(Error::EmptyInput("mixup_ce_loss"));
    }
    check_labels(y_a, n, c)?;
    check_labels(y_b, n, c)?;
    check_lambdas(lambdas, n)?;
    let mut total = 0.0;
    for i in 0..n {
        let (la, lb) = (lambdas[i], 1.0 - lambdas[i]);
        total -= la * clamped_ln(probs[(i, y_a[i])]) + lb * clamped_ln(probs[(i, y_b[i])]);
    }
    Ok(total / n as f64)
}

fn check_lambdas(lambdas: &[f64], n: usize) -> Result<()> {
    if lambdas.len() != n {
        return Err(Error::shape("lambdas", n, lambdas.len()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidParameter(format!(
            "mixup lambda {l} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Per-term values of the adaptation objective on one batch of virtual samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveTerms {
    pub entropy: f64,
    pub eqdiv: f64,
    pub mixup: f64,
    pub total: f64,
}

impl ObjectiveTerms {
    pub fn is_finite(&self) -> bool {
        self.entropy.is_finite()
            && self.eqdiv.is_finite()
            && self.mixup.is_finite()
            && self.total.is_finite()
    }
}

/// `L_ent + gamma1 * L_eqdiv + gamma2 * L_mixup`, with the diversity prior
/// estimated as the mean softmax over this batch.
pub fn total_objective(
    probs: &Matrix,
    y_a: &[usize],
    y_b: &[usize],
    lambdas: &[f64],
    hp: &HyperParams,
) -> Result<ObjectiveTerms> {
    let prior = UniformPrior::new(probs.cols());
    let entropy = entropy_loss(probs);
    let eqdiv = eqdiv_loss(&probs.col_means(), &prior)?;
    let mixup = mixup_ce_loss(probs, y_a, y_b, lambdas)?;
    Ok(ObjectiveTerms {
        entropy,
        eqdiv,
        mixup,
        total: entropy + hp.gamma1 * eqdiv + hp.gamma2 * mixup,
    })
}

/// Objective value together with `dL/dlogits` where `probs = softmax(logits)`.
pub fn total_objective_with_grad(
    logits: &Matrix,
    y_a: &[usize],
    y_b: &[usize],
    lambdas: &[f64],
    hp: &HyperParams,
) -> Result<(ObjectiveTerms, Matrix)> {
    let probs = softmax(logits);
    let terms = total_objective(&probs, y_a, y_b, lambdas, hp)?;
    let (n, c) = probs.shape();
    let nf = n as f64;
    let q = 1.0 / c as f64;
    let mean = probs.col_means();

    let mut dprobs = Matrix::zeros(n, c);
    for i in 0..n {
        for k in 0..c {
            let p = probs[(i, k)];
            // entropy: d/dp [-p ln(max(p, eps))]
            let mut g = -(clamped_ln(p) + if p > EPS_DIV { 1.0 } else { 0.0 }) / nf;
            // eqdiv: d/dp_ik [-q ln(max(mean_k, eps))], mean_k = (1/n) sum_i p_ik
            g -= hp.gamma1 * q * clamped_ln_grad(mean[k]) / nf;
            let mut w = 0.0;
            if y_a[i] == k {
                w += lambdas[i];
            }
            if y_b[i] == k {
                w += 1.0 - lambdas[i];
            }
            if w != 0.0 {
                g -= hp.gamma2 * w * clamped_ln_grad(p) / nf;
            }
            dprobs[(i, k)] = g;
        }
    }
    Ok((terms, softmax_backward(&probs, &dprobs)))
}

/// Pulls `dL/dp` back through a row-wise softmax: `dz = p ⊙ (g - <g, p>)`.
pub fn softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let g = dprobs.row(i);
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (k, d) in dz.row_mut(i).iter_mut().enumerate() {
            *d = p[k] * (g[k] - inner);
        }
    }
    dz
}
