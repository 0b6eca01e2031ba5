//! Central finite differences against the hand-written backward pass.

use conda_core::adaptation::make_virtual_batch;
use conda_core::losses::{
    label_smoothing_ce, label_smoothing_ce_with_grad, total_objective, total_objective_with_grad,
    HyperParams,
};
use conda_core::netcore::{softmax, HeadMode, Mode, Model, ModelConfig};
use conda_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

/// The 1e-6 floor keeps structurally zero gradients, whose numeric estimate is
/// pure rounding noise, from dominating the ratio.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub struct Case {
    pub model: Model,
    pub x: Matrix,
    pub y_a: Vec<usize>,
    pub y_b: Vec<usize>,
    pub lambdas: Vec<f64>,
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_dim: 3,
        hidden: vec![8, 6],
        feature_dim: 5,
        num_classes: 3,
        ..Default::default()
    };
    let mut model = Model::new(&cfg, &mut rng).unwrap();
    // move batch-norm affine parameters off their trivial init
    for v in model.generator.bn.gamma.value.as_mut_slice() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in model.generator.bn.beta.value.as_mut_slice() {
        *v = rng.random_range(-0.5..0.5);
    }
    let n = 8;
    let raw: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let raw = Matrix::from_vec(n, 3, raw).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let vb = make_virtual_batch(&raw, &labels, 1.0, &mut rng).unwrap();
    Case {
        model,
        x: vb.x_mix,
        y_a: vb.y_a,
        y_b: vb.y_b,
        lambdas: vb.lambdas,
    }
}

fn objective(model: &Model, c: &Case, hp: &HyperParams) -> f64 {
    let mut m = model.clone();
    let f = m.forward_features(&c.x, Mode::Train).unwrap();
    let p = softmax(&m.forward_logits(&f).unwrap());
    total_objective(&p, &c.y_a, &c.y_b, &c.lambdas, hp)
        .unwrap()
        .total
}

fn source_loss(model: &Model, c: &Case) -> f64 {
    let mut m = model.clone();
    let f = m.forward_features(&c.x, Mode::Train).unwrap();
    label_smoothing_ce(&m.forward_logits(&f).unwrap(), &c.y_a, 0.1).unwrap()
}

/// Worst relative error of the adaptation objective's gradient over every
/// generator parameter, for each seed.
pub fn objective_worst_error(seeds: std::ops::Range<u64>, hp: &HyperParams) -> f64 {
    let mut worst = 0.0f64;
    for seed in seeds {
        let c = case(seed);
        let mut m = c.model.clone();
        m.zero_grad();
        let f = m.forward_features(&c.x, Mode::Train).unwrap();
        let logits = m.forward_logits(&f).unwrap();
        let (_, dz) = total_objective_with_grad(&logits, &c.y_a, &c.y_b, &c.lambdas, hp).unwrap();
        m.backward(&dz, HeadMode::Frozen).unwrap();

        let grads: Vec<Vec<f64>> = m
            .generator
            .params()
            .iter()
            .map(|(_, _, p)| p.grad.as_slice().to_vec())
            .collect();
        for (pi, g) in grads.iter().enumerate() {
            for (e, &analytic) in g.iter().enumerate() {
                let mut plus = c.model.clone();
                plus.generator.params_mut()[pi].1.value.as_mut_slice()[e] += H;
                let mut minus = c.model.clone();
                minus.generator.params_mut()[pi].1.value.as_mut_slice()[e] -= H;
                let numeric = (objective(&plus, &c, hp) - objective(&minus, &c, hp)) / (2.0 * H);
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

/// Same check for the source loss, including the hypothesis parameters.
pub fn source_loss_worst_error(seeds: std::ops::Range<u64>) -> f64 {
    let mut worst = 0.0f64;
    for seed in seeds {
        let c = case(seed);
        let mut m = c.model.clone();
        m.zero_grad();
        let f = m.forward_features(&c.x, Mode::Train).unwrap();
        let logits = m.forward_logits(&f).unwrap();
        let (_, dz) = label_smoothing_ce_with_grad(&logits, &c.y_a, 0.1).unwrap();
        m.backward(&dz, HeadMode::Trainable).unwrap();

        let grads: Vec<Vec<f64>> = m
            .params()
            .iter()
            .map(|(_, _, p)| p.grad.as_slice().to_vec())
            .collect();
        for (pi, g) in grads.iter().enumerate() {
            for (e, &analytic) in g.iter().enumerate() {
                let mut plus = c.model.clone();
                plus.params_mut(HeadMode::Trainable)[pi]
                    .1
                    .value
                    .as_mut_slice()[e] += H;
                let mut minus = c.model.clone();
                minus.params_mut(HeadMode::Trainable)[pi]
                    .1
                    .value
                    .as_mut_slice()[e] -= H;
                let numeric = (source_loss(&plus, &c) - source_loss(&minus, &c)) / (2.0 * H);
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}
