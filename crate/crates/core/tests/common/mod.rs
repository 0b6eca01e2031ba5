//! Independent reference implementations shared by the integration tests.
//! Plain loops over `Vec<Vec<f64>>`, no library helpers.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod buffers;
pub mod gradcheck;

use conda_core::buffer::{Buffer, BufferEntry, Relabel};
use conda_core::netcore::{softmax, Model, ModelConfig};
use conda_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Matrix {
    let v = (0..n * d)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(n, d, v).unwrap()
}

pub fn small_model(seed: u64, input_dim: usize, classes: usize) -> Model {
    let cfg = ModelConfig {
        input_dim,
        hidden: vec![8],
        feature_dim: 4,
        num_classes: classes,
        ..Default::default()
    };
    Model::new(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        return 2.0;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

fn nearest(f: &[f64], centers: &[Vec<f64>], empty: &[bool]) -> usize {
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for k in 0..centers.len() {
        if empty[k] {
            continue;
        }
        let d = cos_dist(f, &centers[k]);
        if best == usize::MAX || d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Weighted centroids, cosine assignment, hard-mean refinement, reassignment.
pub fn brute_force_pseudo_labels(probs: &[Vec<f64>], feats: &[Vec<f64>]) -> Vec<usize> {
    let n = feats.len();
    let c = probs[0].len();
    let d = feats[0].len();
    let mut centers = vec![vec![0.0; d]; c];
    let mut empty = vec![false; c];
    for k in 0..c {
        let mut mass = 0.0;
        for i in 0..n {
            mass += probs[i][k];
        }
        if mass < 1e-8 {
            empty[k] = true;
            continue;
        }
        for j in 0..d {
            let mut s = 0.0;
            for i in 0..n {
                s += probs[i][k] * feats[i][j];
            }
            centers[k][j] = s / mass;
        }
    }
    let first: Vec<usize> = feats.iter().map(|f| nearest(f, &centers, &empty)).collect();
    for k in 0..c {
        let members: Vec<usize> = (0..n).filter(|&i| first[i] == k).collect();
        if members.is_empty() {
            continue;
        }
        for j in 0..d {
            let mut s = 0.0;
            for &i in &members {
                s += feats[i][j];
            }
            centers[k][j] = s / members.len() as f64;
        }
        empty[k] = false;
    }
    feats.iter().map(|f| nearest(f, &centers, &empty)).collect()
}

/// Step-by-step restatement of the buffer update rule, drawing backfill picks
/// with the same sampler call so its output can be compared exactly.
pub fn buffer_oracle(
    prev: &Buffer,
    batch: &[Vec<f64>],
    preds: &[usize],
    confs: &[f64],
    relabel: &Relabel,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<BufferEntry>> {
    let c = prev.num_classes();
    let slots = prev.slots_per_class();
    let old: Vec<BufferEntry> = prev.entries().cloned().collect();
    let mut out = vec![Vec::new(); c];
    if slots == 0 {
        return out;
    }
    for k in 0..c {
        let mut ranked: Vec<(f64, usize)> = (0..batch.len())
            .filter(|&i| preds[i] == k)
            .map(|i| (confs[i], i))
            .collect();
        // highest confidence first, earlier index on ties
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(conf, i) in ranked.iter().take(slots) {
            out[k].push(BufferEntry {
                sample: batch[i].clone(),
                predicted_label: k,
                confidence: conf,
                inserted_at: prev.state_index() + 1,
            });
        }
        let free = slots - out[k].len();
        let pool: Vec<usize> = (0..old.len()).filter(|&i| relabel.labels[i] == k).collect();
        let mut take: Vec<usize> = Vec::new();
        if free > 0 && pool.len() <= free {
            take = pool.clone();
        } else if free > 0 {
            let mut pos = rand::seq::index::sample(rng, pool.len(), free).into_vec();
            pos.sort();
            for p in pos {
                take.push(pool[p]);
            }
        }
        for i in take {
            let mut e = old[i].clone();
            e.predicted_label = k;
            out[k].push(e);
        }
    }
    out
}

/// Logits of `model` on one sample computed with scalar loops, eval mode.
pub fn straight_line_logits(model: &Model, x: &[f64]) -> Vec<f64> {
    let g = &model.generator;
    let mut a = x.to_vec();
    for layer in &g.hidden {
        let w = &layer.weight.value;
        let b = layer.bias.value.as_slice();
        let mut next = vec![0.0; w.rows()];
        for o in 0..w.rows() {
            let mut s = b[o];
            for i in 0..w.cols() {
                s += w[(o, i)] * a[i];
            }
            next[o] = if s > 0.0 { s } else { 0.0 };
        }
        a = next;
    }
    let w = &g.bottleneck.weight.value;
    let b = g.bottleneck.bias.value.as_slice();
    let mut f = vec![0.0; w.rows()];
    for o in 0..w.rows() {
        let mut s = b[o];
        for i in 0..w.cols() {
            s += w[(o, i)] * a[i];
        }
        let bn = &g.bn;
        f[o] = bn.gamma.value.as_slice()[o] * (s - bn.running_mean[o])
            / (bn.running_var[o] + bn.eps).sqrt()
            + bn.beta.value.as_slice()[o];
    }
    let h = &model.hypothesis;
    let v = &h.directions.value;
    (0..v.rows())
        .map(|k| {
            let mut nv = 0.0;
            let mut dot = 0.0;
            for j in 0..v.cols() {
                nv += v[(k, j)] * v[(k, j)];
                dot += v[(k, j)] * f[j];
            }
            h.scales.value.as_slice()[k] * dot / nv.sqrt()
        })
        .collect()
}

/// Random soft predictions and features; every fifth instance has a class
/// with no probability mass.
pub fn clustering_instance(seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=64);
    let c = rng.random_range(2..=5);
    let d = rng.random_range(2..=8);
    let feats = random_matrix(&mut rng, n, d, 3.0);
    let temp = rng.random_range(0.5..4.0);
    let mut probs = softmax(&random_matrix(&mut rng, n, c, temp));
    if seed.is_multiple_of(5) {
        // one class that no sample ever predicts
        for i in 0..n {
            let r = probs.row_mut(i);
            let dead = r[c - 1];
            r[c - 1] = 0.0;
            r[0] += dead;
        }
    }
    (probs, feats)
}
