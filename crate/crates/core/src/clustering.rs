//! Cluster-based pseudo-labels: softmax-weighted initial centroids, cosine
//! assignment, one hard-assignment refinement, final cosine assignment.

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::netcore::{softmax, Model};

/// Classes whose soft mass falls below this are treated as empty.
pub const EPS_CLASS_MASS: f64 = 1e-8;

/// Distance reported for any pair involving a zero-norm vector.
pub const MAX_COSINE_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub centers: Matrix,
    /// `true` for classes excluded from assignment.
    pub empty: Vec<bool>,
    pub round: u8,
}

impl Centroids {
    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub round: u8,
}

/// `1 - cos(a, b)`, or [`MAX_COSINE_DISTANCE`] when either vector has zero norm.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return MAX_COSINE_DISTANCE;
    }
    1.0 - dot(a, b) / (na * nb)
}

/// Round-0 centroids: per class, the mean of features weighted by that
/// class's softmax probability.
pub fn initial_centroids(probs: &Matrix, features: &Matrix) -> Result<Centroids> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput("initial_centroids"));
    }
    if probs.rows() != n {
        return Err(Error::shape("initial_centroids", n, probs.rows()));
    }
    let c = probs.cols();
    let d = features.cols();
    let mut centers = probs.t_matmul(features)?;
    let mass = probs.col_sums();
    let mut empty = vec![false; c];
    for k in 0..c {
        if mass[k] < EPS_CLASS_MASS {
            empty[k] = true;
            centers.row_mut(k).fill(0.0);
        } else {
            centers.row_mut(k).iter_mut().for_each(|v| *v /= mass[k]);
        }
    }
    debug_assert_eq!(centers.cols(), d);
    Ok(Centroids {
        centers,
        empty,
        round: 0,
    })
}

/// Nearest non-empty centroid by cosine distance; ties go to the lowest class.
pub fn assign_labels(features: &Matrix, centroids: &Centroids) -> Result<PseudoLabelSet> {
    if centroids.empty.iter().all(|&e| e) {
        return Err(Error::AllCentroidsEmpty);
    }
    if features.cols() != centroids.centers.cols() {
        return Err(Error::shape(
            "assign_labels",
            centroids.centers.cols(),
            features.cols(),
        ));
    }
    let labels = features
        .row_iter()
        .map(|f| {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..centroids.num_classes() {
                if centroids.empty[k] {
                    continue;
                }
                let d = cosine_distance(f, centroids.centers.row(k));
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best.expect("at least one non-empty centroid").0
        })
        .collect();
    Ok(PseudoLabelSet {
        labels,
        round: centroids.round,
    })
}

/// Round-1 centroids: unweighted mean of the features assigned to each class.
/// Classes with no assigned samples keep their `previous` centroid.
pub fn refine_centroids(
    features: &Matrix,
    labels: &PseudoLabelSet,
    previous: &Centroids,
) -> Result<Centroids> {
    let c = previous.num_classes();
    if labels.labels.len() != features.rows() {
        return Err(Error::shape(
            "refine_centroids",
            features.rows(),
            labels.labels.len(),
        ));
    }
    let mut sums = Matrix::zeros(c, features.cols());
    let mut counts = vec![0usize; c];
    for (f, &y) in features.row_iter().zip(&labels.labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: c,
            });
        }
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(f) {
            *s += v;
        }
    }
    let mut centers = previous.centers.clone();
    let mut empty = previous.empty.clone();
    for k in 0..c {
        if counts[k] > 0 {
            let cnt = counts[k] as f64;
            for (dst, s) in centers.row_mut(k).iter_mut().zip(sums.row(k)) {
                *dst = s / cnt;
            }
            empty[k] = false;
        }
    }
    Ok(Centroids {
        centers,
        empty,
        round: previous.round + 1,
    })
}

/// Runs the two-round clustering on an eval-mode model's features and
/// softmax outputs.
pub fn cluster_labels(probs: &Matrix, features: &Matrix) -> Result<PseudoLabelSet> {
    let c0 = initial_centroids(probs, features)?;
    let y0 = assign_labels(features, &c0)?;
    let c1 = refine_centroids(features, &y0, &c0)?;
    assign_labels(features, &c1)
}

/// Pseudo-labels for `samples` from the model's current eval-mode features.
pub fn pseudo_labels(model: &Model, samples: &Matrix) -> Result<PseudoLabelSet> {
    if samples.rows() == 0 {
        return Err(Error::EmptyInput("pseudo_labels"));
    }
    let features = model.features(samples)?;
    let probs = softmax(&model.forward_logits(&features)?);
    cluster_labels(&probs, &features)
}
