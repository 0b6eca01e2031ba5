use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Draws a mixup coefficient from `Beta(rho, rho)`.
pub fn sample_lambda<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "rho must be > 0, got {rho}"
        )));
    }
    let beta = Beta::new(rho, rho).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}

/// Mixed samples together with the label pair and coefficient that produced
/// each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBatch {
    pub x_mix: Matrix,
    pub y_a: Vec<usize>,
    pub y_b: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl VirtualBatch {
    pub fn len(&self) -> usize {
        self.x_mix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x_mix.rows() == 0
    }

    /// `x_mix[i] = λ_i x[i] + (1 - λ_i) x[partner[i]]`.
    pub fn from_pairs(
        x: &Matrix,
        labels: &[usize],
        partner: &[usize],
        lambdas: &[f64],
    ) -> Result<Self> {
        let n = x.rows();
        if labels.len() != n || partner.len() != n || lambdas.len() != n {
            return Err(Error::shape(
                "VirtualBatch::from_pairs",
                n,
                "mismatched lengths",
            ));
        }
        if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidParameter(format!(
                "lambda {l} outside [0, 1]"
            )));
        }
        let mut x_mix = Matrix::zeros(n, x.cols());
        for i in 0..n {
            let lam = lambdas[i];
            let (a, b) = (x.row(i), x.row(partner[i]));
            for (o, (&va, &vb)) in x_mix.row_mut(i).iter_mut().zip(a.iter().zip(b)) {
                *o = lam * va + (1.0 - lam) * vb;
            }
        }
        Ok(Self {
            x_mix,
            y_a: labels.to_vec(),
            y_b: partner.iter().map(|&j| labels[j]).collect(),
            lambdas: lambdas.to_vec(),
        })
    }

    /// Unmixed samples: `λ = 1` and `y_b = y_a`.
    pub fn unmixed(x: &Matrix, labels: &[usize]) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::shape(
                "VirtualBatch::unmixed",
                x.rows(),
                labels.len(),
            ));
        }
        Ok(Self {
            x_mix: x.clone(),
            y_a: labels.to_vec(),
            y_b: labels.to_vec(),
            lambdas: vec![1.0; x.rows()],
        })
    }

    /// Rows `range` of every field.
    pub fn slice(&self, range: std::ops::Range<usize>) -> VirtualBatch {
        let idx: Vec<usize> = range.clone().collect();
        VirtualBatch {
            x_mix: self.x_mix.select_rows(&idx),
            y_a: self.y_a[range.clone()].to_vec(),
            y_b: self.y_b[range.clone()].to_vec(),
            lambdas: self.lambdas[range].to_vec(),
        }
    }
}

/// Pairs each row of `x` (in order) with a row of a seeded permutation of `x`,
/// drawing one `Beta(rho, rho)` coefficient per pair.
pub fn make_virtual_batch<R: Rng + ?Sized>(
    x: &Matrix,
    labels: &[usize],
    rho: f64,
    rng: &mut R,
) -> Result<VirtualBatch> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::DegenerateMixup(n));
    }
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    let lambdas = (0..n)
        .map(|_| sample_lambda(rho, rng))
        .collect::<Result<Vec<_>>>()?;
    VirtualBatch::from_pairs(x, labels, &partner, &lambdas)
}
