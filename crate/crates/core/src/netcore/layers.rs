//! Learnable layers with cached forward state and hand-written backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

use super::{Mode, Param};

/// Dense affine layer `y = x W^T + b` with `W` stored as `out x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Matrix>,
}

impl Linear {
    pub fn from_weights(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(
                "Linear::from_weights",
                weight.rows(),
                bias.len(),
            ));
        }
        let n = bias.len();
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(Matrix::from_vec(1, n, bias)?),
            input: None,
        })
    }

    /// Uniform init with limit `sqrt(6 / fan_in)` (He) or `sqrt(6 / (fan_in + fan_out))` (Glorot).
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, he: bool, rng: &mut R) -> Self {
        let limit = if he {
            (6.0 / in_dim as f64).sqrt()
        } else {
            (6.0 / (in_dim + out_dim) as f64).sqrt()
        };
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::from_weights(
            Matrix::from_vec(out_dim, in_dim, w).expect("sized"),
            vec![0.0; out_dim],
        )
        .expect("sized")
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("Linear::forward", self.in_dim(), x.cols()));
        }
        let mut y = x.matmul_t(&self.weight.value)?;
        let b = self.bias.value.as_slice();
        for i in 0..y.rows() {
            for (v, bv) in y.row_mut(i).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.forward(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns `dL/dx`.
    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self.input.take().ok_or(Error::StaleCache)?;
        let dw = dy.t_matmul(&x)?;
        for (g, d) in self
            .weight
            .grad
            .as_mut_slice()
            .iter_mut()
            .zip(dw.as_slice())
        {
            *g += d;
        }
        for (g, d) in self.bias.grad.as_mut_slice().iter_mut().zip(dy.col_sums()) {
            *g += d;
        }
        dy.matmul(&self.weight.value)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Per-feature batch normalization.
///
/// Train mode normalizes with the biased batch variance and folds the unbiased
/// variance into the running estimate; eval mode reads running statistics only.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(dim: usize, eps: f64, momentum: f64) -> Self {
        let mut gamma = Matrix::zeros(1, dim);
        gamma.fill(1.0);
        Self {
            gamma: Param::new(gamma),
            beta: Param::new(Matrix::zeros(1, dim)),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps,
            momentum,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::shape("BatchNorm::forward", self.dim(), x.cols()));
        }
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        let mut y = x.clone();
        for i in 0..y.rows() {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                let inv = 1.0 / (self.running_var[j] + self.eps).sqrt();
                *v = g[j] * (*v - self.running_mean[j]) * inv + b[j];
            }
        }
        Ok(y)
    }

    pub(crate) fn forward_train(&mut self, x: &Matrix) -> Result<Matrix> {
        let n = x.rows();
        if x.cols() != self.dim() {
            return Err(Error::shape("BatchNorm::forward", self.dim(), x.cols()));
        }
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let d = self.dim();
        let mean = x.col_means();
        let mut var = vec![0.0; d];
        for r in x.row_iter() {
            for j in 0..d {
                let c = r[j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut x_hat = x.clone();
        for i in 0..n {
            for (j, v) in x_hat.row_mut(i).iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let g = self.gamma.value.as_slice();
        let b = self.beta.value.as_slice();
        let mut y = x_hat.clone();
        for i in 0..n {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = g[j] * *v + b[j];
            }
        }

        let unbias = n as f64 / (n - 1) as f64;
        for j in 0..d {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
        }
        self.cache = Some(BnCache { x_hat, inv_std });
        Ok(y)
    }

    pub(crate) fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let BnCache { x_hat, inv_std } = self.cache.take().ok_or(Error::StaleCache)?;
        let n = dy.rows();
        let d = self.dim();
        let mut sum_dy = vec![0.0; d];
        let mut sum_dy_xhat = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                sum_dy[j] += dy[(i, j)];
                sum_dy_xhat[j] += dy[(i, j)] * x_hat[(i, j)];
            }
        }
        for j in 0..d {
            self.gamma.grad.as_mut_slice()[j] += sum_dy_xhat[j];
            self.beta.grad.as_mut_slice()[j] += sum_dy[j];
        }
        let g = self.gamma.value.as_slice();
        let nf = n as f64;
        let mut dx = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                dx[(i, j)] = g[j] * inv_std[j] / nf
                    * (nf * dy[(i, j)] - sum_dy[j] - x_hat[(i, j)] * sum_dy_xhat[j]);
            }
        }
        Ok(dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }
}

/// Weight-normalized classifier: `logit_k = s_k <v_k, f> / |v_k|`.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// One direction per class, `C x d_f`.
    pub directions: Param,
    /// One scale per class, `1 x C`.
    pub scales: Param,
}

impl Hypothesis {
    pub fn from_parts(directions: Matrix, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != directions.rows() {
            return Err(Error::shape(
                "Hypothesis::from_parts",
                directions.rows(),
                scales.len(),
            ));
        }
        let c = scales.len();
        Ok(Self {
            directions: Param::new(directions),
            scales: Param::new(Matrix::from_vec(1, c, scales)?),
        })
    }

    /// Gaussian directions with `s_k = |v_k|`, so the initial effective weight equals `v`.
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let sd = (2.0 / (feature_dim + num_classes) as f64).sqrt();
        let dist = Normal::new(0.0, sd).expect("positive sd");
        let v: Vec<f64> = (0..feature_dim * num_classes)
            .map(|_| dist.sample(rng))
            .collect();
        let v = Matrix::from_vec(num_classes, feature_dim, v).expect("sized");
        let s = v.row_iter().map(norm).collect();
        Self::from_parts(v, s).expect("sized")
    }

    pub fn num_classes(&self) -> usize {
        self.directions.value.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.directions.value.cols()
    }

    /// Effective weight rows `s_k v_k / |v_k|`.
    pub fn effective_weights(&self) -> Result<Matrix> {
        let v = &self.directions.value;
        let s = self.scales.value.as_slice();
        let mut w = v.clone();
        for k in 0..v.rows() {
            let nk = norm(v.row(k));
            if !(nk > 0.0) {
                return Err(Error::DegenerateDirection(k));
            }
            let f = s[k] / nk;
            w.row_mut(k).iter_mut().for_each(|x| *x *= f);
        }
        Ok(w)
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(Error::shape(
                "Hypothesis::forward",
                self.feature_dim(),
                features.cols(),
            ));
        }
        features.matmul_t(&self.effective_weights()?)
    }

    /// Returns `dL/dfeatures`; parameter gradients are accumulated only when
    /// `train_head` is set.
    pub(crate) fn backward(
        &mut self,
        features: &Matrix,
        dlogits: &Matrix,
        train_head: bool,
    ) -> Result<Matrix> {
        let w = self.effective_weights()?;
        let dfeat = dlogits.matmul(&w)?;
        if train_head {
            // G_k = sum_i dz_ik f_i, then ds_k = <u_k, G_k>, dv_k = s_k/|v_k| (G_k - u_k <u_k, G_k>)
            let g = dlogits.t_matmul(features)?;
            let s = self.scales.value.as_slice().to_vec();
            for k in 0..self.num_classes() {
                let v = self.directions.value.row(k);
                let nk = norm(v);
                let u: Vec<f64> = v.iter().map(|x| x / nk).collect();
                let gk = g.row(k);
                let ug = dot(&u, gk);
                self.scales.grad.as_mut_slice()[k] += ug;
                let f = s[k] / nk;
                for (j, dv) in self.directions.grad.row_mut(k).iter_mut().enumerate() {
                    *dv += f * (gk[j] - u[j] * ug);
                }
            }
        }
        Ok(dfeat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batchnorm_rejects_single_row_in_train_mode() {
        let mut bn = BatchNorm::new(3, 1e-5, 0.1);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            bn.forward_train(&x),
            Err(Error::DegenerateBatch(1))
        ));
        assert!(bn.forward_eval(&x).is_ok());
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm::new(2, 0.0, 0.1);
        let x = Matrix::from_rows(&[[1.0, 10.0], [3.0, 20.0], [5.0, 60.0]]).unwrap();
        let y = bn.forward_train(&x).unwrap();
        for m in y.col_means() {
            assert!(m.abs() < 1e-12);
        }
        let var0: f64 = y.row_iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!((var0 - 1.0).abs() < 1e-12);
        // running mean moved 10% toward the batch mean
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_without_forward_is_stale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::init(2, 3, true, &mut rng);
        let dy = Matrix::zeros(4, 3);
        assert!(matches!(lin.backward(&dy), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_direction_is_degenerate() {
        let h = Hypothesis::from_parts(Matrix::zeros(2, 3), vec![1.0, 1.0]).unwrap();
        let f = Matrix::zeros(1, 3);
        assert!(matches!(h.forward(&f), Err(Error::DegenerateDirection(0))));
    }
}
