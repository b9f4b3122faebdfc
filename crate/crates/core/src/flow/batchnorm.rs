use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Training,
    Inference,
}

/// Per-dimension normalization as a bijector: `y = (x - m) / sqrt(v + eps)`.
///
/// Training mode uses batch statistics (and folds them into the running
/// estimates with `momentum`); inference mode uses the running estimates.
/// The log-det contribution is `-0.5 * sum_d log(v_d + eps)` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormBijector {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

/// Batch statistics kept for the exact backward pass.
pub struct BnCache {
    centered: Tensor,
    var: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNormBijector {
    /// Identity at initialization: running_var is set to `1 - eps` so the
    /// normalization scale `sqrt(var + eps)` is exactly 1 and the log-det
    /// exactly 0.
    pub fn identity_init(dim: usize) -> Self {
        let eps = 1e-5;
        BatchNormBijector {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0 - eps; dim],
            momentum: 0.99,
            eps,
            mode: BnMode::Inference,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    /// Inference-statistics forward; never mutates running estimates.
    pub fn forward_inference(&self, x: &Tensor) -> (Tensor, Vec<f64>) {
        let (batch, dim) = (x.shape()[0], x.shape()[1]);
        let mut ld_per_dim = 0.0;
        let mut scale = vec![0.0; dim];
        for d in 0..dim {
            let denom = self.running_var[d] + self.eps;
            scale[d] = 1.0 / denom.sqrt();
            ld_per_dim -= 0.5 * denom.ln();
        }
        let mut y = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let xrow = x.row(b);
            let yrow = y.row_mut(b);
            for d in 0..dim {
                yrow[d] = (xrow[d] - self.running_mean[d]) * scale[d];
            }
        }
        (y, vec![ld_per_dim; batch])
    }

    /// Batch-statistics forward; updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Vec<f64>, BnCache)> {
        let (batch, dim) = (x.shape()[0], x.shape()[1]);
        if batch < 2 {
            return Err(Error::contract(
                "batch-norm training requires batch_size >= 2",
            ));
        }
        let mut mean = vec![0.0; dim];
        for b in 0..batch {
            let xrow = x.row(b);
            for d in 0..dim {
                mean[d] += xrow[d];
            }
        }
        for m in &mut mean {
            *m /= batch as f64;
        }
        let mut var = vec![0.0; dim];
        let mut centered = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let xrow = x.row(b);
            let crow = centered.row_mut(b);
            for d in 0..dim {
                let c = xrow[d] - mean[d];
                crow[d] = c;
                var[d] += c * c;
            }
        }
        for v in &mut var {
            *v /= batch as f64;
        }

        let mut inv_std = vec![0.0; dim];
        let mut ld = 0.0;
        for d in 0..dim {
            let denom = var[d] + self.eps;
            inv_std[d] = 1.0 / denom.sqrt();
            ld -= 0.5 * denom.ln();
        }
        let mut y = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let crow = centered.row(b);
            let yrow = y.row_mut(b);
            for d in 0..dim {
                yrow[d] = crow[d] * inv_std[d];
            }
        }

        for d in 0..dim {
            self.running_mean[d] = self.momentum * self.running_mean[d] + (1.0 - self.momentum) * mean[d];
            self.running_var[d] = self.momentum * self.running_var[d] + (1.0 - self.momentum) * var[d];
        }

        Ok((y, vec![ld; batch], BnCache { centered, var, inv_std }))
    }

    /// Inverse using the running statistics (inference mode only).
    pub fn inverse(&self, y: &Tensor) -> Tensor {
        let (batch, dim) = (y.shape()[0], y.shape()[1]);
        let mut x = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let yrow = y.row(b);
            let xrow = x.row_mut(b);
            for d in 0..dim {
                xrow[d] = yrow[d] * (self.running_var[d] + self.eps).sqrt() + self.running_mean[d];
            }
        }
        x
    }

    /// Backward in inference mode: the running statistics are constants,
    /// so the map is a fixed diagonal affine and the log-det does not
    /// depend on the input.
    pub fn backward_inference(&self, dl_dy: &Tensor) -> Tensor {
        let (batch, dim) = (dl_dy.shape()[0], dl_dy.shape()[1]);
        let mut dl_dx = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let g = dl_dy.row(b);
            let o = dl_dx.row_mut(b);
            for d in 0..dim {
                o[d] = g[d] / (self.running_var[d] + self.eps).sqrt();
            }
        }
        dl_dx
    }

    /// Exact backward through batch statistics. `dl_dlogdet[b]` is the
    /// loss coefficient of sample b's log-det (the log-det also depends on
    /// the batch variance, which this accounts for).
    pub fn backward(&self, cache: &BnCache, dl_dy: &Tensor, dl_dlogdet: &[f64]) -> Tensor {
        let (batch, dim) = (dl_dy.shape()[0], dl_dy.shape()[1]);
        let bf = batch as f64;
        let c_sum: f64 = dl_dlogdet.iter().sum();

        let mut dl_dx = Tensor::zeros(vec![batch, dim]);
        for d in 0..dim {
            let inv = cache.inv_std[d];
            let denom = cache.var[d] + self.eps;

            // dL/dv from (a) y = centered * (v+eps)^-1/2 and (b) the
            // explicit -0.5*log(v+eps) log-det term.
            let mut dv = -0.5 * c_sum / denom;
            let mut dmu = 0.0;
            for b in 0..batch {
                let g = dl_dy.row(b)[d];
                let cent = cache.centered.row(b)[d];
                dv += g * cent * (-0.5) * inv * inv * inv;
                dmu -= g * inv;
            }
            for b in 0..batch {
                let g = dl_dy.row(b)[d];
                let cent = cache.centered.row(b)[d];
                dl_dx.row_mut(b)[d] = g * inv + dv * 2.0 * cent / bf + dmu / bf;
            }
        }
        dl_dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_init_is_exact_identity() {
        let bn = BatchNormBijector::identity_init(3);
        let x = Tensor::from_vec(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.5]).unwrap();
        let (y, ld) = bn.forward_inference(&x);
        assert_eq!(y, x);
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_normalizes_batch() {
        let mut bn = BatchNormBijector::identity_init(1);
        let x = Tensor::from_vec(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _, _) = bn.forward_train(&x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps shrinks it slightly
    }

    #[test]
    fn inverse_round_trips_running_stats() {
        let mut bn = BatchNormBijector::identity_init(2);
        bn.running_mean = vec![0.5, -1.0];
        bn.running_var = vec![2.0, 0.25];
        let x = Tensor::from_vec(vec![3, 2], vec![1.0, 0.0, -2.0, 4.0, 0.25, 1.5]).unwrap();
        let (y, _) = bn.forward_inference(&x);
        let back = bn.inverse(&y);
        for (a, b) in x.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn small_batch_rejected() {
        let mut bn = BatchNormBijector::identity_init(2);
        let x = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(bn.forward_train(&x).is_err());
    }
}
