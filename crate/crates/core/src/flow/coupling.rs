use rand::Rng;

use crate::error::Result;
use crate::numerics::{Mlp, MlpCache, MlpGrads, Tensor};

/// Affine coupling: half the dimensions (an alternating mask chosen by
/// `parity`) pass through unchanged and condition an element-wise affine
/// transform of the other half:
///
/// `y_b = x_b * exp(s(x_a)) + t(x_a)`
///
/// The raw scale is clamped through `s = c * tanh(s_raw / c)` so early
/// training cannot blow up the exponent. The transform is bijective for
/// any finite parameters; its log-Jacobian-determinant is `sum(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub parity: u8,
    pub scale_net: Mlp,
    pub shift_net: Mlp,
    pub scale_clamp: f64,
    keep_idx: Vec<usize>,
    change_idx: Vec<usize>,
}

/// Intermediates needed by the backward pass.
pub struct CouplingCache {
    x_change: Tensor,
    scale_cache: MlpCache,
    shift_cache: MlpCache,
    /// tanh(s_raw / c); the effective scale is `c * th`.
    th: Tensor,
}

/// Parameter gradients for both conditioner networks.
pub struct CouplingGrads {
    pub scale: MlpGrads,
    pub shift: MlpGrads,
}

pub(crate) fn split_indices(dim: usize, parity: u8) -> (Vec<usize>, Vec<usize>) {
    let keep = (0..dim).filter(|i| i % 2 == parity as usize).collect();
    let change = (0..dim).filter(|i| i % 2 != parity as usize).collect();
    (keep, change)
}

impl CouplingLayer {
    /// Identity-initialized layer: conditioner hidden layers are random,
    /// final layers zero, so `s = 0`, `t = 0` at the start.
    pub fn identity_init<R: Rng>(
        dim: usize,
        parity: u8,
        hidden_width: usize,
        scale_clamp: f64,
        rng: &mut R,
    ) -> Self {
        assert!(dim >= 2 && scale_clamp > 0.0);
        let (keep_idx, change_idx) = split_indices(dim, parity);
        let dims = [keep_idx.len(), hidden_width, hidden_width, change_idx.len()];
        let mut scale_net = Mlp::random(&dims, rng);
        scale_net.zero_final_layer();
        let mut shift_net = Mlp::random(&dims, rng);
        shift_net.zero_final_layer();
        CouplingLayer { parity, scale_net, shift_net, scale_clamp, keep_idx, change_idx }
    }

    pub fn from_parts(parity: u8, scale_net: Mlp, shift_net: Mlp, scale_clamp: f64) -> Self {
        let dim = scale_net.in_dim() + scale_net.out_dim();
        let (keep_idx, change_idx) = split_indices(dim, parity);
        debug_assert_eq!(scale_net.in_dim(), keep_idx.len());
        debug_assert_eq!(scale_net.out_dim(), change_idx.len());
        CouplingLayer { parity, scale_net, shift_net, scale_clamp, keep_idx, change_idx }
    }

    pub fn dim(&self) -> usize {
        self.keep_idx.len() + self.change_idx.len()
    }

    fn gather(&self, x: &Tensor, idx: &[usize]) -> Tensor {
        let batch = x.shape()[0];
        let mut out = Tensor::zeros(vec![batch, idx.len()]);
        for b in 0..batch {
            let xrow = x.row(b);
            let orow = out.row_mut(b);
            for (j, &i) in idx.iter().enumerate() {
                orow[j] = xrow[i];
            }
        }
        out
    }

    /// Effective scale `s` and its tanh pre-image, from raw net output.
    fn clamped_scale(&self, s_raw: &Tensor) -> (Tensor, Tensor) {
        let c = self.scale_clamp;
        let mut th = s_raw.clone();
        for v in th.data_mut() {
            *v = (*v / c).tanh();
        }
        let mut s = th.clone();
        for v in s.data_mut() {
            *v *= c;
        }
        (s, th)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>, CouplingCache)> {
        let batch = x.shape()[0];
        let x_keep = self.gather(x, &self.keep_idx);
        let x_change = self.gather(x, &self.change_idx);
        let (s_raw, scale_cache) = self.scale_net.forward_cached(&x_keep)?;
        let (t, shift_cache) = self.shift_net.forward_cached(&x_keep)?;
        let (s, th) = self.clamped_scale(&s_raw);

        let mut y = x.clone();
        let mut log_det = vec![0.0; batch];
        for b in 0..batch {
            let srow = s.row(b);
            let trow = t.row(b);
            let xrow = x_change.row(b);
            let yrow = y.row_mut(b);
            let mut ld = 0.0;
            for (j, &i) in self.change_idx.iter().enumerate() {
                yrow[i] = xrow[j] * srow[j].exp() + trow[j];
                ld += srow[j];
            }
            log_det[b] = ld;
        }
        Ok((y, log_det, CouplingCache { x_change, scale_cache, shift_cache, th }))
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let batch = y.shape()[0];
        let y_keep = self.gather(y, &self.keep_idx);
        let s_raw = self.scale_net.apply(&y_keep)?;
        let t = self.shift_net.apply(&y_keep)?;
        let (s, _) = self.clamped_scale(&s_raw);

        let mut x = y.clone();
        for b in 0..batch {
            let srow = s.row(b);
            let trow = t.row(b);
            let xrow = x.row_mut(b);
            for (j, &i) in self.change_idx.iter().enumerate() {
                xrow[i] = (xrow[i] - trow[j]) * (-srow[j]).exp();
            }
        }
        Ok(x)
    }

    /// Reverse-mode step: `dl_dy` is the gradient w.r.t. the output,
    /// `dl_dlogdet[b]` the loss coefficient of sample b's log-det.
    pub fn backward(
        &self,
        cache: &CouplingCache,
        dl_dy: &Tensor,
        dl_dlogdet: &[f64],
    ) -> (Tensor, CouplingGrads) {
        let batch = dl_dy.shape()[0];
        let kc = self.change_idx.len();
        let c = self.scale_clamp;

        let mut dl_ds_raw = Tensor::zeros(vec![batch, kc]);
        let mut dl_dt = Tensor::zeros(vec![batch, kc]);
        let mut dl_dx_change = Tensor::zeros(vec![batch, kc]);
        for b in 0..batch {
            let dyrow = dl_dy.row(b);
            let throw = cache.th.row(b);
            let xrow = cache.x_change.row(b);
            let cb = dl_dlogdet[b];
            let dsr = dl_ds_raw.row_mut(b);
            for (j, &i) in self.change_idx.iter().enumerate() {
                let exp_s = (c * throw[j]).exp();
                let dl_ds = dyrow[i] * xrow[j] * exp_s + cb;
                // d/ds_raw of c*tanh(s_raw/c) = 1 - tanh^2
                dsr[j] = dl_ds * (1.0 - throw[j] * throw[j]);
            }
            let dtrow = dl_dt.row_mut(b);
            let dxc = dl_dx_change.row_mut(b);
            for (j, &i) in self.change_idx.iter().enumerate() {
                let exp_s = (c * throw[j]).exp();
                dtrow[j] = dyrow[i];
                dxc[j] = dyrow[i] * exp_s;
            }
        }

        let (dxa_scale, gscale) = self.scale_net.backward(&cache.scale_cache, &dl_ds_raw);
        let (dxa_shift, gshift) = self.shift_net.backward(&cache.shift_cache, &dl_dt);

        let dim = self.dim();
        let mut dl_dx = Tensor::zeros(vec![batch, dim]);
        for b in 0..batch {
            let dyrow = dl_dy.row(b);
            let sa = dxa_scale.row(b);
            let sb = dxa_shift.row(b);
            let dxc = dl_dx_change.row(b);
            let orow = dl_dx.row_mut(b);
            for (j, &i) in self.keep_idx.iter().enumerate() {
                orow[i] = dyrow[i] + sa[j] + sb[j];
            }
            for (j, &i) in self.change_idx.iter().enumerate() {
                orow[i] = dxc[j];
            }
        }
        (dl_dx, CouplingGrads { scale: gscale, shift: gshift })
    }
}
