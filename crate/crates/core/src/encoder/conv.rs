use rand::Rng;

use crate::numerics::Tensor;

/// 2D convolution over channel-last `[H, W, C]` tensors with SAME padding,
/// so the output is `[ceil(H/stride), ceil(W/stride), out_ch]`. Kernels are
/// `[out_ch, in_ch, kh, kw]`. Plain nested loops; fine at toy scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvLayer {
    pub fn random<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let data: Vec<f64> = (0..out_ch * in_ch * kernel * kernel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        ConvLayer {
            weight: Tensor::from_vec(vec![out_ch, in_ch, kernel, kernel], data).unwrap(),
            bias: Tensor::zeros(vec![out_ch]),
            stride,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn padding(&self, in_size: usize) -> (usize, usize) {
        let out = in_size.div_ceil(self.stride);
        let total = ((out - 1) * self.stride + self.kernel()).saturating_sub(in_size);
        (total / 2, out)
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (hi, wi, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        debug_assert_eq!(ci, self.in_ch());
        let k = self.kernel();
        let co = self.out_ch();
        let (pad_t, ho) = self.padding(hi);
        let (pad_l, wo) = self.padding(wi);

        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut out = Tensor::zeros(vec![ho, wo, co]);
        let od = out.data_mut();
        for r in 0..ho {
            for c in 0..wo {
                let base = (r * wo + c) * co;
                for o in 0..co {
                    let mut acc = bd[o];
                    for dr in 0..k {
                        let ri = (r * self.stride + dr) as isize - pad_t as isize;
                        if ri < 0 || ri >= hi as isize {
                            continue;
                        }
                        for dc in 0..k {
                            let ci_pos = (c * self.stride + dc) as isize - pad_l as isize;
                            if ci_pos < 0 || ci_pos >= wi as isize {
                                continue;
                            }
                            let xbase = (ri as usize * wi + ci_pos as usize) * ci;
                            let wbase = ((o * ci) * k + dr) * k + dc;
                            for i in 0..ci {
                                acc += xd[xbase + i] * wd[wbase + i * k * k];
                            }
                        }
                    }
                    od[base + o] = acc;
                }
            }
        }
        out
    }

    /// Gradients w.r.t. input, weight, and bias given `dL/d(output)`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (hi, wi, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.kernel();
        let co = self.out_ch();
        let (pad_t, ho) = self.padding(hi);
        let (pad_l, wo) = self.padding(wi);
        debug_assert_eq!(grad_out.shape(), &[ho, wo, co]);

        let xd = x.data();
        let wd = self.weight.data();
        let gd = grad_out.data();
        let mut gx = Tensor::zeros(vec![hi, wi, ci]);
        let mut gw = Tensor::zeros(self.weight.shape().to_vec());
        let mut gb = Tensor::zeros(vec![co]);
        {
            let gxd = gx.data_mut();
            let gwd = gw.data_mut();
            let gbd = gb.data_mut();
            for r in 0..ho {
                for c in 0..wo {
                    let base = (r * wo + c) * co;
                    for o in 0..co {
                        let g = gd[base + o];
                        if g == 0.0 {
                            continue;
                        }
                        gbd[o] += g;
                        for dr in 0..k {
                            let ri = (r * self.stride + dr) as isize - pad_t as isize;
                            if ri < 0 || ri >= hi as isize {
                                continue;
                            }
                            for dc in 0..k {
                                let ci_pos = (c * self.stride + dc) as isize - pad_l as isize;
                                if ci_pos < 0 || ci_pos >= wi as isize {
                                    continue;
                                }
                                let xbase = (ri as usize * wi + ci_pos as usize) * ci;
                                let wbase = ((o * ci) * k + dr) * k + dc;
                                for i in 0..ci {
                                    gwd[wbase + i * k * k] += g * xd[xbase + i];
                                    gxd[xbase + i] += g * wd[wbase + i * k * k];
                                }
                            }
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_is_ceil_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = ConvLayer::random(3, 4, 3, 2, &mut rng);
        let x = Tensor::zeros(vec![7, 9, 3]);
        let y = conv.forward(&x);
        assert_eq!(y.shape(), &[4, 5, 4]);
    }

    #[test]
    fn one_by_one_kernel_is_linear_map() {
        let mut conv = ConvLayer::random(2, 1, 1, 1, &mut ChaCha8Rng::seed_from_u64(2));
        conv.weight = Tensor::from_vec(vec![1, 2, 1, 1], vec![2.0, -1.0]).unwrap();
        conv.bias = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        let x = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 3.0, 0.25, 4.0]).unwrap();
        let y = conv.forward(&x);
        assert_eq!(y.data(), &[2.0 - 3.0 + 0.5, 0.5 - 4.0 + 0.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = ConvLayer::random(2, 3, 3, 2, &mut rng);
        let x = Tensor::from_vec(
            vec![5, 4, 2],
            (0..40).map(|i| ((i * 13 % 17) as f64 - 8.0) / 10.0).collect(),
        )
        .unwrap();
        let (ho, wo) = conv.out_shape(5, 4);
        let upstream = Tensor::from_vec(
            vec![ho, wo, 3],
            (0..ho * wo * 3).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect(),
        )
        .unwrap();

        let loss = |conv: &ConvLayer, x: &Tensor| -> f64 {
            conv.forward(x)
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, gw, gb) = conv.backward(&x, &upstream);

        let h = 1e-6;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-6, "input grad {i}");
        }
        for i in 0..conv.weight.numel() {
            let mut cp = conv.clone();
            cp.weight.data_mut()[i] += h;
            let mut cm = conv.clone();
            cm.weight.data_mut()[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - gw.data()[i]).abs() < 1e-6, "weight grad {i}");
        }
        for i in 0..conv.bias.numel() {
            let mut cp = conv.clone();
            cp.bias.data_mut()[i] += h;
            let mut cm = conv.clone();
            cm.bias.data_mut()[i] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() < 1e-6, "bias grad {i}");
        }
    }
}
