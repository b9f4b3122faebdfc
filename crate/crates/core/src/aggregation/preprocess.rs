//! Input preprocessing: nudge the image against the sign of the NLL
//! gradient so in-distribution inputs become even more likely under the
//! learned density, widening the gap to OoD inputs. The gradient flows
//! end-to-end through the flow and the encoder.

use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numerics::Tensor;

/// Differentiable scoring pipeline: encoder tap -> flow NLL.
pub struct EncoderFlowPipeline<'a> {
    pub encoder: &'a ToyEncoder,
    pub flow: &'a FlowModel,
    pub layer_id: String,
}

impl<'a> EncoderFlowPipeline<'a> {
    pub fn new(encoder: &'a ToyEncoder, flow: &'a FlowModel, layer_id: impl Into<String>) -> Self {
        EncoderFlowPipeline { encoder, flow, layer_id: layer_id.into() }
    }

    /// Mean NLL of the image's embedding cells under the flow.
    pub fn mean_nll(&self, image: &Tensor) -> Result<f64> {
        let emb = self.encoder.encode(image, &self.layer_id)?;
        let nll = self.flow.nll(&emb.to_matrix())?;
        Ok(nll.iter().sum::<f64>() / nll.len() as f64)
    }

    /// Mean NLL and its gradient with respect to the image, obtained by
    /// backpropagating through the flow and the encoder.
    pub fn mean_nll_grad(&self, image: &Tensor) -> Result<(f64, Tensor)> {
        let tap_idx = self.encoder.tap_index(&self.layer_id)?;
        let emb = self.encoder.encode(image, &self.layer_id)?;
        let cells = emb.to_matrix();
        let (mean, dcells) = self.flow.mean_nll_grad(&cells)?;

        let dtap = Tensor::from_vec(
            vec![emb.height, emb.width, emb.dim],
            dcells.into_data(),
        )?;
        let cache = self.encoder.forward(image, None);
        let dimage = self.encoder.backward_from_tap(&cache, tap_idx, &dtap);
        if !dimage.is_finite() {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        Ok((mean, dimage))
    }
}

/// `x' = clamp(x - eps * sign(d meanNLL / dx), 0, 1)`.
///
/// The step direction decreases the NLL: in-distribution inputs move
/// deeper into the learned density.
pub fn input_preprocess(
    image: &Tensor,
    pipeline: &EncoderFlowPipeline,
    epsilon: f64,
) -> Result<Tensor> {
    if epsilon < 0.0 {
        return Err(Error::contract("epsilon must be nonnegative"));
    }
    if epsilon == 0.0 {
        return Ok(image.clone());
    }
    let (_, grad) = pipeline.mean_nll_grad(image)?;
    let mut out = image.clone();
    for (v, &g) in out.data_mut().iter_mut().zip(grad.data()) {
        let sign = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        *v = (*v - epsilon * sign).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn tiny_pipeline(seed_value: u64) -> (ToyEncoder, FlowModel) {
        let enc = ToyEncoder::with_widths(1, 2, &[4], 0.0, seed_value);
        let mut flow = FlowModel::init_with(4, 2, 8, seed_value);
        flow.perturb_params(0.3, seed_value);
        (enc, flow)
    }

    fn random_image(seed_value: u64, h: usize, w: usize) -> Tensor {
        let mut rng = seed::rng_for(seed_value, "preproc-img");
        Tensor::from_vec(
            vec![h, w, 1],
            (0..h * w).map(|_| rng.random_range(0.05..0.95)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let (enc, flow) = tiny_pipeline(4);
        let pipeline = EncoderFlowPipeline::new(&enc, &flow, "s1");
        let img = random_image(1, 8, 8);
        let out = input_preprocess(&img, &pipeline, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn gradient_signs_match_finite_differences() {
        let (enc, flow) = tiny_pipeline(9);
        let pipeline = EncoderFlowPipeline::new(&enc, &flow, "s1");
        let img = random_image(2, 4, 4);
        let (_, grad) = pipeline.mean_nll_grad(&img).unwrap();

        let h = 1e-5;
        for i in 0..img.numel() {
            let g = grad.data()[i];
            if g.abs() < 1e-7 {
                continue; // sign is numerically meaningless there
            }
            let mut xp = img.clone();
            xp.data_mut()[i] = (xp.data()[i] + h).min(1.0);
            let mut xm = img.clone();
            xm.data_mut()[i] = (xm.data()[i] - h).max(0.0);
            let fd = (pipeline.mean_nll(&xp).unwrap() - pipeline.mean_nll(&xm).unwrap())
                / (xp.data()[i] - xm.data()[i]);
            assert!(
                fd.signum() == g.signum(),
                "pixel {i}: finite-difference {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn gradient_values_match_finite_differences() {
        let (enc, flow) = tiny_pipeline(12);
        let pipeline = EncoderFlowPipeline::new(&enc, &flow, "s1");
        let img = random_image(3, 4, 4);
        let (_, grad) = pipeline.mean_nll_grad(&img).unwrap();
        let h = 1e-6;
        for i in 0..img.numel() {
            let mut xp = img.clone();
            xp.data_mut()[i] += h;
            let mut xm = img.clone();
            xm.data_mut()[i] -= h;
            let fd = (pipeline.mean_nll(&xp).unwrap() - pipeline.mean_nll(&xm).unwrap())
                / (2.0 * h);
            let an = grad.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "pixel {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn quarter_step_moves_or_clamps_every_pixel() {
        let (enc, flow) = tiny_pipeline(30);
        let pipeline = EncoderFlowPipeline::new(&enc, &flow, "s1");
        let img = random_image(5, 8, 8);
        let out = input_preprocess(&img, &pipeline, 0.25).unwrap();
        for (i, (&a, &b)) in img.data().iter().zip(out.data()).enumerate() {
            let moved = (a - b).abs();
            let clamped = b == 0.0 || b == 1.0;
            assert!(
                (moved - 0.25).abs() < 1e-12 || clamped || moved == 0.0,
                "pixel {i} moved {moved} without hitting a bound"
            );
        }
        // The step must actually move the bulk of the image.
        let moved = img
            .data()
            .iter()
            .zip(out.data())
            .filter(|(a, b)| a != b)
            .count();
        assert!(moved > img.numel() / 2);
    }
}
