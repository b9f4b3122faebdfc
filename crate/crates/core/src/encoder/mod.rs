//! Deterministic toy convolutional encoder standing in for a full
//! segmentation backbone: three stride-2 tanh stages with pre-activation
//! embedding taps ("s1"/"s2"/"s3"), a 1x1 classifier head at the coarsest
//! stride, and optional dropout in the middle stage for MC sampling.

mod conv;
mod io;
mod train;

pub use conv::ConvLayer;
pub use train::{train_toy, LabelledScene, ToyTrainConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingMap;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scores::{softmax, CategoricalMap, McSampleStack};
use crate::seed;

pub const TAP_IDS: [&str; 3] = ["s1", "s2", "s3"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    stages: Vec<ConvLayer>,
    head: ConvLayer,
    pub in_channels: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

pub(crate) struct EncoderCache {
    /// Input to each stage (index 0 is the image).
    inputs: Vec<Tensor>,
    /// Conv outputs before tanh; the embedding taps.
    preacts: Vec<Tensor>,
    /// Inverted-dropout masks (values 0 or 1/(1-p)), where applied.
    masks: Vec<Option<Tensor>>,
    pub logits: Tensor,
}

impl ToyEncoder {
    /// Stage widths (16, 32, 64) at strides (2, 4, 8).
    pub fn new(in_channels: usize, classes: usize, dropout_rate: f64, seed_value: u64) -> Self {
        Self::with_widths(in_channels, classes, &[16, 32, 64], dropout_rate, seed_value)
    }

    pub fn with_widths(
        in_channels: usize,
        classes: usize,
        widths: &[usize],
        dropout_rate: f64,
        seed_value: u64,
    ) -> Self {
        assert!(!widths.is_empty() && classes >= 2);
        assert!((0.0..1.0).contains(&dropout_rate));
        let mut rng = seed::rng_for(seed_value, "encoder-init");
        let mut stages = Vec::with_capacity(widths.len());
        let mut ch = in_channels;
        for &w in widths {
            stages.push(ConvLayer::random(ch, w, 3, 2, &mut rng));
            ch = w;
        }
        let head = ConvLayer::random(ch, classes, 1, 1, &mut rng);
        ToyEncoder { stages, head, in_channels, classes, dropout_rate, seed: seed_value }
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage_widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.out_ch()).collect()
    }

    pub(crate) fn stages(&self) -> &[ConvLayer] {
        &self.stages
    }

    pub(crate) fn stages_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.stages
    }

    pub(crate) fn head(&self) -> &ConvLayer {
        &self.head
    }

    pub(crate) fn head_mut(&mut self) -> &mut ConvLayer {
        &mut self.head
    }

    /// All trainable tensors in a fixed order: stage (weight, bias) pairs,
    /// then the head's.
    pub(crate) fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.stages.len() + 2);
        for s in &mut self.stages {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Stage index of a tap id ("s1" is stage 0).
    pub fn tap_index(&self, layer_id: &str) -> Result<usize> {
        let idx = TAP_IDS
            .iter()
            .position(|&t| t == layer_id)
            .filter(|&i| i < self.stages.len());
        idx.ok_or_else(|| Error::contract(format!("unknown layer id {layer_id:?}")))
    }

    pub fn tap_stride(&self, layer_id: &str) -> Result<usize> {
        Ok(1 << (self.tap_index(layer_id)? + 1))
    }

    pub fn tap_dim(&self, layer_id: &str) -> Result<usize> {
        Ok(self.stages[self.tap_index(layer_id)?].out_ch())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(Error::contract(format!(
                "expected [H, W, {}] image, got {:?}",
                self.in_channels, shape
            )));
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("pixel values must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Middle-stage index where dropout applies.
    fn dropout_stage(&self) -> usize {
        self.stages.len() / 2
    }

    pub(crate) fn forward(
        &self,
        image: &Tensor,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> EncoderCache {
        let mut inputs = vec![image.clone()];
        let mut preacts = Vec::with_capacity(self.stages.len());
        let mut masks = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let pre = stage.forward(inputs.last().unwrap());
            let mut act = pre.clone();
            for v in act.data_mut() {
                *v = v.tanh();
            }
            let mask = match (&mut dropout_rng, s == self.dropout_stage() && self.dropout_rate > 0.0) {
                (Some(rng), true) => {
                    let keep = 1.0 - self.dropout_rate;
                    let mut m = Tensor::zeros(act.shape().to_vec());
                    for v in m.data_mut() {
                        *v = if rng.random_bool(keep) { 1.0 / keep } else { 0.0 };
                    }
                    for (a, &mv) in act.data_mut().iter_mut().zip(m.data()) {
                        *a *= mv;
                    }
                    Some(m)
                }
                _ => None,
            };
            preacts.push(pre);
            masks.push(mask);
            inputs.push(act);
        }
        let logits = self.head.forward(inputs.last().unwrap());
        EncoderCache { inputs, preacts, masks, logits }
    }

    /// Deterministic embedding map from a pre-activation tap.
    pub fn encode(&self, image: &Tensor, layer_id: &str) -> Result<EmbeddingMap> {
        self.check_image(image)?;
        let idx = self.tap_index(layer_id)?;
        let cache = self.forward(image, None);
        let tap = &cache.preacts[idx];
        let (h, w, d) = (tap.shape()[0], tap.shape()[1], tap.shape()[2]);
        EmbeddingMap::new(h, w, d, 1 << (idx + 1), layer_id, tap.data().to_vec())
    }

    /// Deterministic logits at the coarsest stride; upsampling to pixel
    /// resolution is the caller's job.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        Ok(self.forward(image, None).logits)
    }

    /// T stochastic softmax maps with independent dropout masks seeded
    /// from `(seed, t)`.
    pub fn mc_samples(&self, image: &Tensor, t_count: usize, seed_value: u64) -> Result<McSampleStack> {
        self.check_image(image)?;
        if t_count == 0 {
            return Err(Error::contract("need at least one MC sample"));
        }
        if self.dropout_rate == 0.0 && t_count > 1 {
            log::warn!("mc_samples with dropout_rate 0: all {t_count} slices will be identical");
        }
        let mut samples = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let mut rng = seed::rng_for_indexed(seed_value, "mc-dropout", t as u64);
            let cache = self.forward(image, Some(&mut rng));
            samples.push(softmax(&cache.logits)?);
        }
        McSampleStack::new(samples)
    }

    /// Softmax of the deterministic logits.
    pub fn predict_probs(&self, image: &Tensor) -> Result<CategoricalMap> {
        softmax(&self.predict(image)?)
    }

    /// Full backward from a logit gradient: per-stage (weight, bias) grads,
    /// head grads, and the image gradient.
    pub(crate) fn backward(
        &self,
        cache: &EncoderCache,
        dl_dlogits: &Tensor,
    ) -> (Vec<(Tensor, Tensor)>, (Tensor, Tensor), Tensor) {
        let (mut dact, gw_head, gb_head) =
            self.head.backward(cache.inputs.last().unwrap(), dl_dlogits);
        let mut stage_grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(self.stages.len());
        for s in (0..self.stages.len()).rev() {
            let dpre = self.act_backward(cache, s, &dact);
            let (dx, gw, gb) = self.stages[s].backward(&cache.inputs[s], &dpre);
            stage_grads.push((gw, gb));
            dact = dx;
        }
        stage_grads.reverse();
        (stage_grads, (gw_head, gb_head), dact)
    }

    /// Image gradient of a scalar loss whose upstream arrives at a
    /// pre-activation tap (used by input preprocessing).
    pub(crate) fn backward_from_tap(
        &self,
        cache: &EncoderCache,
        tap_idx: usize,
        dl_dtap: &Tensor,
    ) -> Tensor {
        let mut dact = {
            // The tap is the conv output itself, before tanh.
            let (dx, _, _) = self.stages[tap_idx].backward(&cache.inputs[tap_idx], dl_dtap);
            dx
        };
        for s in (0..tap_idx).rev() {
            let dpre = self.act_backward(cache, s, &dact);
            let (dx, _, _) = self.stages[s].backward(&cache.inputs[s], &dpre);
            dact = dx;
        }
        dact
    }

    /// Chain `dL/d(stage output)` back through dropout and tanh to the
    /// stage's pre-activation.
    fn act_backward(&self, cache: &EncoderCache, stage: usize, dout: &Tensor) -> Tensor {
        let mut d = dout.clone();
        if let Some(mask) = &cache.masks[stage] {
            for (v, &m) in d.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
        }
        // tanh'(z) = 1 - tanh(z)^2; acts holds tanh(z) pre-dropout only
        // when no mask was applied, so recompute from the preacts.
        for (v, &z) in d.data_mut().iter_mut().zip(cache.preacts[stage].data()) {
            let t = z.tanh();
            *v *= 1.0 - t * t;
        }
        d
    }
}
