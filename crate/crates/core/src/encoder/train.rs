use rand::Rng;

use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Tensor};
use crate::raster::{ClassRaster, LabelMask, LABEL_ID, VOID_LABEL};
use crate::seed;

/// One training scene: image plus pixel-resolution semantic classes and
/// OoD/void flags.
#[derive(Debug, Clone)]
pub struct LabelledScene {
    pub image: Tensor,
    pub classes: ClassRaster,
    pub ood_mask: LabelMask,
}

#[derive(Debug, Clone)]
pub struct ToyTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight of the entropy-maximization term on OoD/void cells; 0 disables it.
    pub ood_entropy_weight: f64,
    /// Treat void/OoD cells as an extra output class (the last index).
    pub void_as_class: bool,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            iterations: 300,
            learning_rate: 3e-3,
            seed: 0,
            ood_entropy_weight: 0.0,
            void_as_class: false,
        }
    }
}

/// Per-cell training target derived from the pixel rasters at the cell's
/// center pixel.
enum CellTarget {
    Class(usize),
    OutOfDistribution,
}

fn cell_target(scene: &LabelledScene, stride: usize, r: usize, c: usize) -> CellTarget {
    let pr = (r * stride + stride / 2).min(scene.classes.height - 1);
    let pc = (c * stride + stride / 2).min(scene.classes.width - 1);
    let class = scene.classes.get(pr, pc);
    let flag = scene.ood_mask.get(pr, pc);
    if flag != LABEL_ID || class == VOID_LABEL {
        CellTarget::OutOfDistribution
    } else {
        CellTarget::Class(class as usize)
    }
}

/// Cross-entropy training of the toy encoder with Adam; deterministic
/// given the seed. Targets are read at each output cell's center pixel.
/// Returns the trained encoder and the per-iteration loss curve.
pub fn train_toy(
    enc: &ToyEncoder,
    scenes: &[LabelledScene],
    config: &ToyTrainConfig,
) -> Result<(ToyEncoder, Vec<f64>)> {
    if scenes.is_empty() {
        return Err(Error::contract("training needs at least one scene"));
    }
    if config.learning_rate <= 0.0 {
        return Err(Error::contract("learning rate must be positive"));
    }
    let mut enc = enc.clone();
    let stride = 1 << enc.n_stages();
    let c_out = enc.classes;
    let void_class = c_out - 1;

    let mut adam = {
        let mut shapes = Vec::new();
        for s in enc.stages() {
            shapes.push(s.weight.shape().to_vec());
            shapes.push(s.bias.shape().to_vec());
        }
        shapes.push(enc.head().weight.shape().to_vec());
        shapes.push(enc.head().bias.shape().to_vec());
        AdamState::new(&shapes)
    };

    let mut rng = seed::rng_for(config.seed, "toy-train");
    let mut dropout_rng = seed::rng_for(config.seed, "toy-train-dropout");
    let mut losses = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let scene = &scenes[rng.random_range(0..scenes.len())];
        let cache = if enc.dropout_rate > 0.0 {
            enc.forward(&scene.image, Some(&mut dropout_rng))
        } else {
            enc.forward(&scene.image, None)
        };
        let logits = &cache.logits;
        let (ho, wo, _) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);

        let mut dlogits = Tensor::zeros(logits.shape().to_vec());
        let mut ce_sum = 0.0;
        let mut ce_cells = 0usize;
        let mut ood_sum = 0.0;
        let mut ood_cells = 0usize;

        // First pass: count populations so gradients are proper means.
        let mut targets = Vec::with_capacity(ho * wo);
        for r in 0..ho {
            for c in 0..wo {
                let t = cell_target(scene, stride, r, c);
                match (&t, config.void_as_class) {
                    (CellTarget::Class(_), _) => ce_cells += 1,
                    (CellTarget::OutOfDistribution, true) => ce_cells += 1,
                    (CellTarget::OutOfDistribution, false) => {
                        if config.ood_entropy_weight > 0.0 {
                            ood_cells += 1;
                        }
                    }
                }
                targets.push(t);
            }
        }
        if ce_cells == 0 {
            return Err(Error::contract("no labelled cells in scene"));
        }

        for (cell, target) in targets.iter().enumerate() {
            let z = &logits.data()[cell * c_out..(cell + 1) * c_out];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut p: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = p.iter().sum();
            for v in &mut p {
                *v /= sum;
            }
            let dz = &mut dlogits.data_mut()[cell * c_out..(cell + 1) * c_out];

            let class = match (target, config.void_as_class) {
                (CellTarget::Class(k), _) => Some(*k),
                (CellTarget::OutOfDistribution, true) => Some(void_class),
                _ => None,
            };
            if let Some(k) = class {
                ce_sum -= p[k].max(1e-300).ln();
                for (j, d) in dz.iter_mut().enumerate() {
                    let one_hot = if j == k { 1.0 } else { 0.0 };
                    *d += (p[j] - one_hot) / ce_cells as f64;
                }
            } else if let (CellTarget::OutOfDistribution, false, true) =
                (target, config.void_as_class, config.ood_entropy_weight > 0.0)
            {
                // Maximize the softmax entropy on OoD/void cells:
                // d(-H)/dz_j = p_j (ln p_j + H).
                let entropy: f64 = p
                    .iter()
                    .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
                    .sum();
                ood_sum -= entropy;
                let w = config.ood_entropy_weight / ood_cells.max(1) as f64;
                for (j, d) in dz.iter_mut().enumerate() {
                    let lp = if p[j] > 0.0 { p[j].ln() } else { 0.0 };
                    *d += w * p[j] * (lp + entropy);
                }
            }
        }

        let loss = ce_sum / ce_cells as f64
            + if ood_cells > 0 {
                config.ood_entropy_weight * ood_sum / ood_cells as f64
            } else {
                0.0
            };
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: iter,
                detail: "toy encoder loss is non-finite".to_string(),
            });
        }
        losses.push(loss);

        let (stage_grads, head_grads, _) = enc.backward(&cache, &dlogits);
        let mut grads: Vec<&Tensor> = Vec::new();
        for (gw, gb) in &stage_grads {
            grads.push(gw);
            grads.push(gb);
        }
        grads.push(&head_grads.0);
        grads.push(&head_grads.1);

        let mut params = enc.param_tensors_mut();
        adam.update(&mut params, &grads, config.learning_rate)?;
    }

    Ok((enc, losses))
}

/// Fraction of non-void pixels whose cell-level argmax matches the class
/// raster (each pixel inherits its stride-cell's prediction).
pub fn pixel_accuracy(enc: &ToyEncoder, scene: &LabelledScene) -> Result<f64> {
    let probs = enc.predict_probs(&scene.image)?;
    let argmax = probs.argmax();
    let stride = 1 << enc.n_stages();
    let (h, w) = (scene.classes.height, scene.classes.width);
    let mut hit = 0u64;
    let mut total = 0u64;
    for r in 0..h {
        for c in 0..w {
            let class = scene.classes.get(r, c);
            if class == VOID_LABEL || scene.ood_mask.get(r, c) != LABEL_ID {
                continue;
            }
            let cell = (r / stride).min(probs.height - 1) * probs.width
                + (c / stride).min(probs.width - 1);
            total += 1;
            if argmax[cell] == class as u16 {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy over zero pixels".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny synthetic task: class is a function of color. Quadrants of
    /// red/green/blue-ish noise with matching labels.
    fn quadrant_scene(seed_value: u64, h: usize, w: usize) -> LabelledScene {
        let mut rng = seed::rng_for(seed_value, "quadrant");
        let mut data = vec![0.0; h * w * 3];
        let mut classes = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let class = match (r < h / 2, c < w / 2) {
                    (true, true) => 0u8,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 0,
                };
                classes[r * w + c] = class;
                let px = &mut data[(r * w + c) * 3..(r * w + c) * 3 + 3];
                px[class as usize] = 0.75 + rng.random_range(0.0..0.25);
                for k in (0..3).filter(|&k| k != class as usize) {
                    px[k] = rng.random_range(0.0..0.25);
                }
            }
        }
        LabelledScene {
            image: Tensor::from_vec(vec![h, w, 3], data.iter().map(|&v| f64::min(v, 1.0)).collect())
                .unwrap(),
            classes: ClassRaster::new(h, w, classes).unwrap(),
            ood_mask: LabelMask::filled(h, w, LABEL_ID),
        }
    }

    #[test]
    fn zero_iterations_leaves_weights_unchanged() {
        let enc = ToyEncoder::with_widths(3, 3, &[4, 8], 0.0, 5);
        let scenes = vec![quadrant_scene(1, 16, 16)];
        let config = ToyTrainConfig { iterations: 0, ..Default::default() };
        let (trained, losses) = train_toy(&enc, &scenes, &config).unwrap();
        assert_eq!(trained, enc);
        assert!(losses.is_empty());
    }

    #[test]
    fn loss_decreases_over_first_100_iterations() {
        let enc = ToyEncoder::with_widths(3, 3, &[4, 8], 0.0, 5);
        let scenes: Vec<LabelledScene> = (0..4).map(|i| quadrant_scene(i, 32, 32)).collect();
        let config = ToyTrainConfig { iterations: 100, ..Default::default() };
        let (_, losses) = train_toy(&enc, &scenes, &config).unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "loss trend should fall: {head} -> {tail}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let enc = ToyEncoder::with_widths(3, 3, &[4, 8], 0.0, 5);
        let scenes = vec![quadrant_scene(0, 16, 16)];
        let config = ToyTrainConfig { iterations: 20, ..Default::default() };
        let (a, _) = train_toy(&enc, &scenes, &config).unwrap();
        let (b, _) = train_toy(&enc, &scenes, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn learns_held_out_quadrant_scenes() {
        let enc = ToyEncoder::with_widths(3, 3, &[8, 16], 0.0, 7);
        let train: Vec<LabelledScene> = (0..6).map(|i| quadrant_scene(i, 32, 32)).collect();
        let config = ToyTrainConfig { iterations: 400, ..Default::default() };
        let (trained, _) = train_toy(&enc, &train, &config).unwrap();
        let held_out = quadrant_scene(999, 32, 32);
        let acc = pixel_accuracy(&trained, &held_out).unwrap();
        assert!(acc > 0.8, "held-out accuracy {acc}");
    }

    #[test]
    fn entropy_flag_raises_ood_entropy() {
        // Scenes with an OoD patch in the center.
        let make = |seed_value: u64| -> LabelledScene {
            let mut s = quadrant_scene(seed_value, 32, 32);
            let mut rng = seed::rng_for(seed_value, "ood-patch");
            for r in 12..20 {
                for c in 12..20 {
                    s.ood_mask.set(r, c, 1);
                    let base = (r * 32 + c) * 3;
                    // OoD pixels look unlike any class: bright magenta.
                    let d = s.image.data_mut();
                    d[base] = 0.9 + rng.random_range(0.0..0.1);
                    d[base + 1] = rng.random_range(0.0..0.1);
                    d[base + 2] = 0.9 + rng.random_range(0.0..0.1);
                }
            }
            s
        };
        let scenes: Vec<LabelledScene> = (0..4).map(make).collect();
        let held_out = make(321);
        let enc = ToyEncoder::with_widths(3, 3, &[8, 16], 0.0, 3);

        let plain_cfg = ToyTrainConfig { iterations: 250, ..Default::default() };
        let (plain, _) = train_toy(&enc, &scenes, &plain_cfg).unwrap();
        let flag_cfg = ToyTrainConfig {
            iterations: 250,
            ood_entropy_weight: 1.0,
            ..Default::default()
        };
        let (flagged, _) = train_toy(&enc, &scenes, &flag_cfg).unwrap();

        let mean_ood_entropy = |enc: &ToyEncoder| -> f64 {
            let probs = enc.predict_probs(&held_out.image).unwrap();
            let stride = 1 << enc.n_stages();
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in 0..probs.height {
                for c in 0..probs.width {
                    if let CellTarget::OutOfDistribution =
                        cell_target(&held_out, stride, r, c)
                    {
                        let px = probs.pixel(r, c);
                        sum += px
                            .iter()
                            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                            .sum::<f64>();
                        n += 1;
                    }
                }
            }
            sum / n as f64
        };

        let e_plain = mean_ood_entropy(&plain);
        let e_flagged = mean_ood_entropy(&flagged);
        assert!(
            e_flagged > e_plain,
            "entropy flag should raise OoD entropy: {e_plain} vs {e_flagged}"
        );
    }
}
