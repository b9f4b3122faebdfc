use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::raster::{LabelMask, LABEL_OOD};
use crate::resize::resize_bilinear;
use crate::synth::asset::{ObjectAsset, ObjectCategory};
use crate::synth::scene::SceneSpec;

/// Scale and integer top-left position of an overlay in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone)]
pub struct PlacementConfig {
    pub scale_range: (f64, f64),
    /// Prior mass on the preferred half for category-biased objects.
    pub biased_half_mass: f64,
    pub max_attempts: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig { scale_range: (0.5, 1.2), biased_half_mass: 0.75, max_attempts: 1000 }
    }
}

/// Draws a placement: scale uniform in range, horizontal position uniform,
/// vertical position from the category prior (75% of the mass in the lower
/// half for mammal-like objects, upper half for airborne-like, uniform for
/// neutral). Rejection-resamples until the scaled footprint avoids the ego
/// mask and lies fully inside the image.
pub fn sample_placement(
    rng: &mut ChaCha8Rng,
    scene: &SceneSpec,
    asset: &ObjectAsset,
    config: &PlacementConfig,
) -> Result<Placement> {
    let (img_h, img_w) = (scene.ego_mask.height, scene.ego_mask.width);
    for _ in 0..config.max_attempts {
        let scale = rng.random_range(config.scale_range.0..=config.scale_range.1);
        let w_s = ((asset.width as f64 * scale).round() as usize).max(1);
        let h_s = ((asset.height as f64 * scale).round() as usize).max(1);
        if w_s > img_w || h_s > img_h {
            continue;
        }

        let x = rng.random_range(0..=img_w - w_s);

        // Vertical prior over the object's center row.
        let center_lo = h_s as f64 / 2.0;
        let center_hi = img_h as f64 - h_s as f64 / 2.0;
        let mid = img_h as f64 / 2.0;
        let lower = (mid.max(center_lo), center_hi);
        let upper = (center_lo, mid.min(center_hi));
        let pick_lower_mass = match asset.category {
            ObjectCategory::MammalLike => Some(config.biased_half_mass),
            ObjectCategory::AirborneLike => Some(1.0 - config.biased_half_mass),
            ObjectCategory::Neutral => None,
        };
        let center_y = match pick_lower_mass {
            Some(p) if lower.0 < lower.1 && upper.0 < upper.1 => {
                if rng.random_bool(p) {
                    rng.random_range(lower.0..lower.1)
                } else {
                    rng.random_range(upper.0..upper.1)
                }
            }
            _ => rng.random_range(center_lo..center_hi),
        };
        let y = ((center_y - h_s as f64 / 2.0).round() as usize).min(img_h - h_s);

        if scene.ego_mask.any_in_rect(y, x, h_s, w_s) {
            continue;
        }
        return Ok(Placement { scale, x, y, width: w_s, height: h_s });
    }
    Err(Error::PlacementInfeasible { attempts: config.max_attempts })
}

/// Per-channel affine color transfer of the asset toward the statistics of
/// the background pixels under its footprint, blended with strength
/// `lambda` (0 = untouched, 1 = full match). Alpha is untouched; outputs
/// clamp to [0, 1]. Channels with zero variance only receive the
/// brightness shift.
pub fn color_adapt(
    asset: &ObjectAsset,
    background: &Tensor,
    placement: &Placement,
    lambda: f64,
) -> Result<ObjectAsset> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract("color adaptation strength must lie in [0, 1]"));
    }
    let (img_h, img_w) = (background.shape()[0], background.shape()[1]);
    if placement.y + placement.height > img_h || placement.x + placement.width > img_w {
        return Err(Error::contract("footprint outside the image"));
    }
    if lambda == 0.0 {
        return Ok(asset.clone());
    }

    // Footprint-window statistics per channel.
    let mut bg_mean = [0.0; 3];
    let mut bg_std = [0.0; 3];
    let n_bg = (placement.height * placement.width) as f64;
    for r in placement.y..placement.y + placement.height {
        for c in placement.x..placement.x + placement.width {
            let px = &background.data()[(r * img_w + c) * 3..(r * img_w + c) * 3 + 3];
            for k in 0..3 {
                bg_mean[k] += px[k];
            }
        }
    }
    for m in &mut bg_mean {
        *m /= n_bg;
    }
    for r in placement.y..placement.y + placement.height {
        for c in placement.x..placement.x + placement.width {
            let px = &background.data()[(r * img_w + c) * 3..(r * img_w + c) * 3 + 3];
            for k in 0..3 {
                bg_std[k] += (px[k] - bg_mean[k]).powi(2);
            }
        }
    }
    for s in &mut bg_std {
        *s = (*s / n_bg).sqrt();
    }

    // Asset statistics over visible pixels.
    let mut a_mean = [0.0; 3];
    let mut a_std = [0.0; 3];
    let mut n_vis = 0.0;
    for r in 0..asset.height {
        for c in 0..asset.width {
            let px = asset.pixel(r, c);
            if px[3] > 0.0 {
                for k in 0..3 {
                    a_mean[k] += px[k];
                }
                n_vis += 1.0;
            }
        }
    }
    for m in &mut a_mean {
        *m /= n_vis;
    }
    for r in 0..asset.height {
        for c in 0..asset.width {
            let px = asset.pixel(r, c);
            if px[3] > 0.0 {
                for k in 0..3 {
                    a_std[k] += (px[k] - a_mean[k]).powi(2);
                }
            }
        }
    }
    for s in &mut a_std {
        *s = (*s / n_vis).sqrt();
    }

    let mut adapted = asset.clone();
    for k in 0..3 {
        let target_mean = (1.0 - lambda) * a_mean[k] + lambda * bg_mean[k];
        let zero_var = a_std[k] < 1e-12;
        let gain = if zero_var {
            1.0
        } else {
            ((1.0 - lambda) * a_std[k] + lambda * bg_std[k]) / a_std[k]
        };
        for r in 0..asset.height {
            for c in 0..asset.width {
                let px = adapted.pixel_mut(r, c);
                if px[3] > 0.0 {
                    px[k] = ((px[k] - a_mean[k]) * gain + target_mean).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(adapted)
}

/// Alpha-over composition with bilinear asset resampling. The mask becomes
/// OoD exactly where the resampled alpha exceeds 0.5; elsewhere both image
/// and mask keep their background values.
pub fn composite(
    background: &Tensor,
    mask: &LabelMask,
    asset: &ObjectAsset,
    placement: &Placement,
) -> Result<(Tensor, LabelMask)> {
    let (img_h, img_w) = (background.shape()[0], background.shape()[1]);
    if placement.y + placement.height > img_h || placement.x + placement.width > img_w {
        return Err(Error::contract("footprint outside the image"));
    }

    // Resample each RGBA channel to the scaled footprint.
    let mut channels = Vec::with_capacity(4);
    for k in 0..4 {
        let plane: Vec<f64> = (0..asset.height * asset.width)
            .map(|i| asset.rgba()[i * 4 + k])
            .collect();
        channels.push(resize_bilinear(
            &plane,
            asset.height,
            asset.width,
            placement.height,
            placement.width,
        ));
    }

    let mut image = background.clone();
    let mut out_mask = mask.clone();
    let data = image.data_mut();
    for r in 0..placement.height {
        for c in 0..placement.width {
            let a = channels[3][r * placement.width + c].clamp(0.0, 1.0);
            if a <= 0.0 {
                continue;
            }
            let tr = placement.y + r;
            let tc = placement.x + c;
            let px = &mut data[(tr * img_w + tc) * 3..(tr * img_w + tc) * 3 + 3];
            for k in 0..3 {
                let fg = channels[k][r * placement.width + c];
                px[k] = (a * fg + (1.0 - a) * px[k]).clamp(0.0, 1.0);
            }
            if a > 0.5 {
                out_mask.set(tr, tc, LABEL_OOD);
            }
        }
    }
    Ok((image, out_mask))
}
