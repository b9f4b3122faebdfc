use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Vertical placement prior of an overlay object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ObjectCategory {
    /// Mostly lower half (ground animals and the like).
    MammalLike,
    /// Mostly upper half (birds, airborne things).
    AirborneLike,
    /// No vertical preference.
    Neutral,
}

/// RGBA overlay object. Channels are f64 in [0, 1], row-major `[h, w, 4]`.
/// At least one pixel is opaque and no opaque pixel touches the raster
/// border (border-cropped objects are filtered out at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub id: u32,
    pub category: ObjectCategory,
    pub height: usize,
    pub width: usize,
    rgba: Vec<f64>,
    /// Opaque bounding box spans at least `MIN_VISIBLE_SIDE` pixels both ways.
    pub meets_min_size: bool,
}

pub const MIN_VISIBLE_SIDE: usize = 6;

impl ObjectAsset {
    pub fn new(
        id: u32,
        category: ObjectCategory,
        height: usize,
        width: usize,
        rgba: Vec<f64>,
    ) -> Result<Self> {
        if rgba.len() != height * width * 4 {
            return Err(Error::contract("asset raster size mismatch"));
        }
        let alpha_at = |r: usize, c: usize| rgba[(r * width + c) * 4 + 3];
        let mut any_opaque = false;
        let (mut r0, mut r1, mut c0, mut c1) = (height, 0usize, width, 0usize);
        for r in 0..height {
            for c in 0..width {
                if alpha_at(r, c) > 0.0 {
                    any_opaque = true;
                    if r == 0 || c == 0 || r == height - 1 || c == width - 1 {
                        return Err(Error::contract(
                            "asset touches its raster border; border-cropped objects are filtered out",
                        ));
                    }
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        if !any_opaque {
            return Err(Error::contract("asset has no visible pixels"));
        }
        let meets_min_size =
            (r1 - r0 + 1) >= MIN_VISIBLE_SIDE && (c1 - c0 + 1) >= MIN_VISIBLE_SIDE;
        Ok(ObjectAsset { id, category, height, width, rgba, meets_min_size })
    }

    pub fn rgba(&self) -> &[f64] {
        &self.rgba
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * 4;
        &self.rgba[i..i + 4]
    }

    pub(crate) fn pixel_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let i = (r * self.width + c) * 4;
        &mut self.rgba[i..i + 4]
    }
}

/// Saturated palette far from the background classes (road grays,
/// building browns, sky blues, vegetation greens).
const PALETTE: [[f64; 3]; 6] = [
    [0.92, 0.10, 0.85], // magenta
    [0.10, 0.90, 0.90], // cyan
    [0.95, 0.55, 0.05], // orange
    [0.60, 0.10, 0.95], // purple
    [0.95, 0.90, 0.10], // yellow
    [0.95, 0.15, 0.15], // red
];

/// Procedural blob asset: a wobbling ellipse with a soft alpha edge and a
/// noisy two-tone fill. Deterministic in `(seed, id)`.
pub fn procedural_asset(seed_value: u64, id: u32, category: ObjectCategory) -> ObjectAsset {
    let mut rng: ChaCha8Rng = seed::rng_for_indexed(seed_value, "asset", id as u64);
    let size = rng.random_range(24..=40usize);
    let (h, w) = (size, size);
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    // Keep the blob plus its soft edge strictly inside the border ring.
    let max_extent = size as f64 / 2.0 - 2.5;
    let base_r = (size as f64 * rng.random_range(0.26..0.34)).min(max_extent / 1.25);
    let wobble_amp = (base_r * rng.random_range(0.1..0.25)).min(max_extent - base_r);
    let wobble_freq = rng.random_range(2..6) as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let color = PALETTE[rng.random_range(0..PALETTE.len())];
    let second = PALETTE[rng.random_range(0..PALETTE.len())];
    let stripe_freq = rng.random_range(0.2..0.8);

    let mut rgba = vec![0.0; h * w * 4];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let dx = c as f64 + 0.5 - cx;
            let dy = r as f64 + 0.5 - cy;
            let ang = dy.atan2(dx);
            let radius = base_r + wobble_amp * (wobble_freq * ang + phase).sin();
            let d = (dx * dx + dy * dy).sqrt();
            // Soft edge over ~1.5 px.
            let alpha = ((radius - d) / 1.5 + 0.5).clamp(0.0, 1.0);
            if alpha > 0.0 {
                let t = (0.5 + 0.5 * (stripe_freq * (r as f64 + c as f64)).sin())
                    * rng.random_range(0.7..1.0);
                let px = &mut rgba[(r * w + c) * 4..(r * w + c) * 4 + 4];
                for k in 0..3 {
                    px[k] = (color[k] * t + second[k] * (1.0 - t)).clamp(0.0, 1.0);
                }
                px[3] = alpha;
            }
        }
    }
    ObjectAsset::new(id, category, h, w, rgba).expect("procedural asset is well-formed")
}

/// A pool of procedural assets cycling through the categories.
pub fn procedural_asset_pool(seed_value: u64, count: usize) -> Vec<ObjectAsset> {
    (0..count)
        .map(|i| {
            let category = match i % 3 {
                0 => ObjectCategory::MammalLike,
                1 => ObjectCategory::AirborneLike,
                _ => ObjectCategory::Neutral,
            };
            procedural_asset(seed_value, i as u32, category)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_touching_asset_rejected() {
        let mut rgba = vec![0.0; 4 * 4 * 4];
        rgba[3] = 1.0; // alpha at (0, 0)
        assert!(ObjectAsset::new(0, ObjectCategory::Neutral, 4, 4, rgba).is_err());
    }

    #[test]
    fn fully_transparent_asset_rejected() {
        let rgba = vec![0.0; 4 * 4 * 4];
        assert!(ObjectAsset::new(0, ObjectCategory::Neutral, 4, 4, rgba).is_err());
    }

    #[test]
    fn procedural_assets_are_deterministic_and_valid() {
        let a = procedural_asset(7, 3, ObjectCategory::MammalLike);
        let b = procedural_asset(7, 3, ObjectCategory::MammalLike);
        assert_eq!(a, b);
        assert!(a.meets_min_size);
    }

    #[test]
    fn pool_cycles_categories() {
        let pool = procedural_asset_pool(1, 6);
        assert_eq!(pool[0].category, ObjectCategory::MammalLike);
        assert_eq!(pool[1].category, ObjectCategory::AirborneLike);
        assert_eq!(pool[2].category, ObjectCategory::Neutral);
        assert_eq!(pool.len(), 6);
    }
}
