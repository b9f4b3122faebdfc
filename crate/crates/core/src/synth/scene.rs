use rand::Rng;

use crate::numerics::Tensor;
use crate::raster::{ClassRaster, VOID_LABEL};
use crate::seed;

/// Binary per-pixel mask (ego vehicle, footprints, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    pub height: usize,
    pub width: usize,
    values: Vec<bool>,
}

impl BinaryRaster {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        BinaryRaster { height, width, values: vec![value; height * width] }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.values[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.values[r * self.width + c] = v;
    }

    pub fn any_in_rect(&self, r0: usize, c0: usize, h: usize, w: usize) -> bool {
        for r in r0..(r0 + h).min(self.height) {
            for c in c0..(c0 + w).min(self.width) {
                if self.get(r, c) {
                    return true;
                }
            }
        }
        false
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Background image plus the rasters the generator needs: ego-vehicle
/// mask and a per-pixel depth surrogate.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub background: Tensor,
    pub ego_mask: BinaryRaster,
    pub depth_proxy: Vec<f64>,
    pub seed: u64,
}

/// Scene bundle: the spec plus an optional semantic class raster (present
/// for procedural scenes, absent for arbitrary user-supplied backgrounds).
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub classes: Option<ClassRaster>,
}

/// Semantic classes of the procedural scenes.
pub const CLASS_ROAD: u8 = 0;
pub const CLASS_BUILDING: u8 = 1;
pub const CLASS_SKY: u8 = 2;
pub const CLASS_VEGETATION: u8 = 3;
pub const PROCEDURAL_CLASS_COUNT: usize = 4;

#[derive(Debug, Clone)]
pub struct ProceduralSceneConfig {
    pub height: usize,
    pub width: usize,
    /// Horizon row as a fraction of the height.
    pub horizon_frac: f64,
    /// Carve an ego-vehicle hood at the bottom (masked and void-labelled).
    pub with_ego: bool,
    /// Planar depth surrogate range (near at the bottom row, far at the horizon).
    pub depth_near: f64,
    pub depth_far: f64,
}

impl Default for ProceduralSceneConfig {
    fn default() -> Self {
        ProceduralSceneConfig {
            height: 96,
            width: 128,
            horizon_frac: 0.42,
            with_ego: true,
            depth_near: 5.0,
            depth_far: 150.0,
        }
    }
}

/// Deterministic street-like scene: sky above the horizon, a band of
/// buildings, road below, vegetation strips at the road edges, and an
/// ego-vehicle hood at the bottom. Class raster matches pixel for pixel;
/// ego pixels are void.
pub fn procedural_scene(seed_value: u64, config: &ProceduralSceneConfig) -> SceneBundle {
    let (h, w) = (config.height, config.width);
    let mut rng = seed::rng_for(seed_value, "scene");
    let horizon = ((h as f64 * config.horizon_frac) as usize).clamp(1, h - 2);
    let building_bottom = horizon + (h - horizon) / 3;

    let mut image = vec![0.0; h * w * 3];
    let mut classes = vec![CLASS_ROAD; h * w];

    // Per-scene palette jitter so scenes differ.
    let sky_base = [
        0.55 + rng.random_range(-0.06..0.06),
        0.70 + rng.random_range(-0.06..0.06),
        0.88 + rng.random_range(-0.05..0.05),
    ];
    let road_base = 0.32 + rng.random_range(-0.05..0.05);
    let building_tint = rng.random_range(-0.05..0.08);

    // Building facade segment widths.
    let mut facades: Vec<(usize, f64)> = Vec::new();
    let mut c = 0usize;
    while c < w {
        let seg = rng.random_range(8..20usize).min(w - c);
        facades.push((c + seg, 0.45 + building_tint + rng.random_range(-0.12..0.12)));
        c += seg;
    }

    for r in 0..h {
        for c in 0..w {
            let px = &mut image[(r * w + c) * 3..(r * w + c) * 3 + 3];
            let noise = rng.random_range(-0.02..0.02);
            if r < horizon {
                // Sky with a mild vertical gradient.
                let t = r as f64 / horizon as f64;
                px[0] = (sky_base[0] + 0.10 * t + noise).clamp(0.0, 1.0);
                px[1] = (sky_base[1] + 0.08 * t + noise).clamp(0.0, 1.0);
                px[2] = (sky_base[2] + 0.05 * t + noise).clamp(0.0, 1.0);
                classes[r * w + c] = CLASS_SKY;
            } else if r < building_bottom {
                let shade = facades.iter().find(|&&(end, _)| c < end).map(|&(_, s)| s).unwrap();
                px[0] = (shade + 0.04 + noise).clamp(0.0, 1.0);
                px[1] = (shade + noise).clamp(0.0, 1.0);
                px[2] = (shade - 0.04 + noise).clamp(0.0, 1.0);
                classes[r * w + c] = CLASS_BUILDING;
            } else {
                // Road, darker with distance.
                let t = (r - building_bottom) as f64 / (h - building_bottom) as f64;
                let v = road_base + 0.10 * t;
                px[0] = (v + noise).clamp(0.0, 1.0);
                px[1] = (v + noise).clamp(0.0, 1.0);
                px[2] = (v + 0.02 + noise).clamp(0.0, 1.0);
                classes[r * w + c] = CLASS_ROAD;
            }
        }
    }

    // Vegetation strips flanking the road.
    let strip_w = (w / 10).max(2);
    for r in building_bottom..h {
        for side in [0usize, 1] {
            for i in 0..strip_w {
                let c = if side == 0 { i } else { w - 1 - i };
                let px = &mut image[(r * w + c) * 3..(r * w + c) * 3 + 3];
                let noise: f64 = rng.random_range(-0.05..0.05);
                px[0] = (0.15 + noise).clamp(0.0, 1.0);
                px[1] = (0.45 + rng.random_range(-0.08..0.08f64)).clamp(0.0, 1.0);
                px[2] = (0.12 + noise).clamp(0.0, 1.0);
                classes[r * w + c] = CLASS_VEGETATION;
            }
        }
    }

    // Ego-vehicle hood: a dark band across the bottom center.
    let mut ego_mask = BinaryRaster::filled(h, w, false);
    if config.with_ego {
        let ego_h = (h / 8).max(2);
        let margin = w / 6;
        for r in h - ego_h..h {
            // Slight trapezoid: widens toward the bottom row.
            let grow = ((h - 1 - r) * margin) / ego_h.max(1);
            for c in grow + margin / 2..w - grow - margin / 2 {
                let px = &mut image[(r * w + c) * 3..(r * w + c) * 3 + 3];
                px[0] = 0.08;
                px[1] = 0.08;
                px[2] = 0.10;
                classes[r * w + c] = VOID_LABEL;
                ego_mask.set(r, c, true);
            }
        }
    }

    // Planar depth: near at the bottom, far at the horizon and above.
    let mut depth = vec![config.depth_far; h * w];
    for r in horizon..h {
        let t = (r - horizon) as f64 / (h - horizon).max(1) as f64;
        let d = config.depth_far + (config.depth_near - config.depth_far) * t;
        for c in 0..w {
            depth[r * w + c] = d;
        }
    }

    SceneBundle {
        spec: SceneSpec {
            background: Tensor::from_vec(vec![h, w, 3], image).expect("scene pixels are finite"),
            ego_mask,
            depth_proxy: depth,
            seed: seed_value,
        },
        classes: Some(ClassRaster::new(h, w, classes).expect("class raster matches")),
    }
}
