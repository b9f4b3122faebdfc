use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClassRaster, LabelMask, LABEL_ID, LABEL_OOD, VOID_LABEL};
use crate::seed;
use crate::synth::asset::ObjectAsset;
use crate::synth::fog::{apply_fog, FogParams};
use crate::synth::place::{color_adapt, composite, sample_placement, Placement, PlacementConfig};
use crate::synth::png;
use crate::synth::scene::SceneBundle;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub validation_images: usize,
    pub test_images: usize,
    /// Inclusive range of overlay objects per image.
    pub objects_per_image: (usize, usize),
    pub placement: PlacementConfig,
    /// Color/brightness adaptation strength toward the footprint.
    pub color_adapt_strength: f64,
    pub fog_beta_range: (f64, f64),
    pub fog_probability: f64,
    pub atmospheric_light: [f64; 3],
    /// Fraction of the asset pool reserved for the validation split.
    pub validation_asset_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            validation_images: 30,
            test_images: 100,
            objects_per_image: (1, 3),
            placement: PlacementConfig::default(),
            color_adapt_strength: 0.5,
            fog_beta_range: (0.005, 0.02),
            fog_probability: 0.5,
            atmospheric_light: [0.9, 0.9, 0.92],
            validation_asset_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    pub mask: String,
    pub classes: Option<String>,
    pub split: String,
    pub scene_index: usize,
    pub asset_ids: Vec<u32>,
    pub placements: Vec<Placement>,
    pub fog_applied: bool,
    pub fog_beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub image_names: Vec<String>,
    pub asset_ids: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub images: Vec<ImageRecord>,
    pub ood_pixel_count: u64,
    pub id_pixel_count: u64,
    pub void_pixel_count: u64,
    pub validation: SplitInfo,
    pub test: SplitInfo,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, &json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn prevalence(&self) -> f64 {
        self.ood_pixel_count as f64 / (self.ood_pixel_count + self.id_pixel_count) as f64
    }
}

/// Generates the dataset on disk: composited images, `{0,1,255}` masks,
/// optional class rasters, and a JSON manifest (written last, atomically).
/// Deterministic given `(scenes, assets, config, master_seed)`; every image
/// derives its own RNG from the master seed, so generation order is
/// irrelevant. Validation and test draw from strictly disjoint asset-id
/// pools.
pub fn generate_dataset(
    scenes: &[SceneBundle],
    assets: &[ObjectAsset],
    config: &GeneratorConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<DatasetManifest> {
    if scenes.is_empty() {
        return Err(Error::Config("no background scenes supplied".into()));
    }
    let usable: Vec<&ObjectAsset> = assets.iter().filter(|a| a.meets_min_size).collect();
    if usable.is_empty() {
        return Err(Error::Config("no usable assets (all below minimum size)".into()));
    }
    let both_splits = config.validation_images > 0 && config.test_images > 0;
    if both_splits && usable.len() < 2 {
        return Err(Error::Config(
            "cannot keep validation and test asset pools disjoint with fewer than 2 assets"
                .into(),
        ));
    }

    // Disjoint asset pools.
    let mut ids: Vec<usize> = (0..usable.len()).collect();
    ids.shuffle(&mut seed::rng_for(master_seed, "asset-split"));
    let n_val_assets = if !both_splits {
        if config.validation_images > 0 { usable.len() } else { 0 }
    } else {
        ((usable.len() as f64 * config.validation_asset_fraction).round() as usize)
            .clamp(1, usable.len() - 1)
    };
    let (val_ids, test_ids) = ids.split_at(n_val_assets);
    let val_pool: Vec<&ObjectAsset> = val_ids.iter().map(|&i| usable[i]).collect();
    let test_pool: Vec<&ObjectAsset> = test_ids.iter().map(|&i| usable[i]).collect();

    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    let mut ood_total = 0u64;
    let mut id_total = 0u64;
    let mut void_total = 0u64;
    let total_images = config.validation_images + config.test_images;

    for i in 0..total_images {
        let is_val = i < config.validation_images;
        let pool = if is_val { &val_pool } else { &test_pool };
        if pool.is_empty() {
            return Err(Error::Config("empty asset pool for a non-empty split".into()));
        }
        let sub_seed = seed::derive_indexed_seed(master_seed, "image", i as u64);
        let mut rng = seed::rng_for_indexed(master_seed, "image", i as u64);

        let scene_index = rng.random_range(0..scenes.len());
        let bundle = &scenes[scene_index];
        let (h, w) = (bundle.spec.ego_mask.height, bundle.spec.ego_mask.width);

        // Fog goes on the background first, so it touches only
        // in-distribution pixels.
        let beta = rng.random_range(config.fog_beta_range.0..=config.fog_beta_range.1);
        let fog = FogParams {
            beta,
            atmospheric_light: config.atmospheric_light,
            per_image_probability: config.fog_probability,
        };
        let (mut image, fog_applied) =
            apply_fog(&bundle.spec.background, &bundle.spec.depth_proxy, &fog, &mut rng)?;

        // Background labels: void where the class raster is void, else ID.
        let mut mask = LabelMask::filled(h, w, LABEL_ID);
        if let Some(classes) = &bundle.classes {
            for r in 0..h {
                for c in 0..w {
                    if classes.get(r, c) == VOID_LABEL {
                        mask.set(r, c, VOID_LABEL);
                    }
                }
            }
        } else {
            for r in 0..h {
                for c in 0..w {
                    if bundle.spec.ego_mask.get(r, c) {
                        mask.set(r, c, VOID_LABEL);
                    }
                }
            }
        }

        let n_objects =
            rng.random_range(config.objects_per_image.0..=config.objects_per_image.1);
        let mut asset_ids = Vec::with_capacity(n_objects);
        let mut placements = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let asset = pool[rng.random_range(0..pool.len())];
            let placement = sample_placement(&mut rng, &bundle.spec, asset, &config.placement)?;
            let adapted = color_adapt(asset, &image, &placement, config.color_adapt_strength)?;
            let (next_image, next_mask) = composite(&image, &mask, &adapted, &placement)?;
            image = next_image;
            mask = next_mask;
            asset_ids.push(asset.id);
            placements.push(placement);
        }

        // Class raster for the composited image: overlay pixels become void
        // (they are no background class).
        let out_classes = bundle.classes.as_ref().map(|classes| {
            let mut c2 = classes.clone();
            for px in 0..h * w {
                if mask.labels()[px] == LABEL_OOD {
                    c2.classes[px] = VOID_LABEL;
                }
            }
            c2
        });

        let split = if is_val { "validation" } else { "test" };
        let image_name = format!("{split}_{i:05}_image.png");
        let mask_name = format!("{split}_{i:05}_mask.png");
        let classes_name = out_classes.as_ref().map(|_| format!("{split}_{i:05}_classes.png"));

        png::save_image_png(&image, &out_dir.join(&image_name))?;
        png::save_mask_png(&mask, &out_dir.join(&mask_name))?;
        if let (Some(classes), Some(name)) = (&out_classes, &classes_name) {
            png::save_classes_png(classes, &out_dir.join(name))?;
        }

        ood_total += mask.count(LABEL_OOD);
        id_total += mask.count(LABEL_ID);
        void_total += mask.count(VOID_LABEL);

        records.push(ImageRecord {
            image: image_name,
            mask: mask_name,
            classes: classes_name,
            split: split.to_string(),
            scene_index,
            asset_ids,
            placements,
            fog_applied,
            fog_beta: beta,
            seed: sub_seed,
        });
    }

    let split_info = |records: &[ImageRecord], split: &str, pool: &[&ObjectAsset]| SplitInfo {
        image_names: records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.image.clone())
            .collect(),
        asset_ids: {
            let mut ids: Vec<u32> = pool.iter().map(|a| a.id).collect();
            ids.sort_unstable();
            ids
        },
    };
    let validation = split_info(&records, "validation", &val_pool);
    let test = split_info(&records, "test", &test_pool);
    let manifest = DatasetManifest {
        master_seed,
        images: records,
        ood_pixel_count: ood_total,
        id_pixel_count: id_total,
        void_pixel_count: void_total,
        validation,
        test,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads one dataset entry back from disk.
pub fn load_entry(
    dir: &Path,
    record: &ImageRecord,
) -> Result<(crate::numerics::Tensor, LabelMask, Option<ClassRaster>)> {
    let image = png::load_image_png(&dir.join(&record.image))?;
    let mask = png::load_mask_png(&dir.join(&record.mask))?;
    let classes = record
        .classes
        .as_ref()
        .map(|name| png::load_classes_png(&dir.join(name)))
        .transpose()?;
    Ok((image, mask, classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::asset::procedural_asset_pool;
    use crate::synth::scene::{procedural_scene, ProceduralSceneConfig};

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            validation_images: 2,
            test_images: 3,
            objects_per_image: (1, 2),
            ..Default::default()
        }
    }

    fn scenes(n: usize) -> Vec<SceneBundle> {
        let config = ProceduralSceneConfig { height: 64, width: 96, ..Default::default() };
        (0..n).map(|i| procedural_scene(i as u64, &config)).collect()
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let scenes = scenes(3);
        let assets = procedural_asset_pool(42, 8);
        let config = small_config();

        let dir_a = tempfile::tempdir().unwrap();
        let m_a = generate_dataset(&scenes, &assets, &config, dir_a.path(), 7).unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let m_b = generate_dataset(&scenes, &assets, &config, dir_b.path(), 7).unwrap();

        assert_eq!(
            serde_json::to_string(&m_a).unwrap(),
            serde_json::to_string(&m_b).unwrap()
        );
        for rec in &m_a.images {
            let a = std::fs::read(dir_a.path().join(&rec.image)).unwrap();
            let b = std::fs::read(dir_b.path().join(&rec.image)).unwrap();
            assert_eq!(a, b, "image bytes differ for {}", rec.image);
            let am = std::fs::read(dir_a.path().join(&rec.mask)).unwrap();
            let bm = std::fs::read(dir_b.path().join(&rec.mask)).unwrap();
            assert_eq!(am, bm);
        }
    }

    #[test]
    fn manifest_counts_match_mask_recount() {
        let scenes = scenes(2);
        let assets = procedural_asset_pool(1, 6);
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            generate_dataset(&scenes, &assets, &small_config(), dir.path(), 3).unwrap();

        let mut ood = 0u64;
        let mut id = 0u64;
        for rec in &manifest.images {
            let (_, mask, _) = load_entry(dir.path(), rec).unwrap();
            ood += mask.count(LABEL_OOD);
            id += mask.count(LABEL_ID);
        }
        assert_eq!(manifest.ood_pixel_count, ood);
        assert_eq!(manifest.id_pixel_count, id);
        assert!(ood > 0, "dataset should contain OoD pixels");
    }

    #[test]
    fn splits_have_disjoint_assets() {
        let scenes = scenes(2);
        let assets = procedural_asset_pool(5, 9);
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            generate_dataset(&scenes, &assets, &small_config(), dir.path(), 11).unwrap();
        for id in &manifest.validation.asset_ids {
            assert!(!manifest.test.asset_ids.contains(id));
        }
        // Per-image records honor their split's pool.
        for rec in &manifest.images {
            let pool = if rec.split == "validation" {
                &manifest.validation.asset_ids
            } else {
                &manifest.test.asset_ids
            };
            for id in &rec.asset_ids {
                assert!(pool.contains(id), "asset {id} outside the {} pool", rec.split);
            }
        }
    }

    #[test]
    fn no_ood_on_ego_pixels() {
        let scene_list = scenes(4);
        let assets = procedural_asset_pool(9, 6);
        let config = GeneratorConfig {
            validation_images: 0,
            test_images: 6,
            objects_per_image: (2, 3),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&scene_list, &assets, &config, dir.path(), 23).unwrap();
        for rec in &manifest.images {
            let (_, mask, _) = load_entry(dir.path(), rec).unwrap();
            let ego = &scene_list[rec.scene_index].spec.ego_mask;
            for r in 0..mask.height {
                for c in 0..mask.width {
                    assert!(
                        !(mask.get(r, c) == LABEL_OOD && ego.get(r, c)),
                        "OoD pixel on the ego vehicle at ({r}, {c}) in {}",
                        rec.image
                    );
                }
            }
        }
        assert!(manifest.ood_pixel_count > 0);
    }

    #[test]
    fn every_ood_pixel_lies_in_a_footprint() {
        let scene_list = scenes(2);
        let assets = procedural_asset_pool(4, 6);
        let dir = tempfile::tempdir().unwrap();
        let manifest =
            generate_dataset(&scene_list, &assets, &small_config(), dir.path(), 17).unwrap();
        for rec in &manifest.images {
            let (_, mask, _) = load_entry(dir.path(), rec).unwrap();
            for r in 0..mask.height {
                for c in 0..mask.width {
                    if mask.get(r, c) == LABEL_OOD {
                        let inside = rec.placements.iter().any(|p| {
                            r >= p.y && r < p.y + p.height && c >= p.x && c < p.x + p.width
                        });
                        assert!(inside, "stray OoD pixel at ({r}, {c})");
                    }
                }
            }
        }
    }

    #[test]
    fn single_asset_with_both_splits_is_config_error() {
        let scenes = scenes(1);
        let assets = procedural_asset_pool(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let err = generate_dataset(&scenes, &assets, &small_config(), dir.path(), 1);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
