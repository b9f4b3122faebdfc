use fishy_core::seed;
use fishy_core::synth::{
    generate_dataset, png, procedural_asset_pool, BinaryRaster, DatasetManifest, GeneratorConfig,
    PlacementConfig, SceneBundle, SceneSpec,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline;

/// Builds the evaluation dataset on disk and returns its manifest.
pub fn cmd_generate(config: &PipelineConfig) -> CliResult<DatasetManifest> {
    let g = &config.generate;
    let scenes: Vec<SceneBundle> = match &g.background_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::MissingInput(format!(
                    "background directory {} does not exist",
                    dir.display()
                )));
            }
            let mut names: Vec<_> = std::fs::read_dir(dir)
                .map_err(fishy_core::Error::from)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(CliError::MissingInput(format!(
                    "no .png backgrounds under {}",
                    dir.display()
                )));
            }
            names
                .iter()
                .map(|path| -> CliResult<SceneBundle> {
                    let background = png::load_image_png(path)?;
                    let (h, w) = (background.shape()[0], background.shape()[1]);
                    // Arbitrary backgrounds: no ego vehicle, planar depth.
                    let mut depth = vec![150.0; h * w];
                    for r in 0..h {
                        let t = r as f64 / (h - 1).max(1) as f64;
                        let d = 150.0 + (5.0 - 150.0) * t;
                        for c in 0..w {
                            depth[r * w + c] = d;
                        }
                    }
                    Ok(SceneBundle {
                        spec: SceneSpec {
                            background,
                            ego_mask: BinaryRaster::filled(h, w, false),
                            depth_proxy: depth,
                            seed: 0,
                        },
                        classes: None,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        None => pipeline::eval_scenes(config),
    };

    let assets = procedural_asset_pool(
        seed::derive_seed(config.seed, "assets"),
        g.asset_count,
    );
    let gen_config = GeneratorConfig {
        validation_images: g.validation_images,
        test_images: g.test_images,
        objects_per_image: (g.objects_per_image[0], g.objects_per_image[1]),
        placement: PlacementConfig {
            scale_range: (g.scale_range[0], g.scale_range[1]),
            biased_half_mass: g.lower_half_mass,
            ..PlacementConfig::default()
        },
        color_adapt_strength: g.color_adapt_strength,
        fog_beta_range: (g.fog_beta_range[0], g.fog_beta_range[1]),
        fog_probability: g.fog_probability,
        ..GeneratorConfig::default()
    };

    let out_dir = config.dataset_dir();
    let manifest = generate_dataset(
        &scenes,
        &assets,
        &gen_config,
        &out_dir,
        seed::derive_seed(config.seed, "generate"),
    )?;
    println!(
        "generated {} images under {}: {} OoD / {} ID / {} void pixels (prevalence {:.4})",
        manifest.images.len(),
        out_dir.display(),
        manifest.ood_pixel_count,
        manifest.id_pixel_count,
        manifest.void_pixel_count,
        manifest.prevalence()
    );
    Ok(manifest)
}
