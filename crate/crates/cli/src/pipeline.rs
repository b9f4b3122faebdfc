//! Shared helpers for the pipeline stages: seeded scene streams (training,
//! reference, and evaluation scenes come from disjoint sub-streams of the
//! master seed) and artifact loading with the documented error codes.

use fishy_core::encoder::{LabelledScene, ToyEncoder};
use fishy_core::raster::{LabelMask, LABEL_ID};
use fishy_core::seed;
use fishy_core::synth::{
    procedural_scene, ProceduralSceneConfig, SceneBundle, PROCEDURAL_CLASS_COUNT,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

fn scene_config(config: &PipelineConfig) -> ProceduralSceneConfig {
    ProceduralSceneConfig {
        height: config.generate.height,
        width: config.generate.width,
        ..ProceduralSceneConfig::default()
    }
}

/// Scenes the encoder trains on.
pub fn training_scenes(config: &PipelineConfig) -> Vec<LabelledScene> {
    let sc = scene_config(config);
    (0..config.encoder.train_scenes)
        .map(|i| {
            let bundle = procedural_scene(
                seed::derive_indexed_seed(config.seed, "train-scene", i as u64),
                &sc,
            );
            bundle_to_scene(bundle)
        })
        .collect()
}

/// Scenes embedded into the kNN/flow reference set (in-distribution only).
pub fn reference_scenes(config: &PipelineConfig) -> Vec<SceneBundle> {
    let sc = scene_config(config);
    (0..config.knn.reference_scenes)
        .map(|i| {
            procedural_scene(
                seed::derive_indexed_seed(config.seed, "reference-scene", i as u64),
                &sc,
            )
        })
        .collect()
}

/// Held-out backgrounds for the generated evaluation dataset.
pub fn eval_scenes(config: &PipelineConfig) -> Vec<SceneBundle> {
    let sc = scene_config(config);
    (0..config.generate.scene_count)
        .map(|i| {
            procedural_scene(
                seed::derive_indexed_seed(config.seed, "eval-scene", i as u64),
                &sc,
            )
        })
        .collect()
}

pub fn bundle_to_scene(bundle: SceneBundle) -> LabelledScene {
    let classes = bundle
        .classes
        .expect("procedural scenes always carry class rasters");
    let (h, w) = (classes.height, classes.width);
    LabelledScene {
        image: bundle.spec.background,
        classes,
        ood_mask: LabelMask::filled(h, w, LABEL_ID),
    }
}

pub fn semantic_class_count() -> usize {
    PROCEDURAL_CLASS_COUNT
}

/// Output classes of the encoder; one extra when void is a trained class.
pub fn encoder_class_count(config: &PipelineConfig) -> usize {
    PROCEDURAL_CLASS_COUNT + usize::from(config.encoder.void_as_class)
}

pub fn load_encoder(config: &PipelineConfig) -> CliResult<ToyEncoder> {
    let path = config.encoder_path();
    if !path.exists() {
        return Err(CliError::MissingModel(format!(
            "encoder {} not found; run `fishy train-encoder` first",
            path.display()
        )));
    }
    Ok(ToyEncoder::load(&path)?)
}

pub fn load_flow(
    config: &PipelineConfig,
    layer: &str,
) -> CliResult<(fishy_core::flow::FlowModel, crate::artifacts::FlowMeta)> {
    let path = config.flow_path(layer);
    if !path.exists() {
        return Err(CliError::MissingModel(format!(
            "flow model {} not found; run `fishy train-flow` first",
            path.display()
        )));
    }
    let model = fishy_core::flow::FlowModel::load(&path)?;
    let meta = crate::artifacts::FlowMeta::load(&config.flow_meta_path(layer))?;
    Ok((model, meta))
}

/// Per-layer normalized NLL map (cell resolution) of one image.
pub fn layer_nll_map(
    encoder: &ToyEncoder,
    flow: &fishy_core::flow::FlowModel,
    train_mean_nll: f64,
    layer: &str,
    image: &fishy_core::numerics::Tensor,
) -> CliResult<fishy_core::aggregation::NormalizedNllMap> {
    let emb = encoder.encode(image, layer)?;
    let nll = flow.nll(&emb.to_matrix())?;
    let raw = fishy_core::raster::ScoreMap::new(emb.height, emb.width, nll)?;
    Ok(fishy_core::aggregation::normalize_nll(&raw, train_mean_nll, layer))
}
