use std::path::PathBuf;

use fishy_core::aggregation::{fit_logistic_combiner, CombinerFitConfig, NormalizedNllMap};
use fishy_core::raster::{LabelMask, ScoreMap};
use fishy_core::resize::resize_score_map;
use fishy_core::synth::{load_entry, DatasetManifest};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline;

/// Fits the logistic layer combiner on the dataset's validation split
/// (the small labelled set that is allowed to contain OoD).
pub fn cmd_fit_combiner(config: &PipelineConfig) -> CliResult<PathBuf> {
    let dataset_dir = config.dataset_dir();
    let manifest_path = dataset_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CliError::MissingInput(format!(
            "dataset manifest {} not found; run `fishy generate` first",
            manifest_path.display()
        )));
    }
    let dataset = DatasetManifest::load(&manifest_path)?;
    let encoder = pipeline::load_encoder(config)?;
    let flows = config
        .flow
        .layers
        .iter()
        .map(|layer| {
            let (model, meta) = pipeline::load_flow(config, layer)?;
            Ok((layer.clone(), model, meta.train_mean_nll))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let val_records: Vec<_> = dataset
        .images
        .iter()
        .filter(|r| r.split == "validation")
        .collect();
    if val_records.is_empty() {
        return Err(CliError::MissingInput(
            "dataset has no validation split to fit the combiner on".into(),
        ));
    }

    // Stack every validation image vertically into one fit set: the layer
    // maps are resized to pixel resolution first so rows align with labels.
    let mut stacked_labels: Vec<u8> = Vec::new();
    let mut stacked_maps: Vec<Vec<f64>> = vec![Vec::new(); flows.len()];
    let mut width = 0usize;
    for rec in &val_records {
        let (image, mask, _) = load_entry(&dataset_dir, rec)?;
        let (h, w) = (mask.height, mask.width);
        width = w;
        stacked_labels.extend_from_slice(mask.labels());
        for (slot, (layer, flow, mean_nll)) in stacked_maps.iter_mut().zip(&flows) {
            let map = pipeline::layer_nll_map(&encoder, flow, *mean_nll, layer, &image)?;
            let resized = resize_score_map(&map.values, h, w);
            slot.extend_from_slice(resized.values());
        }
    }
    let total_h = stacked_labels.len() / width;
    let labels = LabelMask::new(total_h, width, stacked_labels)?;
    let maps: Vec<NormalizedNllMap> = stacked_maps
        .into_iter()
        .zip(&flows)
        .map(|(values, (layer, _, mean_nll))| {
            Ok(NormalizedNllMap {
                values: ScoreMap::new(total_h, width, values)?,
                layer_id: layer.clone(),
                train_mean_nll: *mean_nll,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let combiner = fit_logistic_combiner(&maps, &labels, &CombinerFitConfig::default())?;
    let path = config.combiner_path();
    std::fs::create_dir_all(config.models_dir()).map_err(fishy_core::Error::from)?;
    std::fs::write(&path, combiner.to_json()).map_err(fishy_core::Error::from)?;
    println!(
        "fit combiner on {} validation images ({} layers) -> {}",
        val_records.len(),
        combiner.weights.len(),
        path.display()
    );
    Ok(path)
}
