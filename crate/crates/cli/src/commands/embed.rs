use std::collections::BTreeSet;

use fishy_core::embedding::EmbeddingSet;
use fishy_core::knn::patch_class_association;

use crate::artifacts::{save_embedding_set, EmbeddingMeta};
use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::pipeline;

/// Extracts the reference embedding sets (with patch-level class
/// associations) for every layer any downstream method needs.
pub fn cmd_embed(config: &PipelineConfig) -> CliResult<Vec<EmbeddingMeta>> {
    let encoder = pipeline::load_encoder(config)?;
    let scenes = pipeline::reference_scenes(config);

    let mut layers: BTreeSet<String> = config.flow.layers.iter().cloned().collect();
    layers.insert(config.knn.density_layer.clone());
    layers.insert(config.knn.relative_layer.clone());

    let mut metas = Vec::new();
    for layer in layers {
        let stride = encoder.tap_stride(&layer)?;
        let dim = encoder.tap_dim(&layer)?;
        let mut vectors: Vec<f64> = Vec::new();
        let mut class_sets: Vec<Vec<u16>> = Vec::new();
        for bundle in &scenes {
            let classes = bundle
                .classes
                .as_ref()
                .expect("procedural scenes carry class rasters");
            let map = encoder.encode(&bundle.spec.background, &layer)?;
            let cells = patch_class_association(classes, stride);
            debug_assert_eq!(cells.len(), map.cells());
            for (i, cell_classes) in cells.into_iter().enumerate() {
                let v = &map.data()[i * dim..(i + 1) * dim];
                // The cosine kernel cannot use near-zero vectors.
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>();
                if norm.sqrt() < 1e-12 {
                    continue;
                }
                vectors.extend_from_slice(v);
                class_sets.push(cell_classes);
            }
        }
        let set = EmbeddingSet::new(dim, vectors, stride)?.with_class_sets(class_sets.clone())?;
        let meta = EmbeddingMeta {
            layer: layer.clone(),
            stride,
            dim,
            scene_count: scenes.len(),
            class_sets,
        };
        save_embedding_set(&config.embeddings_dir(), &layer, &set, &meta)?;
        println!(
            "embedded layer {layer}: {} vectors of dim {dim} (stride {stride})",
            set.len()
        );
        metas.push(meta);
    }
    Ok(metas)
}
