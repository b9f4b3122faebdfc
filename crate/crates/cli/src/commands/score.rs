use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use fishy_core::aggregation::{
    aggregate_min, apply_logistic_combiner, input_preprocess, EncoderFlowPipeline,
    LogisticCombiner, NormalizedNllMap,
};
use fishy_core::encoder::ToyEncoder;
use fishy_core::flow::FlowModel;
use fishy_core::knn::{knn_score_map, KnnConfig, KnnMode};
use fishy_core::numerics::{Dtype, Tensor};
use fishy_core::raster::ScoreMap;
use fishy_core::resize::resize_score_map;
use fishy_core::scores::{
    dirichlet_differential_entropy, entropy_score, max_prob_score, mutual_information,
    predictive_entropy, softmax, void_class_score, DirichletMap,
};
use fishy_core::seed;
use fishy_core::synth::{load_entry, DatasetManifest};

use crate::artifacts::{load_embedding_set, ScoreEntry, ScoringManifest};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline;

/// Every scoring method the CLI can dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Random,
    SoftmaxMaxProb,
    SoftmaxEntropy,
    VoidClass,
    PredictiveEntropy,
    MutualInformation,
    DirichletEntropy,
    KnnDensity,
    KnnRelative,
    LearnedDensity,
    LearnedDensityMin,
    LearnedDensityLogistic,
}

impl Method {
    pub fn parse(name: &str) -> CliResult<Self> {
        Ok(match name {
            "random" => Method::Random,
            "softmax_maxprob" => Method::SoftmaxMaxProb,
            "softmax_entropy" => Method::SoftmaxEntropy,
            "void_class" => Method::VoidClass,
            "predictive_entropy" => Method::PredictiveEntropy,
            "mutual_information" => Method::MutualInformation,
            "dirichlet_entropy" => Method::DirichletEntropy,
            "knn_density" => Method::KnnDensity,
            "knn_relative" => Method::KnnRelative,
            "learned_density" => Method::LearnedDensity,
            "learned_density_min" => Method::LearnedDensityMin,
            "learned_density_logistic" => Method::LearnedDensityLogistic,
            other => return Err(CliError::UnknownMethod(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::SoftmaxMaxProb => "softmax_maxprob",
            Method::SoftmaxEntropy => "softmax_entropy",
            Method::VoidClass => "void_class",
            Method::PredictiveEntropy => "predictive_entropy",
            Method::MutualInformation => "mutual_information",
            Method::DirichletEntropy => "dirichlet_entropy",
            Method::KnnDensity => "knn_density",
            Method::KnnRelative => "knn_relative",
            Method::LearnedDensity => "learned_density",
            Method::LearnedDensityMin => "learned_density_min",
            Method::LearnedDensityLogistic => "learned_density_logistic",
        }
    }

    pub fn all() -> &'static [&'static str] {
        &[
            "random",
            "softmax_maxprob",
            "softmax_entropy",
            "void_class",
            "predictive_entropy",
            "mutual_information",
            "dirichlet_entropy",
            "knn_density",
            "knn_relative",
            "learned_density",
            "learned_density_min",
            "learned_density_logistic",
        ]
    }
}

/// Everything a scorer might need, preloaded once.
struct ScoringContext {
    method: Method,
    encoder: Option<ToyEncoder>,
    flows: Vec<(String, FlowModel, f64)>,
    embeddings: Option<(fishy_core::embedding::EmbeddingSet, String)>,
    combiner: Option<LogisticCombiner>,
    epsilon: f64,
    mc_samples: usize,
    knn: KnnConfig,
    master_seed: u64,
}

impl ScoringContext {
    fn build(config: &PipelineConfig, method: Method) -> CliResult<Self> {
        let needs_encoder = method != Method::Random;
        let encoder = if needs_encoder {
            Some(pipeline::load_encoder(config)?)
        } else {
            None
        };

        let flows = match method {
            Method::LearnedDensity => {
                let layer = config.flow.layers.first().ok_or_else(|| {
                    CliError::MissingModel("no flow layers configured".into())
                })?;
                let (model, meta) = pipeline::load_flow(config, layer)?;
                vec![(layer.clone(), model, meta.train_mean_nll)]
            }
            Method::LearnedDensityMin | Method::LearnedDensityLogistic => {
                if config.flow.layers.len() < 2 && method == Method::LearnedDensityMin {
                    return Err(CliError::MissingModel(
                        "minimum aggregation needs at least two flow layers".into(),
                    ));
                }
                config
                    .flow
                    .layers
                    .iter()
                    .map(|layer| {
                        let (model, meta) = pipeline::load_flow(config, layer)?;
                        Ok((layer.clone(), model, meta.train_mean_nll))
                    })
                    .collect::<CliResult<Vec<_>>>()?
            }
            _ => Vec::new(),
        };

        let embeddings = match method {
            Method::KnnDensity => {
                let layer = config.knn.density_layer.clone();
                let (set, _) = load_embedding_set(&config.embeddings_dir(), &layer)?;
                Some((set, layer))
            }
            Method::KnnRelative => {
                let layer = config.knn.relative_layer.clone();
                let (set, _) = load_embedding_set(&config.embeddings_dir(), &layer)?;
                Some((set, layer))
            }
            _ => None,
        };

        let combiner = if method == Method::LearnedDensityLogistic {
            let path = config.combiner_path();
            if !path.exists() {
                return Err(CliError::MissingModel(format!(
                    "combiner {} not found; run `fishy fit-combiner` first",
                    path.display()
                )));
            }
            Some(LogisticCombiner::from_json(
                &std::fs::read_to_string(&path).map_err(fishy_core::Error::from)?,
            )?)
        } else {
            None
        };

        if method == Method::VoidClass {
            let enc = encoder.as_ref().expect("void_class needs the encoder");
            if enc.classes <= pipeline::semantic_class_count() {
                return Err(CliError::MissingModel(
                    "void_class needs an encoder trained with void_as_class = true".into(),
                ));
            }
        }

        let k = match method {
            Method::KnnRelative => config.knn.relative_k,
            _ => config.knn.k,
        };
        Ok(ScoringContext {
            method,
            encoder,
            flows,
            embeddings,
            combiner,
            epsilon: config.score.epsilon,
            mc_samples: config.score.mc_samples,
            knn: KnnConfig::new(k),
            master_seed: config.seed,
        })
    }

    fn params_json(&self) -> serde_json::Value {
        match self.method {
            Method::KnnDensity | Method::KnnRelative => json!({
                "k": self.knn.k,
                "layer": self.embeddings.as_ref().map(|(_, l)| l.clone()),
            }),
            Method::LearnedDensity => json!({
                "layers": self.flows.iter().map(|(l, _, _)| l.clone()).collect::<Vec<_>>(),
                "epsilon": self.epsilon,
            }),
            Method::LearnedDensityMin | Method::LearnedDensityLogistic => json!({
                "layers": self.flows.iter().map(|(l, _, _)| l.clone()).collect::<Vec<_>>(),
            }),
            Method::PredictiveEntropy | Method::MutualInformation => json!({
                "mc_samples": self.mc_samples,
            }),
            _ => json!({}),
        }
    }

    /// Scores one image at pixel resolution.
    fn score_image(&self, image: &Tensor, index: u64) -> CliResult<ScoreMap> {
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let map = match self.method {
            Method::Random => {
                let mut rng = seed::rng_for_indexed(self.master_seed, "random-score", index);
                use rand::Rng;
                let values = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
                ScoreMap::new(h, w, values)?
            }
            Method::SoftmaxMaxProb | Method::SoftmaxEntropy | Method::DirichletEntropy
            | Method::VoidClass => {
                let enc = self.encoder.as_ref().unwrap();
                let logits = enc.predict(image)?;
                let coarse = match self.method {
                    Method::SoftmaxMaxProb => max_prob_score(&softmax(&logits)?),
                    Method::SoftmaxEntropy => entropy_score(&softmax(&logits)?),
                    Method::DirichletEntropy => {
                        dirichlet_differential_entropy(&DirichletMap::from_logits(&logits)?)
                    }
                    Method::VoidClass => {
                        let probs = softmax(&logits)?;
                        void_class_score(&probs, probs.classes - 1)?
                    }
                    _ => unreachable!(),
                };
                resize_score_map(&coarse, h, w)
            }
            Method::PredictiveEntropy | Method::MutualInformation => {
                let enc = self.encoder.as_ref().unwrap();
                let stack = enc.mc_samples(
                    image,
                    self.mc_samples,
                    seed::derive_indexed_seed(self.master_seed, "mc-score", index),
                )?;
                let coarse = match self.method {
                    Method::PredictiveEntropy => predictive_entropy(&stack),
                    _ => mutual_information(&stack),
                };
                resize_score_map(&coarse, h, w)
            }
            Method::KnnDensity | Method::KnnRelative => {
                let enc = self.encoder.as_ref().unwrap();
                let (set, layer) = self.embeddings.as_ref().unwrap();
                let query = enc.encode(image, layer)?;
                let scored = match self.method {
                    Method::KnnDensity => {
                        knn_score_map(set, &query, &self.knn, KnnMode::Density, None)?
                    }
                    _ => {
                        // Predicted class per query cell, read off the
                        // coarse argmax at each cell's center pixel.
                        let probs = enc.predict_probs(image)?;
                        let argmax = probs.argmax();
                        let head_stride = 1 << enc.n_stages();
                        let predictions: Vec<u16> = (0..query.cells())
                            .map(|i| {
                                let (r, c) = (i / query.width, i % query.width);
                                let pr = (r * query.stride + query.stride / 2)
                                    .min(h - 1)
                                    / head_stride;
                                let pc = (c * query.stride + query.stride / 2)
                                    .min(w - 1)
                                    / head_stride;
                                argmax[pr.min(probs.height - 1) * probs.width
                                    + pc.min(probs.width - 1)]
                            })
                            .collect();
                        knn_score_map(
                            set,
                            &query,
                            &self.knn,
                            KnnMode::Relative,
                            Some(&predictions),
                        )?
                    }
                };
                resize_score_map(&scored, h, w)
            }
            Method::LearnedDensity => {
                let enc = self.encoder.as_ref().unwrap();
                let (layer, flow, mean_nll) = &self.flows[0];
                let scored_image = if self.epsilon > 0.0 {
                    let pipeline = EncoderFlowPipeline::new(enc, flow, layer.clone());
                    input_preprocess(image, &pipeline, self.epsilon)?
                } else {
                    image.clone()
                };
                let map = pipeline::layer_nll_map(enc, flow, *mean_nll, layer, &scored_image)?;
                resize_score_map(&map.values, h, w)
            }
            Method::LearnedDensityMin => {
                let maps = self.normalized_maps(image)?;
                aggregate_min(&maps, (h, w))?
            }
            Method::LearnedDensityLogistic => {
                let maps = self.normalized_maps(image)?;
                apply_logistic_combiner(self.combiner.as_ref().unwrap(), &maps, (h, w))?
            }
        };
        Ok(map)
    }

    fn normalized_maps(&self, image: &Tensor) -> CliResult<Vec<NormalizedNllMap>> {
        let enc = self.encoder.as_ref().unwrap();
        self.flows
            .iter()
            .map(|(layer, flow, mean_nll)| {
                pipeline::layer_nll_map(enc, flow, *mean_nll, layer, image)
            })
            .collect()
    }
}

/// Scores every image of the dataset with the named method, writing one
/// FBT1 score file per image plus a manifest recording the parameters.
pub fn cmd_score(
    config: &PipelineConfig,
    method_name: &str,
    dataset_dir: &Path,
) -> CliResult<ScoringManifest> {
    let method = Method::parse(method_name)?;
    let manifest_path = dataset_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(CliError::MissingInput(format!(
            "dataset manifest {} not found; run `fishy generate` first",
            manifest_path.display()
        )));
    }
    let dataset = DatasetManifest::load(&manifest_path)?;
    let ctx = ScoringContext::build(config, method)?;

    let out_dir = config.scores_dir(method.name());
    std::fs::create_dir_all(&out_dir).map_err(fishy_core::Error::from)?;

    let entries: Vec<ScoreEntry> = dataset
        .images
        .par_iter()
        .enumerate()
        .map(|(i, rec)| -> CliResult<ScoreEntry> {
            let (image, _, _) = load_entry(dataset_dir, rec)?;
            let scores = ctx.score_image(&image, i as u64)?;
            let score_name = format!("{}.score.fbt", rec.image.trim_end_matches(".png"));
            scores
                .to_tensor()
                .save(&out_dir.join(&score_name), Dtype::F64)?;
            Ok(ScoreEntry {
                image: rec.image.clone(),
                mask: rec.mask.clone(),
                classes: rec.classes.clone(),
                score: score_name,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let manifest = ScoringManifest {
        method: method.name().to_string(),
        dataset: dataset_dir.to_path_buf(),
        params: ctx.params_json(),
        seed: config.seed,
        entries,
    };
    manifest.save(&out_dir)?;
    println!(
        "scored {} images with {} -> {}",
        manifest.entries.len(),
        method.name(),
        out_dir.display()
    );
    Ok(manifest)
}
