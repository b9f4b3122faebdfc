//! On-disk artifact descriptors exchanged between pipeline stages: the
//! embedding reference set, trained flow metadata (including the Eq.-style
//! training-mean NLL used for normalization), scoring manifests, and
//! evaluation results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fishy_core::embedding::EmbeddingSet;
use fishy_core::error::Error;
use fishy_core::metrics::PrCurve;
use fishy_core::numerics::{Dtype, Tensor};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub layer: String,
    pub stride: usize,
    pub dim: usize,
    pub scene_count: usize,
    /// Per-vector class associations from the patch-level link.
    pub class_sets: Vec<Vec<u16>>,
}

pub fn save_embedding_set(
    dir: &Path,
    layer: &str,
    set: &EmbeddingSet,
    meta: &EmbeddingMeta,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    set.to_tensor()
        .save(&dir.join(format!("{layer}.fbt")), Dtype::F32)?;
    let json = serde_json::to_vec_pretty(meta).expect("meta serializes");
    std::fs::write(dir.join(format!("{layer}.meta.json")), json).map_err(Error::from)?;
    Ok(())
}

pub fn load_embedding_set(dir: &Path, layer: &str) -> CliResult<(EmbeddingSet, EmbeddingMeta)> {
    let tensor_path = dir.join(format!("{layer}.fbt"));
    let meta_path = dir.join(format!("{layer}.meta.json"));
    if !tensor_path.exists() || !meta_path.exists() {
        return Err(CliError::MissingModel(format!(
            "embeddings for layer {layer} not found under {}; run `fishy embed` first",
            dir.display()
        )));
    }
    let tensor = Tensor::load(&tensor_path)?;
    let meta: EmbeddingMeta = serde_json::from_slice(
        &std::fs::read(&meta_path).map_err(Error::from)?,
    )
    .map_err(|e| Error::Format(format!("embedding meta: {e}")))?;
    let set = EmbeddingSet::from_tensor(&tensor, meta.stride)?
        .with_class_sets(meta.class_sets.clone())?;
    Ok((set, meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowMeta {
    pub layer: String,
    pub dim: usize,
    /// Mean NLL of the reference embeddings under the trained flow; the
    /// per-layer normalizer for aggregation.
    pub train_mean_nll: f64,
    pub holdout_curve: Vec<(usize, f64)>,
}

impl FlowMeta {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_vec_pretty(self).expect("meta serializes");
        std::fs::write(path, json).map_err(Error::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::MissingModel(format!(
                "flow metadata {} not found; run `fishy train-flow` first",
                path.display()
            )));
        }
        serde_json::from_slice(&std::fs::read(path).map_err(Error::from)?)
            .map_err(|e| CliError::Other(Error::Format(format!("flow meta: {e}"))))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub image: String,
    pub mask: String,
    pub classes: Option<String>,
    pub score: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringManifest {
    pub method: String,
    pub dataset: PathBuf,
    pub params: serde_json::Value,
    pub seed: u64,
    pub entries: Vec<ScoreEntry>,
}

impl ScoringManifest {
    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        let path = dir.join("scoring_manifest.json");
        let tmp = dir.join("scoring_manifest.json.tmp");
        std::fs::write(&tmp, json).map_err(Error::from)?;
        std::fs::rename(&tmp, &path).map_err(Error::from)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join("scoring_manifest.json");
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "scoring manifest {} not found; run `fishy score` first",
                path.display()
            )));
        }
        serde_json::from_slice(&std::fs::read(&path).map_err(Error::from)?)
            .map_err(|e| CliError::Other(Error::Format(format!("scoring manifest: {e}"))))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    pub dataset: String,
    pub backend: String,
    pub ap: f64,
    pub fpr_at_tpr: f64,
    pub tpr_target: f64,
    pub max_j: f64,
    /// PAvPU at the max-J threshold, when correctness rasters exist.
    pub pavpu: Option<f64>,
    pub max_j_threshold: Option<f64>,
    pub miou: Option<f64>,
    pub positives: u64,
    pub negatives: u64,
    pub ignored: u64,
    pub pr_curve: PrCurve,
}

impl EvalResult {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_vec_pretty(self).expect("result serializes");
        std::fs::write(path, json).map_err(Error::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        serde_json::from_slice(&std::fs::read(path).map_err(Error::from)?)
            .map_err(|e| CliError::Other(Error::Format(format!("eval result: {e}"))))
    }
}
