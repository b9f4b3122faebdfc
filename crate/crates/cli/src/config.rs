use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Whole-pipeline configuration, loaded from one TOML file. The master
/// seed is mandatory: nothing in the pipeline may seed from the clock.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub knn: KnnSection,
    #[serde(default)]
    pub score: ScoreSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSection {
    pub validation_images: usize,
    pub test_images: usize,
    pub scene_count: usize,
    pub height: usize,
    pub width: usize,
    pub asset_count: usize,
    pub objects_per_image: [usize; 2],
    pub scale_range: [f64; 2],
    pub lower_half_mass: f64,
    pub color_adapt_strength: f64,
    pub fog_beta_range: [f64; 2],
    pub fog_probability: f64,
    /// Optional directory of user-supplied background PNGs; procedural
    /// scenes are used when absent.
    pub background_dir: Option<PathBuf>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            validation_images: 30,
            test_images: 100,
            scene_count: 12,
            height: 96,
            width: 128,
            asset_count: 12,
            objects_per_image: [1, 3],
            scale_range: [0.5, 1.2],
            lower_half_mass: 0.75,
            color_adapt_strength: 0.5,
            fog_beta_range: [0.005, 0.02],
            fog_probability: 0.5,
            background_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub widths: Vec<usize>,
    pub dropout_rate: f64,
    pub train_scenes: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Train void as an additional output class (void classifier).
    pub void_as_class: bool,
    /// Weight of the OoD entropy-maximization term (max-entropy training).
    pub ood_entropy_weight: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            widths: vec![16, 32, 64],
            dropout_rate: 0.25,
            train_scenes: 16,
            iterations: 600,
            learning_rate: 3e-3,
            void_as_class: false,
            ood_entropy_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSection {
    /// Encoder taps to train flows on.
    pub layers: Vec<String>,
    pub steps: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub holdout_fraction: f64,
    pub holdout_cap: usize,
    /// 0 means the default conditioner width max(32, 2D).
    pub hidden_width: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            layers: vec!["s2".to_string(), "s3".to_string()],
            steps: 8,
            iterations: 3000,
            batch_size: 128,
            learning_rate: 1e-3,
            holdout_fraction: 0.1,
            holdout_cap: 2000,
            hidden_width: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnSection {
    pub k: usize,
    pub relative_k: usize,
    /// Number of reference scenes embedded into the kNN/flow reference set.
    pub reference_scenes: usize,
    /// Layer used for the class-free density.
    pub density_layer: String,
    /// Layer used for the relative class density.
    pub relative_layer: String,
}

impl Default for KnnSection {
    fn default() -> Self {
        KnnSection {
            k: 20,
            relative_k: 100,
            reference_scenes: 8,
            density_layer: "s3".to_string(),
            relative_layer: "s2".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSection {
    /// Input-preprocessing magnitude for the learned density (0 disables).
    pub epsilon: f64,
    pub mc_samples: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection { epsilon: 0.0, mc_samples: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    /// "exact" or "histogram".
    pub backend: String,
    pub bins: usize,
    pub range: [f64; 2],
    pub clamp: bool,
    pub tpr_target: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            backend: "exact".to_string(),
            bins: fishy_core::metrics::DEFAULT_BINS,
            range: [-100.0, 100.0],
            clamp: true,
            tpr_target: 0.95,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(fishy_core::Error::from)?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Other(fishy_core::Error::Config(format!("config: {e}"))))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let g = &self.generate;
        if g.height % 8 != 0 || g.width % 8 != 0 {
            return Err(CliError::Other(fishy_core::Error::Config(
                "scene dimensions must be multiples of 8 (the coarsest stride)".into(),
            )));
        }
        if g.objects_per_image[0] > g.objects_per_image[1] {
            return Err(CliError::Other(fishy_core::Error::Config(
                "objects_per_image range is inverted".into(),
            )));
        }
        if self.metrics.backend != "exact" && self.metrics.backend != "histogram" {
            return Err(CliError::Other(fishy_core::Error::Config(format!(
                "metric backend must be \"exact\" or \"histogram\", got {:?}",
                self.metrics.backend
            ))));
        }
        if let Some(dir) = &g.background_dir {
            if !dir.is_dir() {
                return Err(CliError::MissingInput(format!(
                    "background directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.workdir.join("dataset")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.workdir.join("models")
    }

    pub fn encoder_path(&self) -> PathBuf {
        self.models_dir().join("encoder.fbe")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.workdir.join("embeddings")
    }

    pub fn flow_path(&self, layer: &str) -> PathBuf {
        self.models_dir().join(format!("flow_{layer}.fbf"))
    }

    pub fn flow_meta_path(&self, layer: &str) -> PathBuf {
        self.models_dir().join(format!("flow_{layer}.meta.json"))
    }

    pub fn combiner_path(&self) -> PathBuf {
        self.models_dir().join("combiner.json")
    }

    pub fn scores_dir(&self, method: &str) -> PathBuf {
        self.workdir.join("scores").join(method)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.workdir.join("reports")
    }
}
