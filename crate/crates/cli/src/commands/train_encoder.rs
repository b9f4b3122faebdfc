use std::path::PathBuf;

use fishy_core::encoder::{pixel_accuracy, train_toy, ToyEncoder, ToyTrainConfig};
use fishy_core::seed;

use crate::config::PipelineConfig;
use crate::error::CliResult;
use crate::pipeline;

/// Trains the toy encoder on procedural scenes and writes it to the model
/// directory.
pub fn cmd_train_encoder(config: &PipelineConfig) -> CliResult<PathBuf> {
    let scenes = pipeline::training_scenes(config);
    let enc = ToyEncoder::with_widths(
        3,
        pipeline::encoder_class_count(config),
        &config.encoder.widths,
        config.encoder.dropout_rate,
        seed::derive_seed(config.seed, "encoder-init"),
    );
    let train_config = ToyTrainConfig {
        iterations: config.encoder.iterations,
        learning_rate: config.encoder.learning_rate,
        seed: seed::derive_seed(config.seed, "encoder-train"),
        ood_entropy_weight: config.encoder.ood_entropy_weight,
        void_as_class: config.encoder.void_as_class,
    };
    let (trained, losses) = train_toy(&enc, &scenes, &train_config)?;

    let path = config.encoder_path();
    std::fs::create_dir_all(config.models_dir()).map_err(fishy_core::Error::from)?;
    trained.save(&path)?;

    let acc = pixel_accuracy(&trained, &scenes[0])?;
    println!(
        "trained encoder ({} iterations, final loss {:.4}, train-scene accuracy {:.3}) -> {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        acc,
        path.display()
    );
    Ok(path)
}
