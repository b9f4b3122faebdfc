use fishy_core::flow::{train_flow, FlowTrainConfig};
use fishy_core::seed;

use crate::artifacts::{load_embedding_set, FlowMeta};
use crate::config::PipelineConfig;
use crate::error::CliResult;

/// Trains one flow per configured layer on the reference embeddings and
/// records each layer's training-mean NLL (the aggregation normalizer).
pub fn cmd_train_flow(config: &PipelineConfig) -> CliResult<Vec<FlowMeta>> {
    std::fs::create_dir_all(config.models_dir()).map_err(fishy_core::Error::from)?;
    let mut metas = Vec::new();
    for layer in &config.flow.layers {
        let (set, _) = load_embedding_set(&config.embeddings_dir(), layer)?;
        let train_config = FlowTrainConfig {
            iterations: config.flow.iterations,
            batch_size: config.flow.batch_size,
            learning_rate: config.flow.learning_rate,
            seed: seed::derive_seed(config.seed, &format!("flow-{layer}")),
            holdout_fraction: config.flow.holdout_fraction,
            holdout_cap: config.flow.holdout_cap,
            n_steps: config.flow.steps,
            hidden_width: (config.flow.hidden_width > 0).then_some(config.flow.hidden_width),
            ..FlowTrainConfig::default()
        };
        let (model, curve) = train_flow(&set, &train_config)?;
        let train_mean_nll = model.mean_nll(&set)?;

        model.save(&config.flow_path(layer))?;
        let meta = FlowMeta {
            layer: layer.clone(),
            dim: model.dim(),
            train_mean_nll,
            holdout_curve: curve.iter().map(|p| (p.iteration, p.holdout_mean_nll)).collect(),
        };
        meta.save(&config.flow_meta_path(layer))?;
        println!(
            "trained flow for {layer}: holdout NLL {:.4} -> {:.4}, train mean NLL {train_mean_nll:.4}",
            curve.first().map(|p| p.holdout_mean_nll).unwrap_or(f64::NAN),
            curve.last().map(|p| p.holdout_mean_nll).unwrap_or(f64::NAN),
        );
        metas.push(meta);
    }
    Ok(metas)
}
