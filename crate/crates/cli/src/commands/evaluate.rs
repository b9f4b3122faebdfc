use std::path::Path;

use rayon::prelude::*;

use fishy_core::metrics::{
    average_precision, fpr_at_tpr, max_youden_j_with_threshold, miou, pavpu, pr_curve,
    BinaryEvalAccumulator, ConfusionMatrix, CorrectnessRaster,
};
use fishy_core::numerics::Tensor;
use fishy_core::raster::{ScoreMap, VOID_LABEL};
use fishy_core::synth::png;

use crate::artifacts::{EvalResult, ScoringManifest};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline;

fn make_accumulator(config: &PipelineConfig) -> CliResult<BinaryEvalAccumulator> {
    Ok(match config.metrics.backend.as_str() {
        "exact" => BinaryEvalAccumulator::exact(),
        _ => BinaryEvalAccumulator::histogram(
            config.metrics.bins,
            config.metrics.range[0],
            config.metrics.range[1],
            config.metrics.clamp,
        )?,
    })
}

/// Evaluates one scoring run against its dataset: AP, FPR at the TPR
/// target, max Youden's J, and (when the encoder and class rasters are
/// available) PAvPU at the J-optimal threshold plus mIoU.
pub fn cmd_evaluate(config: &PipelineConfig, scores_dir: &Path) -> CliResult<EvalResult> {
    let manifest = ScoringManifest::load(scores_dir)?;
    let dataset_dir = &manifest.dataset;

    // Per-image accumulators merged at the end (the monoid structure makes
    // the merge order irrelevant).
    let per_image: Vec<(BinaryEvalAccumulator, ScoreMap, fishy_core::raster::LabelMask)> =
        manifest
            .entries
            .par_iter()
            .map(|entry| -> CliResult<_> {
                let scores = ScoreMap::from_tensor(&Tensor::load(
                    &scores_dir.join(&entry.score),
                )?)?;
                let mask = png::load_mask_png(&dataset_dir.join(&entry.mask))?;
                if scores.height != mask.height || scores.width != mask.width {
                    return Err(CliError::ShapeMismatch(format!(
                        "score map {}x{} vs mask {}x{} for {}",
                        scores.height, scores.width, mask.height, mask.width, entry.image
                    )));
                }
                let mut acc = make_accumulator(config)?;
                acc.accumulate(&scores, &mask)?;
                Ok((acc, scores, mask))
            })
            .collect::<CliResult<Vec<_>>>()?;

    let mut acc = make_accumulator(config)?;
    for (part, _, _) in &per_image {
        acc.merge(part)?;
    }

    let ap = average_precision(&acc)?;
    let fpr = fpr_at_tpr(&acc, config.metrics.tpr_target)?;
    let (max_j, threshold) = max_youden_j_with_threshold(&acc)?;
    let curve = pr_curve(&acc)?;

    // Segmentation-dependent metrics need the encoder and class rasters.
    let mut pavpu_value = None;
    let mut miou_value = None;
    if config.encoder_path().exists() && manifest.entries.iter().all(|e| e.classes.is_some()) {
        let encoder = pipeline::load_encoder(config)?;
        let mut hits = 0u64;
        let mut total = 0u64;
        let mut cm = ConfusionMatrix::new(encoder.classes);
        for (entry, (_, scores, _)) in manifest.entries.iter().zip(&per_image) {
            let classes =
                png::load_classes_png(&dataset_dir.join(entry.classes.as_ref().unwrap()))?;
            let image = png::load_image_png(&dataset_dir.join(&entry.image))?;
            let probs = encoder.predict_probs(&image)?;
            let argmax = probs.argmax();
            let stride = 1 << encoder.n_stages();
            let (h, w) = (classes.height, classes.width);
            let mut correctness = vec![VOID_LABEL; h * w];
            for r in 0..h {
                for c in 0..w {
                    let truth = classes.get(r, c);
                    if truth == VOID_LABEL {
                        continue;
                    }
                    let cell = (r / stride).min(probs.height - 1) * probs.width
                        + (c / stride).min(probs.width - 1);
                    let predicted = argmax[cell] as u8;
                    cm.record(predicted, truth);
                    correctness[r * w + c] = u8::from(predicted == truth);
                }
            }
            let correctness = CorrectnessRaster::new(h, w, correctness)?;
            // Accumulate the PAvPU ratio across images by expanding it back
            // into counts.
            let n_eval = correctness
                .values
                .iter()
                .filter(|&&v| v != VOID_LABEL)
                .count() as u64;
            if n_eval > 0 {
                let p = pavpu(scores, &correctness, threshold)?;
                hits += (p * n_eval as f64).round() as u64;
                total += n_eval;
            }
        }
        if total > 0 {
            pavpu_value = Some(hits as f64 / total as f64);
        }
        miou_value = miou(&cm).ok();
    }

    let result = EvalResult {
        method: manifest.method.clone(),
        dataset: dataset_dir.display().to_string(),
        backend: config.metrics.backend.clone(),
        ap,
        fpr_at_tpr: fpr,
        tpr_target: config.metrics.tpr_target,
        max_j,
        pavpu: pavpu_value,
        max_j_threshold: Some(threshold),
        miou: miou_value,
        positives: acc.positive_count(),
        negatives: acc.negative_count(),
        ignored: acc.ignored_count(),
        pr_curve: curve,
    };

    std::fs::create_dir_all(config.reports_dir()).map_err(fishy_core::Error::from)?;
    result.save(&config.reports_dir().join(format!("{}.eval.json", manifest.method)))?;

    println!(
        "{}: AP {:.4}  FPR@{:.0}%TPR {:.4}  maxJ {:.4}{}",
        manifest.method,
        ap,
        config.metrics.tpr_target * 100.0,
        fpr,
        max_j,
        match pavpu_value {
            Some(p) => format!("  PAvPU@t* {p:.4}"),
            None => String::new(),
        },
    );
    Ok(result)
}
