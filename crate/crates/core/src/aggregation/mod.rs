//! Multi-layer score aggregation: per-layer NLL normalization by the
//! training-set mean, pixel-wise minimum across resized layers, and a
//! logistic-regression combiner fit on a labelled validation set.

mod preprocess;

pub use preprocess::{input_preprocess, EncoderFlowPipeline};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ScoreMap, LABEL_ID, LABEL_OOD};
use crate::resize::resize_score_map;

/// Per-layer NLL map shifted by the training-set mean NLL of that layer,
/// which puts layers with different dispersions on a comparable scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedNllMap {
    pub values: ScoreMap,
    pub layer_id: String,
    pub train_mean_nll: f64,
}

/// Elementwise `nll - train_mean_nll`.
pub fn normalize_nll(
    nll: &ScoreMap,
    train_mean_nll: f64,
    layer_id: impl Into<String>,
) -> NormalizedNllMap {
    let mut values = nll.clone();
    for v in values.values_mut() {
        *v -= train_mean_nll;
    }
    NormalizedNllMap { values, layer_id: layer_id.into(), train_mean_nll }
}

/// Resizes every map to `target` and takes the pixel-wise minimum: a pixel
/// stays anomalous only if its normalized NLL is high through all layers.
pub fn aggregate_min(maps: &[NormalizedNllMap], target: (usize, usize)) -> Result<ScoreMap> {
    if maps.is_empty() {
        return Err(Error::contract("aggregate_min needs at least one map"));
    }
    let (h, w) = target;
    let mut out = ScoreMap::constant(h, w, f64::INFINITY);
    for m in maps {
        let resized = resize_score_map(&m.values, h, w);
        for (o, &v) in out.values_mut().iter_mut().zip(resized.values()) {
            if v < *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// Weighted layer combination `sigmoid(sum_l w_l * map_l + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticCombiner {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub layer_ids: Vec<String>,
}

impl LogisticCombiner {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("combiner serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("combiner JSON: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct CombinerFitConfig {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for CombinerFitConfig {
    fn default() -> Self {
        CombinerFitConfig { learning_rate: 0.1, iterations: 500 }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Full-batch gradient descent on the mean cross-entropy of
/// `sigmoid(w . f + b)` against the OoD labels. Features are standardized
/// by their fit-set mean/std internally; the returned combiner folds the
/// standardization back in and applies to raw scores. Void pixels are
/// excluded; single-class inputs are a degenerate-fit error.
pub fn fit_logistic_combiner(
    maps: &[NormalizedNllMap],
    labels: &LabelMask,
    config: &CombinerFitConfig,
) -> Result<LogisticCombiner> {
    if maps.is_empty() {
        return Err(Error::contract("combiner fit needs at least one layer"));
    }
    let (h, w) = (labels.height, labels.width);
    let resized: Vec<ScoreMap> = maps
        .iter()
        .map(|m| resize_score_map(&m.values, h, w))
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for px in 0..h * w {
        let y = match labels.labels()[px] {
            LABEL_OOD => 1.0,
            LABEL_ID => 0.0,
            _ => continue,
        };
        rows.push(resized.iter().map(|m| m.values()[px]).collect());
        targets.push(y);
    }
    let n = rows.len();
    if n == 0 || targets.iter().all(|&y| y == 1.0) || targets.iter().all(|&y| y == 0.0) {
        return Err(Error::DegenerateFit(
            "combiner fit needs both OoD and in-distribution pixels".into(),
        ));
    }

    let n_layers = maps.len();
    let mut mean = vec![0.0; n_layers];
    for row in &rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut std = vec![0.0; n_layers];
    for row in &rows {
        for (s, (&v, &m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0; // constant feature: leave unscaled, weight stays near 0
        }
    }

    let mut weights = vec![0.0; n_layers];
    let mut bias = 0.0;
    for _ in 0..config.iterations {
        let mut gw = vec![0.0; n_layers];
        let mut gb = 0.0;
        for (row, &y) in rows.iter().zip(&targets) {
            let z: f64 = bias
                + row
                    .iter()
                    .zip(weights.iter().zip(mean.iter().zip(&std)))
                    .map(|(&v, (&wt, (&m, &s)))| wt * (v - m) / s)
                    .sum::<f64>();
            let err = sigmoid(z) - y;
            for (g, (&v, (&m, &s))) in gw.iter_mut().zip(row.iter().zip(mean.iter().zip(&std))) {
                *g += err * (v - m) / s;
            }
            gb += err;
        }
        for (wt, g) in weights.iter_mut().zip(&gw) {
            *wt -= config.learning_rate * g / n as f64;
        }
        bias -= config.learning_rate * gb / n as f64;
    }

    // Fold standardization into raw-score weights.
    let mut raw_weights = Vec::with_capacity(n_layers);
    let mut raw_bias = bias;
    for ((wt, &m), &s) in weights.iter().zip(&mean).zip(&std) {
        raw_weights.push(wt / s);
        raw_bias -= wt * m / s;
    }

    Ok(LogisticCombiner {
        weights: raw_weights,
        bias: raw_bias,
        layer_ids: maps.iter().map(|m| m.layer_id.clone()).collect(),
    })
}

/// Resizes each map to `target` and evaluates the combiner per pixel.
pub fn apply_logistic_combiner(
    combiner: &LogisticCombiner,
    maps: &[NormalizedNllMap],
    target: (usize, usize),
) -> Result<ScoreMap> {
    if maps.len() != combiner.weights.len() {
        return Err(Error::contract(format!(
            "combiner has {} weights but {} maps were supplied",
            combiner.weights.len(),
            maps.len()
        )));
    }
    let (h, w) = target;
    let resized: Vec<ScoreMap> = maps
        .iter()
        .map(|m| resize_score_map(&m.values, h, w))
        .collect();
    let mut out = ScoreMap::constant(h, w, 0.0);
    for px in 0..h * w {
        let z: f64 = combiner.bias
            + resized
                .iter()
                .zip(&combiner.weights)
                .map(|(m, &wt)| wt * m.values()[px])
                .sum::<f64>();
        out.values_mut()[px] = sigmoid(z);
    }
    Ok(out)
}
