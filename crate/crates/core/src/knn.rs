//! kNN embedding density scores over a reference set: class-free kernel
//! density and relative class density with patch-level class association.
//! Queries are exact brute-force cosine similarity; ties break by
//! ascending reference index so results are deterministic.

use rayon::prelude::*;

use crate::embedding::{EmbeddingMap, EmbeddingSet};
use crate::error::{Error, Result};
use crate::raster::{ClassRaster, ScoreMap, VOID_LABEL};
use crate::resize::resize_bilinear;

/// Orientation of the exponential cosine kernel.
///
/// The relative-density formula is printed with `exp(-cos_sim)`, which
/// *decreases* with similarity; a density should grow with it. Both
/// readings are available; `SimilarityIncreasing` (`exp(cos_sim)`) is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum KernelOrientation {
    AsPrinted,
    #[default]
    SimilarityIncreasing,
}

#[derive(Debug, Clone)]
pub struct KnnConfig {
    pub k: usize,
    pub kernel_orientation: KernelOrientation,
}

impl KnnConfig {
    pub fn new(k: usize) -> Self {
        KnnConfig { k, kernel_orientation: KernelOrientation::default() }
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig::new(20)
    }
}

/// Density mode for [`knn_score_map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMode {
    Density,
    Relative,
}

fn query_norm(q: &[f64]) -> Result<f64> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::contract("zero-norm query vector"));
    }
    Ok(norm)
}

/// The `k` reference vectors with highest cosine similarity to `q`,
/// brute-force, ties broken by ascending index.
pub fn knn_query(set: &EmbeddingSet, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if q.len() != set.dim() {
        return Err(Error::contract(format!(
            "query dim {} does not match set dim {}",
            q.len(),
            set.dim()
        )));
    }
    if k == 0 || k > set.len() {
        return Err(Error::contract(format!(
            "k = {k} out of range for a set of {}",
            set.len()
        )));
    }
    let qn = query_norm(q)?;

    // Max-heap over (similarity descending, index ascending) via a sorted
    // selection: collect all sims, partial-select the top k. N is desk
    // scale, so a full scan plus partial sort is fine.
    let mut sims: Vec<(usize, f64)> = (0..set.len())
        .map(|i| {
            let v = set.vector(i);
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            (i, dot / (qn * set.norm(i)))
        })
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    };
    if k < sims.len() {
        sims.select_nth_unstable_by(k - 1, cmp);
        sims.truncate(k);
    }
    sims.sort_by(cmp);
    Ok(sims)
}

fn kernel(sim: f64, orientation: KernelOrientation) -> f64 {
    match orientation {
        KernelOrientation::AsPrinted => (-sim).exp(),
        KernelOrientation::SimilarityIncreasing => sim.exp(),
    }
}

/// Class-free kernel density: sum of the kernel over the k nearest
/// neighbors.
pub fn knn_density(set: &EmbeddingSet, q: &[f64], cfg: &KnnConfig) -> Result<f64> {
    let neighbors = knn_query(set, q, cfg.k)?;
    Ok(neighbors
        .iter()
        .map(|&(_, sim)| kernel(sim, cfg.kernel_orientation))
        .sum())
}

/// Relative class density: kernel mass of neighbors whose class set
/// contains `predicted_class`, over the total kernel mass. Always in [0, 1].
pub fn knn_relative_class_density(
    set: &EmbeddingSet,
    q: &[f64],
    cfg: &KnnConfig,
    predicted_class: u16,
) -> Result<f64> {
    let class_sets = set
        .class_sets()
        .ok_or_else(|| Error::contract("relative density requires class associations"))?;
    let neighbors = knn_query(set, q, cfg.k)?;
    let mut matching = 0.0;
    let mut total = 0.0;
    for &(i, sim) in &neighbors {
        let w = kernel(sim, cfg.kernel_orientation);
        total += w;
        if class_sets[i].contains(&predicted_class) {
            matching += w;
        }
    }
    Ok((matching / total).clamp(0.0, 1.0))
}

/// For each `stride x stride` patch of the class raster, the set of
/// distinct class ids occurring in it, excluding the ignore label.
/// Partial patches at the right/bottom edges are allowed.
pub fn patch_class_association(labels: &ClassRaster, stride: usize) -> Vec<Vec<u16>> {
    assert!(stride > 0);
    let cells_h = labels.height.div_ceil(stride);
    let cells_w = labels.width.div_ceil(stride);
    let mut out = Vec::with_capacity(cells_h * cells_w);
    for cr in 0..cells_h {
        for cc in 0..cells_w {
            let r_end = ((cr + 1) * stride).min(labels.height);
            let c_end = ((cc + 1) * stride).min(labels.width);
            let mut classes: Vec<u16> = Vec::new();
            for r in cr * stride..r_end {
                for c in cc * stride..c_end {
                    let v = labels.get(r, c);
                    if v != VOID_LABEL && !classes.contains(&(v as u16)) {
                        classes.push(v as u16);
                    }
                }
            }
            classes.sort_unstable();
            out.push(classes);
        }
    }
    out
}

/// Scores every cell of a query embedding map against the reference set,
/// flips to the "higher = more anomalous" orientation, and bilinearly
/// upsamples to pixel resolution.
///
/// `predictions` supplies the per-cell predicted class for
/// [`KnnMode::Relative`].
pub fn knn_score_map(
    set: &EmbeddingSet,
    query_map: &EmbeddingMap,
    cfg: &KnnConfig,
    mode: KnnMode,
    predictions: Option<&[u16]>,
) -> Result<ScoreMap> {
    if query_map.dim != set.dim() {
        return Err(Error::contract(format!(
            "query map dim {} does not match set dim {}",
            query_map.dim,
            set.dim()
        )));
    }
    let cells = query_map.cells();
    if let (KnnMode::Relative, None) = (mode, predictions) {
        return Err(Error::contract(
            "relative mode needs a per-cell prediction raster",
        ));
    }
    if let Some(p) = predictions {
        if p.len() != cells {
            return Err(Error::contract("prediction raster size mismatch"));
        }
    }

    let cell_scores: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / query_map.width, i % query_map.width);
            let q = query_map.cell(r, c);
            match mode {
                KnnMode::Density => knn_density(set, q, cfg).map(|d| -d),
                KnnMode::Relative => {
                    let class = predictions.unwrap()[i];
                    knn_relative_class_density(set, q, cfg, class).map(|d| 1.0 - d)
                }
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let target_h = query_map.height * query_map.stride;
    let target_w = query_map.width * query_map.stride;
    let up = resize_bilinear(
        &cell_scores,
        query_map.height,
        query_map.width,
        target_h,
        target_w,
    );
    ScoreMap::new(target_h, target_w, up)
}
