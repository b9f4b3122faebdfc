//! Baseline per-pixel uncertainty scores from categorical outputs: the
//! softmax family, MC-dropout sample statistics (predictive entropy and
//! mutual information), Dirichlet differential entropy with its training
//! loss, and the void-class score. All entropies use the natural log and
//! every score map is oriented "higher = more anomalous".

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::raster::{ClassRaster, LabelMask, ScoreMap, LABEL_ID, VOID_LABEL};

/// Per-pixel categorical distribution over C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    probs: Vec<f64>,
}

impl CategoricalMap {
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width * classes {
            return Err(Error::contract("categorical map size mismatch"));
        }
        for px in 0..height * width {
            let row = &probs[px * classes..(px + 1) * classes];
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::contract("probabilities must be finite and nonnegative"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::contract(format!(
                    "pixel {px} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(CategoricalMap { height, width, classes, probs })
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.classes;
        &self.probs[i..i + self.classes]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Per-pixel argmax class.
    pub fn argmax(&self) -> Vec<u16> {
        self.pixels()
            .map(|p| {
                let mut best = 0;
                for (c, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect()
    }
}

/// T stochastic forward passes, each a valid categorical map.
#[derive(Debug, Clone)]
pub struct McSampleStack {
    samples: Vec<CategoricalMap>,
}

impl McSampleStack {
    pub fn new(samples: Vec<CategoricalMap>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("MC stack needs at least one sample"));
        }
        let (h, w, c) = (samples[0].height, samples[0].width, samples[0].classes);
        if samples.iter().any(|s| (s.height, s.width, s.classes) != (h, w, c)) {
            return Err(Error::contract("MC samples disagree on shape"));
        }
        Ok(McSampleStack { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[CategoricalMap] {
        &self.samples
    }

    /// Pixel-wise mean categorical across samples.
    pub fn mean(&self) -> CategoricalMap {
        let (h, w, c) = (
            self.samples[0].height,
            self.samples[0].width,
            self.samples[0].classes,
        );
        let t = self.samples.len() as f64;
        let mut probs = vec![0.0; h * w * c];
        for s in &self.samples {
            for (acc, &p) in probs.iter_mut().zip(s.probs()) {
                *acc += p;
            }
        }
        for p in &mut probs {
            *p /= t;
        }
        CategoricalMap::new(h, w, c, probs).expect("mean of valid maps is valid")
    }
}

/// Per-pixel Dirichlet concentration parameters, all positive.
#[derive(Debug, Clone)]
pub struct DirichletMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    alpha: Vec<f64>,
}

impl DirichletMap {
    pub fn new(height: usize, width: usize, classes: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != height * width * classes {
            return Err(Error::contract("dirichlet map size mismatch"));
        }
        if alpha.iter().any(|&a| a <= 0.0 || !a.is_finite()) {
            return Err(Error::contract("dirichlet concentrations must be positive"));
        }
        Ok(DirichletMap { height, width, classes, alpha })
    }

    /// Interprets logits as log-concentrations: `alpha = exp(logits)`.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 3 {
            return Err(Error::contract("expected [H, W, C] logits"));
        }
        let alpha: Vec<f64> = logits.data().iter().map(|&z| z.exp()).collect();
        DirichletMap::new(shape[0], shape[1], shape[2], alpha)
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.classes..(i + 1) * self.classes]
    }
}

/// Numerically stable (max-subtracted) softmax over the class axis of an
/// `[H, W, C]` logit tensor.
pub fn softmax(logits: &Tensor) -> Result<CategoricalMap> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(Error::contract(format!(
            "expected [H, W, C] logits, got {:?}",
            shape
        )));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut probs = vec![0.0; h * w * c];
    for (px, row) in logits.data().chunks_exact(c).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[px * c..(px + 1) * c];
        let mut sum = 0.0;
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    CategoricalMap::new(h, w, c, probs)
}

/// `1 - max_c p_c`, so that higher means more uncertain.
pub fn max_prob_score(p: &CategoricalMap) -> ScoreMap {
    let values = p
        .pixels()
        .map(|px| 1.0 - px.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ScoreMap::new(p.height, p.width, values).expect("shape preserved")
}

fn entropy(px: &[f64]) -> f64 {
    px.iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// Shannon entropy of each pixel's categorical distribution.
pub fn entropy_score(p: &CategoricalMap) -> ScoreMap {
    let values = p.pixels().map(entropy).collect();
    ScoreMap::new(p.height, p.width, values).expect("shape preserved")
}

/// Entropy of the per-pixel mean categorical over the MC samples.
pub fn predictive_entropy(stack: &McSampleStack) -> ScoreMap {
    entropy_score(&stack.mean())
}

/// Predictive entropy minus the mean per-sample entropy, clipped at 0.
pub fn mutual_information(stack: &McSampleStack) -> ScoreMap {
    let mean = stack.mean();
    let t = stack.len() as f64;
    let n_px = mean.height * mean.width;
    let mut mean_sample_entropy = vec![0.0; n_px];
    for s in stack.samples() {
        for (acc, px) in mean_sample_entropy.iter_mut().zip(s.pixels()) {
            *acc += entropy(px);
        }
    }
    let values = mean
        .pixels()
        .zip(&mean_sample_entropy)
        .map(|(px, &se)| (entropy(px) - se / t).max(0.0))
        .collect();
    ScoreMap::new(mean.height, mean.width, values).expect("shape preserved")
}

/// Differential entropy of each pixel's Dirichlet:
/// `ln B(a) + (a0 - C) psi(a0) - sum_c (a_c - 1) psi(a_c)`.
pub fn dirichlet_differential_entropy(d: &DirichletMap) -> ScoreMap {
    let c = d.classes as f64;
    let values = (0..d.height * d.width)
        .map(|i| {
            let alpha = d.pixel(i);
            let a0: f64 = alpha.iter().sum();
            let ln_b: f64 = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(a0);
            let tail: f64 = alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum();
            ln_b + (a0 - c) * digamma(a0) - tail
        })
        .collect();
    ScoreMap::new(d.height, d.width, values).expect("shape preserved")
}

/// Closed-form KL divergence between two Dirichlet distributions.
pub fn dirichlet_kl(alpha_p: &[f64], alpha_q: &[f64]) -> Result<f64> {
    if alpha_p.len() != alpha_q.len() || alpha_p.is_empty() {
        return Err(Error::contract("dirichlet parameters must have equal length"));
    }
    if alpha_p.iter().chain(alpha_q).any(|&a| a <= 0.0 || !a.is_finite()) {
        return Err(Error::contract("dirichlet parameters must be positive"));
    }
    let p0: f64 = alpha_p.iter().sum();
    let q0: f64 = alpha_q.iter().sum();
    let mut kl = ln_gamma(p0) - ln_gamma(q0);
    for (&p, &q) in alpha_p.iter().zip(alpha_q) {
        kl += ln_gamma(q) - ln_gamma(p) + (p - q) * (digamma(p) - digamma(p0));
    }
    Ok(kl)
}

/// Probability of the designated void class as the OoD score.
pub fn void_class_score(p: &CategoricalMap, void_index: usize) -> Result<ScoreMap> {
    if void_index >= p.classes {
        return Err(Error::contract(format!(
            "void index {void_index} out of range for {} classes",
            p.classes
        )));
    }
    let values = p.pixels().map(|px| px[void_index]).collect();
    ScoreMap::new(p.height, p.width, values)
}

/// Dirichlet prior-network training loss over an `[H, W, C]` logit map.
///
/// Logits are read as log-concentrations `alpha = exp(z)`. In-distribution
/// pixels are pushed toward the sharp prior `alpha0 * smoothed one-hot`,
/// OoD/void pixels toward the flat prior `alpha = 1`; the two KL terms are
/// weighted by `term_weights` and averaged over their own populations, plus
/// a cross-entropy term between the smoothed targets and the softmax of the
/// logits over in-distribution pixels.
pub fn prior_network_loss(
    logits: &Tensor,
    labels: &ClassRaster,
    ood_mask: &LabelMask,
    alpha0: f64,
    label_eps: f64,
    term_weights: (f64, f64),
) -> Result<f64> {
    let shape = logits.shape();
    if shape.len() != 3 {
        return Err(Error::contract("expected [H, W, C] logits"));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if labels.height != h || labels.width != w || ood_mask.height != h || ood_mask.width != w {
        return Err(Error::contract("label/mask shape mismatch with logits"));
    }
    if alpha0 <= 0.0 {
        return Err(Error::contract("alpha0 must be positive"));
    }
    if !(label_eps > 0.0 && label_eps < 1.0) {
        return Err(Error::contract("label_eps must lie in (0, 1)"));
    }

    let flat_prior = vec![1.0; c];
    let mut kl_in = 0.0;
    let mut n_in = 0usize;
    let mut kl_out = 0.0;
    let mut n_out = 0usize;
    let mut ce = 0.0;

    for px in 0..h * w {
        let (r, col) = (px / w, px % w);
        let z = &logits.data()[px * c..(px + 1) * c];
        let alpha: Vec<f64> = z.iter().map(|&v| v.exp()).collect();
        let class = labels.get(r, col);
        let is_out = ood_mask.get(r, col) != LABEL_ID || class == VOID_LABEL;

        if is_out {
            kl_out += dirichlet_kl(&flat_prior, &alpha)?;
            n_out += 1;
        } else {
            let target: Vec<f64> = (0..c)
                .map(|k| {
                    let one_hot = if k == class as usize { 1.0 } else { 0.0 };
                    (1.0 - label_eps) * one_hot + label_eps / c as f64
                })
                .collect();
            let alpha_in: Vec<f64> = target.iter().map(|&t| alpha0 * t).collect();
            kl_in += dirichlet_kl(&alpha_in, &alpha)?;
            n_in += 1;

            // log-softmax cross-entropy against the smoothed target
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            ce -= target
                .iter()
                .zip(z)
                .map(|(&t, &v)| t * (v - log_norm))
                .sum::<f64>();
        }
    }

    let mut loss = 0.0;
    if n_in > 0 {
        loss += term_weights.0 * kl_in / n_in as f64 + ce / n_in as f64;
    }
    if n_out > 0 {
        loss += term_weights.1 * kl_out / n_out as f64;
    }
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged {
            iteration: 0,
            detail: "prior-network loss is non-finite".to_string(),
        });
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_map(c: usize) -> CategoricalMap {
        CategoricalMap::new(1, 1, c, vec![1.0 / c as f64; c]).unwrap()
    }

    fn one_hot_map(c: usize, hot: usize) -> CategoricalMap {
        let mut p = vec![0.0; c];
        p[hot] = 1.0;
        CategoricalMap::new(1, 1, c, p).unwrap()
    }

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let logits = Tensor::from_vec(vec![1, 1, 19], vec![0.7; 19]).unwrap();
        let p = softmax(&logits).unwrap();
        for &v in p.pixel(0, 0) {
            assert!((v - 1.0 / 19.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let logits = Tensor::from_vec(vec![1, 1, 2], vec![1e6, 0.0]).unwrap();
        let p = softmax(&logits).unwrap();
        assert_eq!(p.pixel(0, 0), &[1.0, 0.0]);
    }

    #[test]
    fn max_prob_anchors() {
        assert_eq!(max_prob_score(&one_hot_map(5, 2)).values()[0], 0.0);
        let u19 = max_prob_score(&uniform_map(19)).values()[0];
        assert!((u19 - (1.0 - 1.0 / 19.0)).abs() < 1e-12);
        let two = CategoricalMap::new(1, 1, 2, vec![0.7, 0.3]).unwrap();
        assert!((max_prob_score(&two).values()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn entropy_anchors() {
        assert_eq!(entropy_score(&one_hot_map(4, 0)).values()[0], 0.0);
        let u19 = entropy_score(&uniform_map(19)).values()[0];
        assert!((u19 - (19.0f64).ln()).abs() < 1e-12);
        let half = CategoricalMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert!((entropy_score(&half).values()[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn predictive_entropy_anchors() {
        let same = McSampleStack::new(vec![one_hot_map(3, 1), one_hot_map(3, 1)]).unwrap();
        assert_eq!(predictive_entropy(&same).values()[0], 0.0);
        let disagree = McSampleStack::new(vec![one_hot_map(2, 0), one_hot_map(2, 1)]).unwrap();
        assert!((predictive_entropy(&disagree).values()[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn predictive_entropy_composes() {
        let a = CategoricalMap::new(1, 1, 3, vec![0.6, 0.3, 0.1]).unwrap();
        let b = CategoricalMap::new(1, 1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let stack = McSampleStack::new(vec![a, b]).unwrap();
        let direct = predictive_entropy(&stack).values()[0];
        let two_step = entropy_score(&stack.mean()).values()[0];
        assert_eq!(direct, two_step);
    }

    #[test]
    fn mutual_information_anchors() {
        let dist = CategoricalMap::new(1, 1, 3, vec![0.5, 0.25, 0.25]).unwrap();
        let same = McSampleStack::new(vec![dist.clone(), dist]).unwrap();
        assert!(mutual_information(&same).values()[0].abs() < 1e-12);

        let disagree = McSampleStack::new(vec![one_hot_map(2, 0), one_hot_map(2, 1)]).unwrap();
        assert!((mutual_information(&disagree).values()[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_uniform_entropy_is_zero() {
        // Dir(1, 1) is uniform on the simplex: differential entropy 0.
        let d = DirichletMap::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert!(dirichlet_differential_entropy(&d).values()[0].abs() < 1e-12);
    }

    #[test]
    fn concentrated_dirichlet_has_lower_entropy() {
        let flat = DirichletMap::new(1, 1, 3, vec![1.0; 3]).unwrap();
        let sharp = DirichletMap::new(1, 1, 3, vec![100.0; 3]).unwrap();
        assert!(
            dirichlet_differential_entropy(&sharp).values()[0]
                < dirichlet_differential_entropy(&flat).values()[0]
        );
    }

    #[test]
    fn dirichlet_kl_identity_and_symmetric_swap() {
        assert!(dirichlet_kl(&[2.0, 3.0], &[2.0, 3.0]).unwrap().abs() < 1e-12);
        let a = dirichlet_kl(&[1.0, 2.0], &[2.0, 1.0]).unwrap();
        let b = dirichlet_kl(&[2.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.0);
        assert!(dirichlet_kl(&[1.0, -1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn void_score_anchors() {
        let c20_uniform = uniform_map(20);
        let s = void_class_score(&c20_uniform, 19).unwrap();
        assert!((s.values()[0] - 0.05).abs() < 1e-12);
        assert_eq!(void_class_score(&one_hot_map(4, 3), 3).unwrap().values()[0], 1.0);
        assert_eq!(void_class_score(&one_hot_map(4, 0), 3).unwrap().values()[0], 0.0);
        assert!(void_class_score(&c20_uniform, 20).is_err());
    }

    #[test]
    fn prior_loss_reduces_to_ce_when_alpha_matches() {
        // Logits implying alpha exactly alpha_in on an all-ID image: the
        // first KL term vanishes.
        let (c, alpha0, eps) = (3usize, 100.0, 0.01);
        let class = 1u8;
        let target: Vec<f64> = (0..c)
            .map(|k| {
                let one_hot = if k == class as usize { 1.0 } else { 0.0 };
                (1.0 - eps) * one_hot + eps / c as f64
            })
            .collect();
        let logits_row: Vec<f64> = target.iter().map(|&t| (alpha0 * t).ln()).collect();
        let logits = Tensor::from_vec(vec![1, 1, c], logits_row.clone()).unwrap();
        let labels = ClassRaster::new(1, 1, vec![class]).unwrap();
        let mask = LabelMask::new(1, 1, vec![LABEL_ID]).unwrap();

        let loss =
            prior_network_loss(&logits, &labels, &mask, alpha0, eps, (0.1, 0.1)).unwrap();

        let max = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm =
            logits_row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        let ce: f64 = -target
            .iter()
            .zip(&logits_row)
            .map(|(&t, &z)| t * (z - log_norm))
            .sum::<f64>();
        assert!((loss - ce).abs() < 1e-9, "loss {loss} vs ce {ce}");
    }

    #[test]
    fn prior_loss_second_term_zero_for_flat_alpha() {
        // All-OoD image with alpha = 1 everywhere: only the second term
        // applies and it is KL(Dir(1) || Dir(1)) = 0.
        let c = 4;
        let logits = Tensor::from_vec(vec![1, 2, c], vec![0.0; 2 * c]).unwrap();
        let labels = ClassRaster::new(1, 2, vec![0, 0]).unwrap();
        let mask = LabelMask::new(1, 2, vec![1, 1]).unwrap();
        let loss = prior_network_loss(&logits, &labels, &mask, 100.0, 0.01, (0.1, 0.1)).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn prior_loss_composes_from_parts() {
        let (h, w, c) = (2usize, 2usize, 3usize);
        let mut rng = crate::seed::rng_for(3, "prior-loss");
        use rand::Rng;
        let logits_data: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..2.0)).collect();
        let logits = Tensor::from_vec(vec![h, w, c], logits_data.clone()).unwrap();
        let labels = ClassRaster::new(h, w, vec![0, 1, 2, 1]).unwrap();
        let mask = LabelMask::new(h, w, vec![LABEL_ID, LABEL_ID, 1, VOID_LABEL]).unwrap();
        let (alpha0, eps, w1, w2) = (50.0, 0.01, 0.1, 0.2);

        let loss =
            prior_network_loss(&logits, &labels, &mask, alpha0, eps, (w1, w2)).unwrap();

        // Oracle: recompute from independent dirichlet_kl and CE pieces.
        let mut expect = 0.0;
        let mut kl_in = 0.0;
        let mut ce = 0.0;
        let mut kl_out = 0.0;
        for (px, &(class, m)) in [(0u8, LABEL_ID), (1, LABEL_ID), (2, 1), (1, VOID_LABEL)]
            .iter()
            .enumerate()
        {
            let z = &logits_data[px * c..(px + 1) * c];
            let alpha: Vec<f64> = z.iter().map(|&v| v.exp()).collect();
            if m != LABEL_ID {
                kl_out += dirichlet_kl(&[1.0, 1.0, 1.0], &alpha).unwrap();
            } else {
                let target: Vec<f64> = (0..c)
                    .map(|k| {
                        (1.0 - eps) * if k == class as usize { 1.0 } else { 0.0 }
                            + eps / c as f64
                    })
                    .collect();
                let a_in: Vec<f64> = target.iter().map(|&t| alpha0 * t).collect();
                kl_in += dirichlet_kl(&a_in, &alpha).unwrap();
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let log_norm = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
                ce -= target.iter().zip(z).map(|(&t, &v)| t * (v - log_norm)).sum::<f64>();
            }
        }
        expect += w1 * kl_in / 2.0 + ce / 2.0 + w2 * kl_out / 2.0;
        assert!((loss - expect).abs() < 1e-10, "loss {loss} vs oracle {expect}");
    }
}
