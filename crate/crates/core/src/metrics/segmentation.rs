use crate::error::{Error, Result};
use crate::raster::{ScoreMap, VOID_LABEL};

/// Per-pixel correctness raster: 1 = accurate, 0 = inaccurate, 255 = void.
#[derive(Debug, Clone)]
pub struct CorrectnessRaster {
    pub height: usize,
    pub width: usize,
    pub values: Vec<u8>,
}

impl CorrectnessRaster {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::contract("correctness raster size mismatch"));
        }
        if values.iter().any(|&v| v != 0 && v != 1 && v != VOID_LABEL) {
            return Err(Error::contract("correctness values must be 0/1/255"));
        }
        Ok(CorrectnessRaster { height, width, values })
    }
}

/// Patch accuracy vs patch uncertainty at a fixed threshold, per pixel:
/// `(n_accurate&certain + n_inaccurate&uncertain) / n_total`, where
/// "certain" means score <= threshold and void pixels are excluded.
pub fn pavpu(
    uncertainty: &ScoreMap,
    correctness: &CorrectnessRaster,
    threshold: f64,
) -> Result<f64> {
    if uncertainty.height != correctness.height || uncertainty.width != correctness.width {
        return Err(Error::contract("score/correctness shape mismatch"));
    }
    let mut hits = 0u64;
    let mut total = 0u64;
    for (&score, &acc) in uncertainty.values().iter().zip(&correctness.values) {
        if acc == VOID_LABEL {
            continue;
        }
        total += 1;
        let certain = score <= threshold;
        let accurate = acc == 1;
        if (accurate && certain) || (!accurate && !certain) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("PAvPU over zero evaluated pixels".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// C x C prediction-vs-truth counts; the void label never enters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.classes + truth]
    }

    pub fn record(&mut self, predicted: u8, truth: u8) {
        if predicted == VOID_LABEL || truth == VOID_LABEL {
            return;
        }
        let (p, t) = (predicted as usize, truth as usize);
        debug_assert!(p < self.classes && t < self.classes);
        self.counts[p * self.classes + t] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::contract("confusion matrices disagree on class count"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Mean intersection-over-union over classes with nonzero union; classes
/// absent from both prediction and truth are excluded from the mean.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let c = cm.classes();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..c {
        let tp = cm.count(k, k);
        let fp: u64 = (0..c).filter(|&t| t != k).map(|t| cm.count(k, t)).sum();
        let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| cm.count(p, k)).sum();
        let union = tp + fp + fn_;
        if union > 0 {
            sum += tp as f64 / union as f64;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("mIoU of an empty confusion matrix".into()));
    }
    Ok(sum / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pavpu_reduces_to_accuracy_when_all_certain() {
        // Threshold above every score: every pixel is "certain", so the
        // hits are exactly the accurate pixels.
        let scores = ScoreMap::new(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let acc = CorrectnessRaster::new(1, 4, vec![1, 1, 0, 1]).unwrap();
        let v = pavpu(&scores, &acc, 10.0).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pavpu_flips_when_all_uncertain() {
        let scores = ScoreMap::new(1, 4, vec![0.5, 0.6, 0.7, 0.8]).unwrap();
        let acc = CorrectnessRaster::new(1, 4, vec![1, 1, 0, 1]).unwrap();
        let v = pavpu(&scores, &acc, 0.0).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pavpu_hand_count_3x3() {
        let scores =
            ScoreMap::new(3, 3, vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5]).unwrap();
        let acc =
            CorrectnessRaster::new(3, 3, vec![1, 0, 1, 0, 1, 255, 0, 1, 1]).unwrap();
        // threshold 0.5: certain = {0.1,0.2,0.3,0.4,0.5}
        // pixels: (0.1,acc)=hit, (0.9,inacc)=hit, (0.2,acc)=hit, (0.8,inacc)=hit,
        // (0.3,acc)=hit, (0.7,void)=skip, (0.4,inacc)=miss, (0.6,acc)=miss, (0.5,acc)=hit
        let v = pavpu(&scores, &acc, 0.5).unwrap();
        assert!((v - 6.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn miou_diagonal_is_one() {
        let mut cm = ConfusionMatrix::new(3);
        cm.record(0, 0);
        cm.record(1, 1);
        cm.record(2, 2);
        assert_eq!(miou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn miou_total_confusion_is_zero() {
        let mut cm = ConfusionMatrix::new(3);
        cm.record(0, 1);
        cm.record(1, 0);
        assert_eq!(miou(&cm).unwrap(), 0.0);
    }

    #[test]
    fn miou_matches_hand_computation() {
        let mut cm = ConfusionMatrix::new(3);
        // predicted 0: 3 correct, 1 was truth-1
        for _ in 0..3 {
            cm.record(0, 0);
        }
        cm.record(0, 1);
        // predicted 1: 2 correct
        for _ in 0..2 {
            cm.record(1, 1);
        }
        // predicted 2: 1 correct, 1 was truth-0
        cm.record(2, 2);
        cm.record(2, 0);
        // class 0: tp=3, fp=1, fn=1 -> 3/5
        // class 1: tp=2, fp=0, fn=1 -> 2/3
        // class 2: tp=1, fp=1, fn=0 -> 1/2
        let expect = (3.0 / 5.0 + 2.0 / 3.0 + 0.5) / 3.0;
        assert!((miou(&cm).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_miou_is_undefined() {
        let cm = ConfusionMatrix::new(3);
        assert!(matches!(miou(&cm), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn void_never_recorded() {
        let mut cm = ConfusionMatrix::new(2);
        cm.record(VOID_LABEL, 0);
        cm.record(0, VOID_LABEL);
        assert_eq!(cm.total(), 0);
    }
}
