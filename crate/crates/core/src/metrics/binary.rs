use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::accumulator::BinaryEvalAccumulator;

/// Precision-recall curve with one point per distinct threshold (exact
/// mode) or occupied bin (histogram mode), recall nondecreasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl PrCurve {
    /// Area under the curve by the step rule; equals [`average_precision`].
    pub fn area(&self) -> f64 {
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (&r, &p) in self.recall.iter().zip(&self.precision) {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
        ap
    }
}

/// Average precision by the step rule over descending-score tie groups:
/// `AP = sum_k (R_k - R_{k-1}) * P_k`.
pub fn average_precision(acc: &BinaryEvalAccumulator) -> Result<f64> {
    if acc.positive_count() == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let total_pos = acc.positive_count() as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (_, np, nn) in acc.descending_groups() {
        tp += np;
        fp += nn;
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// False-positive rate at the smallest acceptance set reaching
/// `TPR >= tpr_target` (the smallest achievable FPR, since both rates grow
/// as the threshold loosens).
pub fn fpr_at_tpr(acc: &BinaryEvalAccumulator, tpr_target: f64) -> Result<f64> {
    if acc.positive_count() == 0 || acc.negative_count() == 0 {
        return Err(Error::UndefinedMetric(
            "FPR@TPR needs at least one positive and one negative".into(),
        ));
    }
    if tpr_target <= 0.0 {
        return Ok(0.0);
    }
    let total_pos = acc.positive_count() as f64;
    let total_neg = acc.negative_count() as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    for (_, np, nn) in acc.descending_groups() {
        tp += np;
        fp += nn;
        if tp as f64 / total_pos >= tpr_target {
            return Ok(fp as f64 / total_neg);
        }
    }
    // tpr_target above 1 can never be reached; everything is accepted.
    Ok(1.0)
}

/// Maximum Youden's J over all thresholds: `max_t TPR(t) - FPR(t)`,
/// with "uncertain/flagged" meaning score above the threshold. The empty
/// acceptance set (threshold above every score) contributes J = 0.
pub fn max_youden_j(acc: &BinaryEvalAccumulator) -> Result<f64> {
    max_youden_j_with_threshold(acc).map(|(j, _)| j)
}

/// Maximum J together with the threshold attaining it. Flagging means
/// "score strictly above the threshold", so the reported threshold is the
/// score of the last included tie group (or +inf when J peaks at the
/// empty set).
pub fn max_youden_j_with_threshold(acc: &BinaryEvalAccumulator) -> Result<(f64, f64)> {
    if acc.positive_count() == 0 || acc.negative_count() == 0 {
        return Err(Error::UndefinedMetric(
            "Youden's J needs at least one positive and one negative".into(),
        ));
    }
    let total_pos = acc.positive_count() as f64;
    let total_neg = acc.negative_count() as f64;
    let groups = acc.descending_groups();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut best = 0.0f64;
    let mut best_k: Option<usize> = None;
    for (k, (_, np, nn)) in groups.iter().enumerate() {
        tp += np;
        fp += nn;
        let j = tp as f64 / total_pos - fp as f64 / total_neg;
        if j > best {
            best = j;
            best_k = Some(k);
        }
    }
    // Flagging the groups 0..=k means "score > t" for any t strictly
    // between group k's score and the next lower one.
    let threshold = match best_k {
        None => groups[0].0, // empty flagged set: everything <= max score
        Some(k) if k + 1 < groups.len() => 0.5 * (groups[k].0 + groups[k + 1].0),
        Some(k) => groups[k].0 - 1.0, // flag everything
    };
    Ok((best, threshold))
}

/// Precision-recall points at every distinct threshold.
pub fn pr_curve(acc: &BinaryEvalAccumulator) -> Result<PrCurve> {
    if acc.positive_count() == 0 {
        return Err(Error::UndefinedMetric(
            "PR curve needs at least one positive".into(),
        ));
    }
    let total_pos = acc.positive_count() as f64;
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut curve = PrCurve { recall: Vec::new(), precision: Vec::new(), thresholds: Vec::new() };
    for (threshold, np, nn) in acc.descending_groups() {
        tp += np;
        fp += nn;
        curve.recall.push(tp as f64 / total_pos);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.thresholds.push(threshold);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_from(scores: &[f64], labels: &[bool]) -> BinaryEvalAccumulator {
        let mut acc = BinaryEvalAccumulator::exact();
        for (&s, &l) in scores.iter().zip(labels) {
            acc.add(s, l).unwrap();
        }
        acc
    }

    #[test]
    fn spec_ap_example() {
        let acc = exact_from(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]);
        let ap = average_precision(&acc).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation_is_one() {
        let acc = exact_from(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(average_precision(&acc).unwrap(), 1.0);
        assert_eq!(fpr_at_tpr(&acc, 0.95).unwrap(), 0.0);
        assert_eq!(max_youden_j(&acc).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_degenerate() {
        let acc = exact_from(&[0.5; 6], &[true, true, false, false, false, false]);
        assert_eq!(fpr_at_tpr(&acc, 0.95).unwrap(), 1.0);
        assert_eq!(max_youden_j(&acc).unwrap(), 0.0);
    }

    #[test]
    fn no_positives_is_undefined() {
        let acc = exact_from(&[0.5, 0.4], &[false, false]);
        assert!(matches!(
            average_precision(&acc),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn single_positive_ranked_last() {
        let acc = exact_from(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]);
        let curve = pr_curve(&acc).unwrap();
        assert_eq!(*curve.precision.last().unwrap(), 1.0 / 4.0);
        assert_eq!(*curve.recall.last().unwrap(), 1.0);
    }

    #[test]
    fn curve_area_equals_average_precision() {
        let mut rng = crate::seed::rng_for(99, "pr-curve");
        use rand::Rng;
        let scores: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.3)).collect();
        let acc = exact_from(&scores, &labels);
        let curve = pr_curve(&acc).unwrap();
        let ap = average_precision(&acc).unwrap();
        assert!((curve.area() - ap).abs() < 1e-12);
        for w in curve.recall.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn perfect_curve_passes_through_one_one() {
        let acc = exact_from(&[0.9, 0.8, 0.2], &[true, true, false]);
        let curve = pr_curve(&acc).unwrap();
        assert!(curve
            .recall
            .iter()
            .zip(&curve.precision)
            .any(|(&r, &p)| r == 1.0 && p == 1.0));
    }
}
