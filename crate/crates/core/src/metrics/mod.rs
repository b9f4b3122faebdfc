//! Imbalance-aware evaluation: average precision, FPR at a TPR target,
//! maximum Youden's J, PAvPU, and mean IoU, over either an exact backend
//! (stored score/label pairs) or a mergeable streaming histogram. The
//! accumulators form a monoid: accumulate per shard, merge in any order,
//! then read the metrics.

mod accumulator;
mod binary;
mod segmentation;

pub use accumulator::{BinaryEvalAccumulator, DEFAULT_BINS};
pub use binary::{average_precision, fpr_at_tpr, max_youden_j, pr_curve, PrCurve};
pub use segmentation::{miou, pavpu, ConfusionMatrix, CorrectnessRaster};
