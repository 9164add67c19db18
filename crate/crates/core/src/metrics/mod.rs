//! Evaluation metrics for semantic and instance label maps.

mod ap;
mod distance;
mod iou;
mod stats;

pub use ap::{instance_ap, APReport, MatchedPair, DEFAULT_AP_THRESHOLDS};
pub use distance::{masked_weighted_l1, MaskedDistanceConfig};
pub use iou::{disagreement_fraction, miou, ClassIoU, IoUAccumulator, IoUReport};
pub use stats::{dataset_stats, ClassStats, StatsAccumulator, StatsReport};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("IoU threshold {0} is outside (0, 1]")]
    Threshold(f64),
    #[error("no IoU thresholds given")]
    NoThresholds,
    #[error("invalid distance config: {0}")]
    Config(String),
}

pub(crate) fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch(a.0, a.1, b.0, b.1))
    }
}
