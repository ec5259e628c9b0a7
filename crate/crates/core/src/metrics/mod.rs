//! Segmentation quality metrics: overlap scores from confusion counts and
//! boundary-distance scores from an exact Euclidean distance transform.

mod confusion;
mod frame;
mod surface;

pub use confusion::{confusion, dice, iou, sensitivity, ConfusionCounts};
pub use frame::{aggregate, evaluate_frame, evaluate_masks, FrameMetrics, MetricSummary};
pub use surface::{boundary_mask, hd95, msd, pooled_surface_distances, squared_edt};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("cannot aggregate zero frames")]
    NoFrames,
}

pub type Result<T> = std::result::Result<T, MetricsError>;
