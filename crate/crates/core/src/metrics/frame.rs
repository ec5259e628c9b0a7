use super::{confusion, dice, hd95, iou, msd, sensitivity, MetricsError, Result};
use crate::data::{BinaryMask, ProbMask};
use crate::float::{kahan_mean, Float};
use serde::{Deserialize, Serialize};

/// All five quality scores for a single frame. Boundary metrics are `None`
/// when either mask is empty; sensitivity is `None` when the reference is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct FrameMetrics<T: Float> {
    pub dice: T,
    pub iou: T,
    pub sensitivity: Option<T>,
    pub hd95: Option<T>,
    pub msd: Option<T>,
}

/// Score a binarized prediction against the reference mask.
pub fn evaluate_masks<T: Float>(pred: &BinaryMask, gt: &BinaryMask) -> Result<FrameMetrics<T>> {
    let c = confusion(pred, gt)?;
    Ok(FrameMetrics {
        dice: dice(&c),
        iou: iou(&c),
        sensitivity: sensitivity(&c),
        hd95: hd95(pred, gt)?,
        msd: msd(pred, gt)?,
    })
}

/// Threshold a probability map at `tau` (foreground where p >= tau) and
/// score it against the reference mask.
pub fn evaluate_frame<T: Float>(
    pred: &ProbMask<T>,
    gt: &BinaryMask,
    tau: T,
) -> Result<FrameMetrics<T>> {
    evaluate_masks(&pred.threshold(tau), gt)
}

/// Dataset-level summary: means over frames, with undefined frames excluded
/// from the corresponding mean and counted separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct MetricSummary<T: Float> {
    pub frames: usize,
    pub dice: T,
    pub iou: T,
    pub sensitivity: Option<T>,
    pub hd95: Option<T>,
    pub msd: Option<T>,
    pub undefined_sensitivity: usize,
    pub undefined_hd95: usize,
    pub undefined_msd: usize,
}

pub fn aggregate<T: Float>(frames: &[FrameMetrics<T>]) -> Result<MetricSummary<T>> {
    if frames.is_empty() {
        return Err(MetricsError::NoFrames);
    }
    let mean_opt = |values: Vec<T>| kahan_mean(values);
    let sens: Vec<T> = frames.iter().filter_map(|f| f.sensitivity).collect();
    let hd: Vec<T> = frames.iter().filter_map(|f| f.hd95).collect();
    let ms: Vec<T> = frames.iter().filter_map(|f| f.msd).collect();
    Ok(MetricSummary {
        frames: frames.len(),
        dice: kahan_mean(frames.iter().map(|f| f.dice)).expect("non-empty"),
        iou: kahan_mean(frames.iter().map(|f| f.iou)).expect("non-empty"),
        undefined_sensitivity: frames.len() - sens.len(),
        undefined_hd95: frames.len() - hd.len(),
        undefined_msd: frames.len() - ms.len(),
        sensitivity: mean_opt(sens),
        hd95: mean_opt(hd),
        msd: mean_opt(ms),
    })
}
