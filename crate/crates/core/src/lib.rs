//! Benchmarking engine for breast-ultrasound lesion segmentation: a frozen
//! vision-transformer encoder with a trainable dense-prediction decoder,
//! boundary-aware evaluation metrics, patient-level data splits, and the
//! data-efficiency analyses built on top of them.
//!
//! Everything numeric is generic over [`Float`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar for callers that don't care.

pub mod analysis;
pub mod data;
pub mod float;
pub mod metrics;
pub mod model;
pub mod split;

pub use float::Float;

/// Double-precision image.
pub type Image64 = data::Image<f64>;
/// Double-precision probability map.
pub type ProbMask64 = data::ProbMask<f64>;
/// Double-precision per-frame metrics.
pub type FrameMetrics64 = metrics::FrameMetrics<f64>;
/// Double-precision metric aggregate.
pub type MetricSummary64 = metrics::MetricSummary<f64>;
/// Double-precision tensor.
pub type Tensor64 = model::Tensor<f64>;
/// Double-precision frozen backbone.
pub type Encoder64 = model::Encoder<f64>;
/// Double-precision decoder parameters.
pub type DecoderState64 = model::DecoderState<f64>;
/// Double-precision capacity fit.
pub type ScalingFit64 = analysis::ScalingFit<f64>;
/// Double-precision run record for the efficiency tables.
pub type EfficiencyRecord64 = analysis::EfficiencyRecord<f64>;
