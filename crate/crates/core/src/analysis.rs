//! Data-efficiency analyses: retention of performance under starvation,
//! area under the learning curve, and capacity-scaling fits.

use crate::float::{kahan_sum, Float};
use crate::metrics::MetricSummary;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("learning curve needs at least 2 epochs")]
    TooShort,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("method {method} at {resolution}px has no record for fraction {fraction}")]
    MissingFraction { method: String, resolution: usize, fraction: f64 },
    #[error("duplicate record for {method} at {resolution}px, fraction {fraction}")]
    DuplicateRecord { method: String, resolution: usize, fraction: f64 },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Whether larger values of a metric are better (Dice, IoU, sensitivity) or
/// worse (boundary distances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// How much of the full-data score survives starvation, oriented so that 1.0
/// always means perfect retention and values below 1 mean degradation.
pub fn retention_index<T: Float>(m_full: T, m_starved: T, orientation: Orientation) -> Result<T> {
    if !m_full.is_finite() || !m_starved.is_finite() {
        return Err(AnalysisError::UndefinedInput("non-finite metric value".into()));
    }
    let (num, den) = match orientation {
        Orientation::HigherBetter => (m_starved, m_full),
        Orientation::LowerBetter => (m_full, m_starved),
    };
    if den == T::zero() {
        return Err(AnalysisError::DivisionByZero);
    }
    if orientation == Orientation::LowerBetter && (m_full <= T::zero() || m_starved <= T::zero()) {
        return Err(AnalysisError::UndefinedInput(
            "distance metrics must be positive for retention ratios".into(),
        ));
    }
    Ok(num / den)
}

/// Trapezoidal area under a per-epoch metric curve, normalized by the epoch
/// span so a constant curve integrates to its own value.
pub fn alc<T: Float>(curve: &[T]) -> Result<T> {
    if curve.len() < 2 {
        return Err(AnalysisError::TooShort);
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::UndefinedInput("non-finite curve value".into()));
    }
    let half = T::from_f64_exactish(0.5);
    let area = kahan_sum(curve.windows(2).map(|w| (w[0] + w[1]) * half));
    Ok(area / T::from_usize_exactish(curve.len() - 1))
}

/// Least-squares fit of metric = slope·ln(param_count) + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct ScalingFit<T: Float> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

pub fn log_slope_fit<T: Float>(points: &[(u64, T)]) -> Result<ScalingFit<T>> {
    if points.len() < 2 {
        return Err(AnalysisError::DegenerateInput("need at least 2 points".into()));
    }
    if points.iter().any(|&(p, _)| p == 0) {
        return Err(AnalysisError::DegenerateInput("param counts must be positive".into()));
    }
    if points.iter().all(|&(p, _)| p == points[0].0) {
        return Err(AnalysisError::DegenerateInput("param counts must not all be equal".into()));
    }
    if points.iter().any(|(_, y)| !y.is_finite()) {
        return Err(AnalysisError::UndefinedInput("non-finite metric value".into()));
    }
    let n = T::from_usize_exactish(points.len());
    let xs: Vec<T> = points.iter().map(|&(p, _)| T::from_f64_exactish((p as f64).ln())).collect();
    let ys: Vec<T> = points.iter().map(|&(_, y)| y).collect();
    let x_mean = kahan_sum(xs.iter().copied()) / n;
    let y_mean = kahan_sum(ys.iter().copied()) / n;
    let sxx = kahan_sum(xs.iter().map(|&x| (x - x_mean) * (x - x_mean)));
    let sxy = kahan_sum(xs.iter().zip(&ys).map(|(&x, &y)| (x - x_mean) * (y - y_mean)));
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res = kahan_sum(xs.iter().zip(&ys).map(|(&x, &y)| {
        let r = y - (slope * x + intercept);
        r * r
    }));
    let ss_tot = kahan_sum(ys.iter().map(|&y| (y - y_mean) * (y - y_mean)));
    let r_squared = if ss_tot == T::zero() {
        T::one()
    } else {
        (T::one() - ss_res / ss_tot).max(T::zero()).min(T::one())
    };
    Ok(ScalingFit { slope, intercept, r_squared })
}

/// One trained-and-evaluated configuration, as stored on disk by the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct EfficiencyRecord<T: Float> {
    pub method: String,
    pub param_count: u64,
    pub resolution: usize,
    pub fraction: f64,
    pub metrics: MetricSummary<T>,
}

/// Per-method retention indexes between the full-data and 25%-data runs.
/// Fields are `None` where either endpoint lacks the metric or the ratio is
/// ill-posed (zero or non-positive distances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct RetentionRow<T: Float> {
    pub method: String,
    pub resolution: usize,
    pub dice: Option<T>,
    pub iou: Option<T>,
    pub sensitivity: Option<T>,
    pub hd95: Option<T>,
    pub msd: Option<T>,
}

const FULL_FRACTION: f64 = 1.0;
const STARVED_FRACTION: f64 = 0.25;

fn ri_opt<T: Float>(full: Option<T>, starved: Option<T>, orientation: Orientation) -> Option<T> {
    match (full, starved) {
        (Some(f), Some(s)) => retention_index(f, s, orientation).ok(),
        _ => None,
    }
}

/// Build the retention table from evaluated records: one row per
/// (method, resolution), requiring records at fractions 1.0 and 0.25.
pub fn retention_table<T: Float>(records: &[EfficiencyRecord<T>]) -> Result<Vec<RetentionRow<T>>> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, usize), Vec<&EfficiencyRecord<T>>> = BTreeMap::new();
    for rec in records {
        let group = groups.entry((rec.method.clone(), rec.resolution)).or_default();
        if group.iter().any(|r| r.fraction == rec.fraction) {
            return Err(AnalysisError::DuplicateRecord {
                method: rec.method.clone(),
                resolution: rec.resolution,
                fraction: rec.fraction,
            });
        }
        group.push(rec);
    }
    let mut rows = Vec::new();
    for ((method, resolution), group) in groups {
        let find = |fraction: f64| -> Result<&EfficiencyRecord<T>> {
            group.iter().find(|r| r.fraction == fraction).copied().ok_or_else(|| {
                AnalysisError::MissingFraction { method: method.clone(), resolution, fraction }
            })
        };
        let full = &find(FULL_FRACTION)?.metrics;
        let starved = &find(STARVED_FRACTION)?.metrics;
        rows.push(RetentionRow {
            method,
            resolution,
            dice: ri_opt(Some(full.dice), Some(starved.dice), Orientation::HigherBetter),
            iou: ri_opt(Some(full.iou), Some(starved.iou), Orientation::HigherBetter),
            sensitivity: ri_opt(full.sensitivity, starved.sensitivity, Orientation::HigherBetter),
            hd95: ri_opt(full.hd95, starved.hd95, Orientation::LowerBetter),
            msd: ri_opt(full.msd, starved.msd, Orientation::LowerBetter),
        });
    }
    Ok(rows)
}
