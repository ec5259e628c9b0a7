use super::ModelError;
use crate::data::{BinaryMask, ProbMask};
use crate::float::{kahan_sum, Float};
use serde::{Deserialize, Serialize};

/// Clamp bound keeping predictions strictly inside (0,1) so both loss terms
/// stay finite and differentiable.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mixing weights for the combined segmentation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: serde::de::DeserializeOwned"))]
pub struct LossWeights<T: Float> {
    pub lambda_bce: T,
    pub lambda_dice: T,
    pub epsilon: T,
}

impl<T: Float> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_bce: T::from_f64_exactish(0.3),
            lambda_dice: T::from_f64_exactish(0.7),
            epsilon: T::one(),
        }
    }
}

impl<T: Float> LossWeights<T> {
    pub fn new(lambda_bce: T, lambda_dice: T, epsilon: T) -> Result<Self, ModelError> {
        if epsilon <= T::zero() {
            return Err(ModelError::Shape("loss epsilon must be positive".into()));
        }
        let sum = lambda_bce + lambda_dice;
        if (sum - T::one()).abs() > T::from_f64_exactish(1e-9) {
            return Err(ModelError::Shape(format!("loss weights must sum to 1, got {sum}")));
        }
        Ok(Self { lambda_bce, lambda_dice, epsilon })
    }
}

#[inline]
pub(crate) fn clamp_prob<T: Float>(p: T) -> T {
    let lo = T::from_f64_exactish(PROB_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Combined loss over raw probability and label slices. `pred` is clamped to
/// [PROB_CLAMP, 1−PROB_CLAMP] before both terms.
///
/// BCE is the mean of −[y·ln p + (1−y)·ln(1−p)]; the overlap term is
/// 1 − (2·Σpy + ε)/(Σp + Σy + ε).
pub(crate) fn loss_parts<T: Float>(pred: &[T], gt: &[u8], w: &LossWeights<T>) -> (T, T) {
    debug_assert_eq!(pred.len(), gt.len());
    let n = T::from_usize_exactish(pred.len());
    let bce = kahan_sum(pred.iter().zip(gt).map(|(&p, &y)| {
        let p = clamp_prob(p);
        if y == 1 {
            -p.ln()
        } else {
            -(T::one() - p).ln()
        }
    })) / n;
    let inter =
        kahan_sum(pred.iter().zip(gt).filter(|&(_, &y)| y == 1).map(|(&p, _)| clamp_prob(p)));
    let pred_sum = kahan_sum(pred.iter().map(|&p| clamp_prob(p)));
    let gt_sum = T::from_usize_exactish(gt.iter().filter(|&&y| y == 1).count());
    let two = T::from_f64_exactish(2.0);
    let dice = T::one() - (two * inter + w.epsilon) / (pred_sum + gt_sum + w.epsilon);
    (bce, dice)
}

/// λ-weighted BCE + Dice loss of a probability map against a binary mask.
pub fn bce_dice_loss<T: Float>(
    pred: &ProbMask<T>,
    gt: &BinaryMask,
    w: &LossWeights<T>,
) -> Result<T, ModelError> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(ModelError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (bce, dice) = loss_parts(pred.probs(), gt.bits(), w);
    Ok(w.lambda_bce * bce + w.lambda_dice * dice)
}

/// Gradient of the combined loss with respect to each prediction, zero where
/// the clamp is active.
pub(crate) fn loss_grad<T: Float>(
    pred: &[T],
    gt: &[u8],
    w: &LossWeights<T>,
    out: &mut [T],
    scale: T,
) {
    let n = T::from_usize_exactish(pred.len());
    let two = T::from_f64_exactish(2.0);
    let inter =
        kahan_sum(pred.iter().zip(gt).filter(|&(_, &y)| y == 1).map(|(&p, _)| clamp_prob(p)));
    let pred_sum = kahan_sum(pred.iter().map(|&p| clamp_prob(p)));
    let gt_sum = T::from_usize_exactish(gt.iter().filter(|&&y| y == 1).count());
    let num = two * inter + w.epsilon;
    let den = pred_sum + gt_sum + w.epsilon;
    let lo = T::from_f64_exactish(PROB_CLAMP);
    let hi = T::one() - lo;
    for ((&p, &y), o) in pred.iter().zip(gt).zip(out) {
        if p < lo || p > hi {
            continue;
        }
        let yv = if y == 1 { T::one() } else { T::zero() };
        let d_bce = (p - yv) / (p * (T::one() - p)) / n;
        let d_dice = -(two * yv * den - num) / (den * den);
        *o += scale * (w.lambda_bce * d_bce + w.lambda_dice * d_dice);
    }
}
