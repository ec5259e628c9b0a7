use super::{MetricsError, Result};
use crate::data::BinaryMask;
use crate::float::Float;

/// Pixel-level confusion counts for one prediction/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn gt_positive(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    pub fn pred_positive(&self) -> u64 {
        self.true_pos + self.false_pos
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if !pred.same_dims(gt) {
        return Err(MetricsError::DimensionMismatch(
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        match (p, g) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            _ => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// Dice coefficient 2·TP / (2·TP + FP + FN). When both masks are empty the
/// prediction is a perfect match, so the score is 1.
pub fn dice<T: Float>(c: &ConfusionCounts) -> T {
    let denom = 2 * c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        return T::one();
    }
    T::from_usize_exactish(2 * c.true_pos as usize) / T::from_usize_exactish(denom as usize)
}

/// Jaccard index TP / (TP + FP + FN), 1 when both masks are empty.
pub fn iou<T: Float>(c: &ConfusionCounts) -> T {
    let denom = c.true_pos + c.false_pos + c.false_neg;
    if denom == 0 {
        return T::one();
    }
    T::from_usize_exactish(c.true_pos as usize) / T::from_usize_exactish(denom as usize)
}

/// Recall TP / (TP + FN). Undefined when the reference has no foreground.
pub fn sensitivity<T: Float>(c: &ConfusionCounts) -> Option<T> {
    let denom = c.gt_positive();
    if denom == 0 {
        return None;
    }
    Some(T::from_usize_exactish(c.true_pos as usize) / T::from_usize_exactish(denom as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mask(bits: &[u8], w: usize) -> BinaryMask {
        BinaryMask::new(bits.len() / w, w, bits.to_vec()).unwrap()
    }

    #[test]
    fn counts_match_naive_recount() {
        let pred = mask(&[1, 1, 0, 0, 1, 0, 1, 0, 0], 3);
        let gt = mask(&[1, 0, 0, 1, 1, 0, 0, 0, 1], 3);
        let c = confusion(&pred, &gt).unwrap();
        // Recount with an independent loop over explicit pairs.
        let mut tp = 0;
        let mut fp = 0;
        let mut missed = 0;
        let mut tn = 0;
        for (p, g) in pred.bits().iter().zip(gt.bits()) {
            match (p, g) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => missed += 1,
                _ => tn += 1,
            }
        }
        assert_eq!((c.true_pos, c.false_pos, c.false_neg, c.true_neg), (tp, fp, missed, tn));
        assert_eq!(c.total(), 9);
    }

    #[test]
    fn worked_example_scores() {
        // 4x4 grid: prediction covers a 2x3 block, reference a 3x2 block,
        // overlapping in a 2x2 square.
        let pred = mask(&[1, 1, 1, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0], 4);
        let gt = mask(&[1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0], 4);
        let c = confusion(&pred, &gt).unwrap();
        assert_eq!((c.true_pos, c.false_pos, c.false_neg), (4, 2, 2));
        assert_relative_eq!(dice::<f64>(&c), 8.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(iou::<f64>(&c), 4.0 / 8.0, epsilon = 1e-15);
        assert_relative_eq!(sensitivity::<f64>(&c).unwrap(), 4.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_conventions() {
        let empty = mask(&[0, 0, 0, 0], 2);
        let c = confusion(&empty, &empty).unwrap();
        assert_eq!(dice::<f64>(&c), 1.0);
        assert_eq!(iou::<f64>(&c), 1.0);
        assert!(sensitivity::<f64>(&c).is_none());

        let full = mask(&[1, 1, 1, 1], 2);
        let c = confusion(&full, &empty).unwrap();
        assert_eq!(dice::<f64>(&c), 0.0);
        assert!(sensitivity::<f64>(&c).is_none());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = mask(&[0, 0], 2);
        let b = mask(&[0, 0], 1);
        assert!(confusion(&a, &b).is_err());
    }
}
