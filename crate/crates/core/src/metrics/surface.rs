use super::{MetricsError, Result};
use crate::data::BinaryMask;
use crate::float::{kahan_mean, Float};

/// Inner boundary under 4-connectivity: a foreground pixel is boundary if it
/// touches the image border or any of its 4 neighbours is background.
pub fn boundary_mask(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |y, x| {
        if mask.get(y, x) == 0 {
            return false;
        }
        y == 0
            || x == 0
            || y == h - 1
            || x == w - 1
            || mask.get(y - 1, x) == 0
            || mask.get(y + 1, x) == 0
            || mask.get(y, x - 1) == 0
            || mask.get(y, x + 1) == 0
    })
}

/// Exact squared Euclidean distance transform. For every pixel, the squared
/// distance to the nearest foreground pixel of `features`, computed with the
/// two-phase separable lower-envelope scan in pure integer arithmetic.
/// `features` must contain at least one foreground pixel.
pub fn squared_edt(features: &BinaryMask) -> Vec<u64> {
    let (h, w) = (features.height(), features.width());
    assert!(!features.is_empty_mask(), "distance transform needs at least one feature pixel");
    let inf = (h + w) as i64;

    // Phase 1: per-column vertical distances.
    let mut g = vec![0i64; h * w];
    for x in 0..w {
        g[x] = if features.get(0, x) == 1 { 0 } else { inf };
        for y in 1..h {
            g[y * w + x] =
                if features.get(y, x) == 1 { 0 } else { (g[(y - 1) * w + x] + 1).min(inf) };
        }
        for y in (0..h - 1).rev() {
            if g[(y + 1) * w + x] < g[y * w + x] {
                g[y * w + x] = g[(y + 1) * w + x] + 1;
            }
        }
    }

    // Phase 2: per-row lower envelope of the parabolas x -> (x-i)^2 + g_i^2.
    let mut dt = vec![0u64; h * w];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for y in 0..h {
        let row = &g[y * w..(y + 1) * w];
        let f = |x: i64, i: usize| -> i64 {
            let d = x - i as i64;
            d * d + row[i] * row[i]
        };
        let sep = |i: usize, u: usize| -> i64 {
            let (i_, u_) = (i as i64, u as i64);
            (u_ * u_ - i_ * i_ + row[u] * row[u] - row[i] * row[i]) / (2 * (u_ - i_))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let wv = 1 + sep(s[q as usize], u);
                if wv < w as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = wv;
                }
            }
        }
        for u in (0..w).rev() {
            dt[y * w + u] = f(u as i64, s[q as usize]) as u64;
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    dt
}

/// Squared distances from every boundary pixel of each mask to the nearest
/// boundary pixel of the other, pooled over both directions. `None` if
/// either mask has no foreground.
pub fn pooled_surface_distances(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<Vec<u64>>> {
    if !pred.same_dims(gt) {
        return Err(MetricsError::DimensionMismatch(
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
        ));
    }
    if pred.is_empty_mask() || gt.is_empty_mask() {
        return Ok(None);
    }
    let pred_b = boundary_mask(pred);
    let gt_b = boundary_mask(gt);
    let to_gt = squared_edt(&gt_b);
    let to_pred = squared_edt(&pred_b);
    let mut pooled = Vec::new();
    for (i, (&pb, &gb)) in pred_b.bits().iter().zip(gt_b.bits()).enumerate() {
        if pb == 1 {
            pooled.push(to_gt[i]);
        }
        if gb == 1 {
            pooled.push(to_pred[i]);
        }
    }
    Ok(Some(pooled))
}

/// Nearest-rank 95th percentile of the pooled surface distances. The rank is
/// ceil(0.95 n) computed in integers, taken on the sorted squared distances
/// (the square root is monotone, so it commutes with rank selection).
pub fn hd95<T: Float>(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<T>> {
    let Some(mut pooled) = pooled_surface_distances(pred, gt)? else {
        return Ok(None);
    };
    pooled.sort_unstable();
    let n = pooled.len();
    let rank = (95 * n).div_ceil(100);
    let sq = pooled[rank - 1];
    Ok(Some(T::from_f64_exactish(sq as f64).sqrt()))
}

/// Mean of the pooled surface distances (square roots averaged with
/// compensated summation).
pub fn msd<T: Float>(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<T>> {
    let Some(pooled) = pooled_surface_distances(pred, gt)? else {
        return Ok(None);
    };
    Ok(kahan_mean(pooled.iter().map(|&d| T::from_f64_exactish(d as f64).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mask_from_str(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let mut bits = Vec::with_capacity(h * w);
        for r in rows {
            for ch in r.chars() {
                bits.push(if ch == '#' { 1 } else { 0 });
            }
        }
        BinaryMask::new(h, w, bits).unwrap()
    }

    /// Brute force oracle: for every pixel, scan all feature pixels.
    fn brute_sq_edt(features: &BinaryMask) -> Vec<u64> {
        let (h, w) = (features.height(), features.width());
        let feats: Vec<(i64, i64)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| features.get(y, x) == 1)
            .map(|(y, x)| (y as i64, x as i64))
            .collect();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let d = feats
                    .iter()
                    .map(|&(fy, fx)| (y - fy) * (y - fy) + (x - fx) * (x - fx))
                    .min()
                    .unwrap();
                out.push(d as u64);
            }
        }
        out
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let m = mask_from_str(&["....", ".###", ".###", ".###"]);
        let b = boundary_mask(&m);
        // The 3x3 block touches the image border on the right and bottom, so
        // only the centre pixel (2,2) is interior.
        let expected = mask_from_str(&["....", ".###", ".#.#", ".###"]);
        assert_eq!(b, expected);
    }

    #[test]
    fn border_pixels_count_as_boundary() {
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        let b = boundary_mask(&full);
        assert_eq!(b.count_ones(), 8);
        assert_eq!(b.get(1, 1), 0);
    }

    #[test]
    fn edt_matches_brute_force_on_randomized_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for case in 0..40 {
            let h = rng.gen_range(1..18);
            let w = rng.gen_range(1..18);
            let density = 0.05 + 0.9 * (case as f64 / 40.0);
            let mut m = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(density));
            if m.is_empty_mask() {
                m.set(rng.gen_range(0..h), rng.gen_range(0..w), 1);
            }
            assert_eq!(squared_edt(&m), brute_sq_edt(&m), "case {case} ({h}x{w})");
        }
    }

    #[test]
    fn edt_single_feature_is_squared_radius() {
        let mut m = BinaryMask::zeros(5, 7);
        m.set(2, 3, 1);
        let dt = squared_edt(&m);
        for y in 0..5i64 {
            for x in 0..7i64 {
                let expect = ((y - 2) * (y - 2) + (x - 3) * (x - 3)) as u64;
                assert_eq!(dt[(y * 7 + x) as usize], expect);
            }
        }
    }

    #[test]
    fn identical_masks_have_zero_distances() {
        let m = mask_from_str(&[".....", ".###.", ".###.", "....."]);
        assert_eq!(hd95::<f64>(&m, &m).unwrap(), Some(0.0));
        assert_eq!(msd::<f64>(&m, &m).unwrap(), Some(0.0));
    }

    #[test]
    fn shifted_single_pixels_give_the_shift() {
        let mut a = BinaryMask::zeros(8, 8);
        a.set(2, 2, 1);
        let mut b = BinaryMask::zeros(8, 8);
        b.set(2, 5, 1);
        assert_relative_eq!(hd95::<f64>(&a, &b).unwrap().unwrap(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(msd::<f64>(&a, &b).unwrap().unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_masks_leave_distances_undefined() {
        let empty = BinaryMask::zeros(4, 4);
        let mut one = BinaryMask::zeros(4, 4);
        one.set(1, 1, 1);
        assert_eq!(hd95::<f64>(&one, &empty).unwrap(), None);
        assert_eq!(hd95::<f64>(&empty, &one).unwrap(), None);
        assert_eq!(msd::<f64>(&empty, &empty).unwrap(), None);
    }

    #[test]
    fn hd95_uses_nearest_rank() {
        // Two horizontal segments: prediction row at y=0 spanning 10 pixels,
        // reference a single pixel at (0,0). Pooled distances from the
        // prediction side are 0,1,...,9 plus one 0 from the reference side:
        // n = 11, rank = ceil(0.95*11) = 11, so hd95 picks the maximum, 9.
        let mut pred = BinaryMask::zeros(1, 10);
        for x in 0..10 {
            pred.set(0, x, 1);
        }
        let mut gt = BinaryMask::zeros(1, 10);
        gt.set(0, 0, 1);
        assert_relative_eq!(hd95::<f64>(&pred, &gt).unwrap().unwrap(), 9.0, epsilon = 1e-12);

        // 20 pooled values: rank = ceil(0.95*20) = 19 exactly, not 20.
        let sorted: Vec<u64> = (0..20).collect();
        let n = sorted.len();
        let rank = (95 * n).div_ceil(100);
        assert_eq!(rank, 19);
    }
}
