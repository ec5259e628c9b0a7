//! Scalar abstraction for everything numeric in this crate.
//!
//! All metric values, model parameters, and analysis quantities are generic
//! over [`Float`], which is `f32` or `f64`. Pixel counts and squared lattice
//! distances stay in integer types and are converted at the edges.

use num_traits::{FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// The scalar requirements shared by the metrics engine, the model, and the
/// analysis fits.
pub trait Float:
    num_traits::Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_exactish(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    fn from_usize_exactish(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Kahan compensated summation over a slice in index order.
///
/// Deterministic for a fixed input order; used wherever the contracts call
/// for order-stable means.
pub fn kahan_sum<T: Float>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mean via compensated summation. Returns `None` on empty input.
pub fn kahan_mean<T: Float>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut n = 0usize;
    let mut sum = T::zero();
    let mut carry = T::zero();
    for v in values {
        n += 1;
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    (n > 0).then(|| sum / T::from_usize_exactish(n))
}

/// Stable seed derivation for independent deterministic RNG streams.
///
/// FNV-1a over the label bytes folded into a splitmix64 finalizer; avoids any
/// dependence on std hasher internals so streams are identical across
/// platforms and runs.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
