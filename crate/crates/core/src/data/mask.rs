use super::{DataError, Result};
use crate::float::Float;

/// Per-pixel {0,1} lesion map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DataError::Format("mask must have at least one pixel".into()));
        }
        if bits.len() != height * width {
            return Err(DataError::Format(format!(
                "mask data length {} does not match {}x{}",
                bits.len(),
                height,
                width
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(DataError::Format("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![0; height * width] }
    }

    /// Build from a predicate over (y, x).
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Per-pixel probability map in [0,1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask<T: Float> {
    height: usize,
    width: usize,
    probs: Vec<T>,
}

impl<T: Float> ProbMask<T> {
    pub fn new(height: usize, width: usize, probs: Vec<T>) -> Result<Self> {
        if probs.len() != height * width {
            return Err(DataError::Format(format!(
                "probability data length {} does not match {}x{}",
                probs.len(),
                height,
                width
            )));
        }
        if probs.iter().any(|p| !(T::zero()..=T::one()).contains(p)) {
            return Err(DataError::Format("probabilities must lie in [0,1]".into()));
        }
        Ok(Self { height, width, probs })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.probs[y * self.width + x]
    }

    /// Binarize: foreground where p >= tau.
    pub fn threshold(&self, tau: T) -> BinaryMask {
        let bits = self.probs.iter().map(|&p| u8::from(p >= tau)).collect();
        BinaryMask { height: self.height, width: self.width, bits }
    }
}
