use super::{DataError, Result};
use crate::float::Float;

/// Planar image, channel-major (CHW). One or three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Float> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Float> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(DataError::Channel(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(DataError::Format("image must have at least one pixel".into()));
        }
        if data.len() != channels * height * width {
            return Err(DataError::Format(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![T::zero(); channels * height * width])
    }

    /// Grayscale image from 8-bit samples, mapped into [0,1].
    pub fn from_gray_u8(height: usize, width: usize, samples: &[u8]) -> Result<Self> {
        if samples.len() != height * width {
            return Err(DataError::Format(format!(
                "sample length {} does not match {}x{}",
                samples.len(),
                height,
                width
            )));
        }
        let scale = T::from_f64_exactish(1.0 / 255.0);
        let data = samples.iter().map(|&s| T::from_usize_exactish(s as usize) * scale).collect();
        Self::new(1, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Per-channel standardization to zero mean and unit population standard
    /// deviation. Channels with zero variance are mapped to all zeros.
    pub fn normalize(&self) -> Self {
        let n = self.height * self.width;
        let inv_n = T::one() / T::from_usize_exactish(n);
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let plane = self.plane(c);
            let mean = crate::float::kahan_sum(plane.iter().copied()) * inv_n;
            let var = crate::float::kahan_sum(plane.iter().map(|&v| {
                let d = v - mean;
                d * d
            })) * inv_n;
            let std = var.sqrt();
            if std > T::zero() {
                let inv_std = T::one() / std;
                out.extend(plane.iter().map(|&v| (v - mean) * inv_std));
            } else {
                out.extend(std::iter::repeat_n(T::zero(), n));
            }
        }
        Self { channels: self.channels, height: self.height, width: self.width, data: out }
    }

    /// Replicate a single-channel image into three identical channels.
    pub fn to_pseudo_rgb(&self) -> Result<Self> {
        if self.channels != 1 {
            return Err(DataError::Channel(format!(
                "pseudo-RGB expansion expects a single-channel image, got {} channels",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(3 * self.height * self.width);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Ok(Self { channels: 3, height: self.height, width: self.width, data })
    }

    /// Bilinear resample to a new spatial size. Source coordinates follow the
    /// half-pixel convention: src = (dst + 0.5) * (in / out) - 0.5, clamped to
    /// the valid range.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Self> {
        if new_h == 0 || new_w == 0 {
            return Err(DataError::Format("resize target must be non-empty".into()));
        }
        let mut data = Vec::with_capacity(self.channels * new_h * new_w);
        let half = T::from_f64_exactish(0.5);
        let sy = T::from_usize_exactish(self.height) / T::from_usize_exactish(new_h);
        let sx = T::from_usize_exactish(self.width) / T::from_usize_exactish(new_w);
        for c in 0..self.channels {
            for oy in 0..new_h {
                let fy = ((T::from_usize_exactish(oy) + half) * sy - half)
                    .max(T::zero())
                    .min(T::from_usize_exactish(self.height - 1));
                let y0 = fy.floor().to_f64_lossy() as usize;
                let y1 = (y0 + 1).min(self.height - 1);
                let wy = fy - T::from_usize_exactish(y0);
                for ox in 0..new_w {
                    let fx = ((T::from_usize_exactish(ox) + half) * sx - half)
                        .max(T::zero())
                        .min(T::from_usize_exactish(self.width - 1));
                    let x0 = fx.floor().to_f64_lossy() as usize;
                    let x1 = (x0 + 1).min(self.width - 1);
                    let wx = fx - T::from_usize_exactish(x0);
                    let tl = self.get(c, y0, x0);
                    let tr = self.get(c, y0, x1);
                    let bl = self.get(c, y1, x0);
                    let br = self.get(c, y1, x1);
                    let top = tl + (tr - tl) * wx;
                    let bot = bl + (br - bl) * wx;
                    data.push(top + (bot - top) * wy);
                }
            }
        }
        Self::new(self.channels, new_h, new_w, data)
    }
}

/// Nearest-neighbour resample for label maps, matching the half-pixel
/// convention used by [`Image::resize_bilinear`].
pub fn resize_mask_nearest(
    mask: &super::BinaryMask,
    new_h: usize,
    new_w: usize,
) -> Result<super::BinaryMask> {
    if new_h == 0 || new_w == 0 {
        return Err(DataError::Format("resize target must be non-empty".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    let mut bits = Vec::with_capacity(new_h * new_w);
    for oy in 0..new_h {
        let fy = ((oy as f64 + 0.5) * h as f64 / new_h as f64 - 0.5).max(0.0);
        let y = (fy.round() as usize).min(h - 1);
        for ox in 0..new_w {
            let fx = ((ox as f64 + 0.5) * w as f64 / new_w as f64 - 0.5).max(0.0);
            let x = (fx.round() as usize).min(w - 1);
            bits.push(mask.get(y, x));
        }
    }
    super::BinaryMask::new(new_h, new_w, bits)
}
