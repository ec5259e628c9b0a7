use crate::float::Float;
use rand::Rng;

/// Dense row-major tensor. Feature maps are (channels, height, width);
/// weight tensors follow (out, in, k, k) for convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn scalar_value(v: T) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The (channels, height, width) of a rank-3 tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected rank-3 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Draw from N(0, std²) truncated to ±2 std, via Box–Muller with rejection.
pub fn trunc_normal<T: Float, R: Rng>(rng: &mut R, std: f64) -> T {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let z = r * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return T::from_f64_exactish(z * std);
        }
    }
}

pub fn fill_trunc_normal<T: Float, R: Rng>(rng: &mut R, std: f64, out: &mut [T]) {
    for v in out {
        *v = trunc_normal(rng, std);
    }
}

/// Interpolation stencil for one axis of a bilinear resize with half-pixel
/// (align-corners=false) coordinates: src = (dst + 0.5)·(in/out) − 0.5,
/// clamped to the valid range.
pub fn bilinear_axis<T: Float>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T)> {
    let half = T::from_f64_exactish(0.5);
    let scale = T::from_usize_exactish(in_len) / T::from_usize_exactish(out_len);
    (0..out_len)
        .map(|o| {
            let f = ((T::from_usize_exactish(o) + half) * scale - half)
                .max(T::zero())
                .min(T::from_usize_exactish(in_len - 1));
            let i0 = f.floor().to_f64_lossy() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, f - T::from_usize_exactish(i0))
        })
        .collect()
}

/// Bilinear resize of a (C,H,W) tensor to (C, out_h, out_w).
pub fn resize_chw<T: Float>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = input.dims3();
    let ys = bilinear_axis::<T>(h, out_h);
    let xs = bilinear_axis::<T>(w, out_w);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let src = input.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let out_plane = &mut dst[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let row0 = &plane[y0 * w..y0 * w + w];
            let row1 = &plane[y1 * w..y1 * w + w];
            let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
            for (ov, &(x0, x1, wx)) in out_row.iter_mut().zip(&xs) {
                let top = row0[x0] + (row0[x1] - row0[x0]) * wx;
                let bot = row1[x0] + (row1[x1] - row1[x0]) * wx;
                *ov = top + (bot - top) * wy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn trunc_normal_respects_bounds_and_spread() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut buf = vec![0.0f64; 20_000];
        fill_trunc_normal(&mut rng, 0.02, &mut buf);
        assert!(buf.iter().all(|v| v.abs() <= 0.04 + 1e-12));
        let mean: f64 = buf.iter().sum::<f64>() / buf.len() as f64;
        let var: f64 = buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / buf.len() as f64;
        assert!(mean.abs() < 1e-3);
        // Rejecting beyond two sigma shrinks the standard deviation to
        // sigma * sqrt(1 - 4 phi(2) / (Phi(2) - Phi(-2))) ~= 0.8797 sigma.
        assert!((var.sqrt() - 0.02 * 0.8797).abs() < 5e-4);
    }

    #[test]
    fn resize_chw_matches_image_resize() {
        use crate::data::Image;
        let data: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin()).collect();
        let img = Image::new(1, 5, 8, data[..40].to_vec()).unwrap();
        let t = Tensor::from_vec(&[1, 5, 8], data[..40].to_vec());
        let a = img.resize_bilinear(9, 3).unwrap();
        let b = resize_chw(&t, 9, 3);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = resize_chw(&t, 2, 3);
        assert_eq!(t, r);
    }
}
