use super::tensor::Tensor;
use crate::float::Float;

/// Cosine-annealed learning rate for epoch `epoch` of `total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    assert!(total > 0, "schedule needs at least one epoch");
    let t = epoch as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with decoupled weight decay. Moment buffers are allocated lazily on
/// the first step and keyed by parameter order, which must stay stable.
pub struct AdamW<T: Float> {
    beta1: T,
    beta2: T,
    eps: T,
    weight_decay: T,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(weight_decay: T) -> Self {
        Self {
            beta1: T::from_f64_exactish(0.9),
            beta2: T::from_f64_exactish(0.999),
            eps: T::from_f64_exactish(1e-8),
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over aligned parameter/gradient lists.
    pub fn step(&mut self, params: &mut [(String, Tensor<T>)], grads: &[Tensor<T>], lr: T) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state does not match parameters");
        self.step += 1;
        let one = T::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        for ((pt, gt), (mt, vt)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(pt.1.shape(), gt.shape(), "gradient shape mismatch for {}", pt.0);
            for ((p, &g), (m, v)) in
                pt.1.data_mut()
                    .iter_mut()
                    .zip(gt.data())
                    .zip(mt.data_mut().iter_mut().zip(vt.data_mut()))
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}
