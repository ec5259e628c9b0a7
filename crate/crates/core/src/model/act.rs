use crate::float::Float;

/// Tanh-form GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
/// Smooth everywhere, which keeps finite-difference gradient checks honest.
#[inline]
pub fn gelu<T: Float>(x: T) -> T {
    let c = T::from_f64_exactish(0.797_884_560_802_865_4);
    let a = T::from_f64_exactish(0.044_715);
    let half = T::from_f64_exactish(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_prime<T: Float>(x: T) -> T {
    let c = T::from_f64_exactish(0.797_884_560_802_865_4);
    let a = T::from_f64_exactish(0.044_715);
    let half = T::from_f64_exactish(0.5);
    let three = T::from_f64_exactish(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
