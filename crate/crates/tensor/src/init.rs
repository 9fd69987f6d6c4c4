use crate::float::Float;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Xavier-uniform `[fan_in × fan_out]` matrix drawn from `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Float>(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::of(rng.uniform(-a, a))).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

pub fn uniform<T: Float>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut RngStream) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.uniform(lo, hi))).collect();
    Tensor::new(shape, data).expect("uniform shape")
}
