use rand::Rng;

use crate::tensor::Tensor;

/// Uniform initialization in `[-1/√fan_in, 1/√fan_in]`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}
