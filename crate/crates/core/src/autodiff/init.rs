use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Half-width of the Glorot uniform range for `shape`.
///
/// Fans are the last two extents; a vector uses `fan_out = 1`.
pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape.len() {
        0 => (1, 1),
        1 => (shape[0], 1),
        n => (shape[n - 2], shape[n - 1]),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot uniform samples drawn from `rng`.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let bound = xavier_bound(shape);
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("xavier shape must have positive extents")
}

/// Glorot uniform tensor from a fixed seed.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    xavier_uniform(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_within_bound() {
        let t = xavier_init(&[4, 4], 3);
        let b = (6.0f64 / 8.0).sqrt();
        assert!((b - 0.866).abs() < 1e-3);
        assert!(t.data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn same_seed_same_tensor() {
        assert_eq!(xavier_init(&[3, 5], 11), xavier_init(&[3, 5], 11));
        assert_ne!(xavier_init(&[3, 5], 11), xavier_init(&[3, 5], 12));
    }

    #[test]
    fn empirical_mean_is_centred() {
        let t = xavier_init(&[1000, 100], 5);
        let mean = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }
}
