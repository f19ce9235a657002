//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cyclesum_core::autodiff::Tensor;
use cyclesum_core::data::generate_synthetic;
use cyclesum_core::{SynthSpec, VideoRecord};

/// Uniform values in `[-scale, scale)`.
pub fn uniform(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("valid shape")
}

/// One video of the default planted benchmark (k = 96, d = 32).
pub fn benchmark_video() -> VideoRecord {
    generate_synthetic(&SynthSpec { n_videos: 1, ..SynthSpec::default() })
        .expect("default spec is valid")
        .remove(0)
}

/// Random knapsack instance: `(scores, lengths, capacity)`.
pub fn knapsack_instance(shots: usize, seed: u64) -> (Vec<f64>, Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..shots).map(|_| rng.gen_range(0.0..1.0)).collect();
    let lengths: Vec<usize> = (0..shots).map(|_| rng.gen_range(2..40)).collect();
    let capacity = lengths.iter().sum::<usize>() * 15 / 100;
    (scores, lengths, capacity)
}
