//! Inputs shared by the benchmarks.

use dtp_core::{Image, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).expect("shape matches data")
}

/// Smooth gradient with a seeded texture, values in `[0, 1]`.
pub fn test_image(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let base = [x as f64 / size as f64, y as f64 / size as f64, 0.5];
            for b in base {
                px.push((0.8 * b + 0.2 * rng.random_range(0.0..1.0)).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(size, size, px).expect("pixels in range")
}
