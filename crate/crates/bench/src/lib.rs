//! Shared inputs for the kernel benchmarks in `benches/`.

use sobelkey::image::{GrayImage, Plane};
use sobelkey::synth::synth_image;
use sobelkey::tensor::Tensor;

/// Synthetic benchmark scene of `size x size` pixels.
pub fn scene(size: usize) -> GrayImage {
    synth_image(size, size, 0xbe7c, 0).expect("synthetic scene")
}

/// Deterministic pseudo-random values in [-1, 1].
pub fn wobble(n: usize, salt: u32) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let x = (i as u32).wrapping_mul(2_654_435_761).wrapping_add(salt.wrapping_mul(40_503));
            (x >> 8) as f32 / (1u32 << 23) as f32 - 1.0
        })
        .collect()
}

pub fn tensor(shape: &[usize], salt: u32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), wobble(n, salt)).expect("tensor shape")
}

/// Non-negative score map with many local maxima.
pub fn score_map(size: usize) -> Plane {
    let v = wobble(size * size, 7);
    Plane::new(size, size, v.into_iter().map(|x| x.max(0.0)).collect()).expect("plane")
}
