//! Synthetic test images.
//!
//! Deterministic textured images for examples, smoke tests and toy
//! datasets: a smooth gradient plus sinusoidal texture and a faint
//! checkerboard, so block transforms and entropy models have structure
//! to work with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::types::ImageTensor;
use crate::data::manifest::SamplePair;
use crate::tensor::Tensor;

/// One deterministic textured RGB image.
pub fn textured_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx = rng.gen_range(0.1..0.9);
    let fy = rng.gen_range(0.1..0.9);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    {
        let d = t.data_mut();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let g = 0.5 * (x as f64 / w.max(1) as f64 + y as f64 / h.max(1) as f64) / 2.0
                        + 0.25;
                    let tex = 0.22 * ((x as f64 * fx + phase).sin() * (y as f64 * fy).cos());
                    let chk = if (x / 4 + y / 4) % 2 == 0 { 0.06 } else { -0.06 };
                    d[(c * h + y) * w + x] =
                        (g + tex + chk + c as f64 * 0.03).clamp(0.0, 1.0);
                }
            }
        }
    }
    ImageTensor::new(t).expect("synthetic image is valid")
}

/// A list of unlabeled proxy pairs over distinct textured images.
pub fn toy_pairs(n: usize, hw: usize, seed: u64) -> Vec<SamplePair> {
    (0..n)
        .map(|i| {
            SamplePair::proxy(
                textured_image(hw, hw, seed.wrapping_add(i as u64)),
                format!("toy{i}"),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textures_are_deterministic_and_distinct() {
        let a = textured_image(16, 16, 1);
        let b = textured_image(16, 16, 1);
        let c = textured_image(16, 16, 2);
        assert_eq!(a.tensor(), b.tensor());
        assert_ne!(a.tensor(), c.tensor());
    }

    #[test]
    fn toy_pairs_are_proxies() {
        let pairs = toy_pairs(3, 8, 0);
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_eq!(p.x_o.tensor(), p.x_j.tensor());
        }
    }
}
