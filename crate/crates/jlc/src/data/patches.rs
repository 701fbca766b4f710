//! Aligned random patch extraction.
//!
//! The same crop window is applied to x_o and x_j — the alignment is what
//! makes the JND losses meaningful. Offsets come from a seeded generator
//! keyed by (spec seed, image id), so the emitted stream is a pure function
//! of manifests and seeds regardless of load order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::SamplePair;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub patches_per_image: usize,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: 64,
            patches_per_image: 1,
            seed: 0,
        }
    }
}

impl PatchSpec {
    /// Patch size must stay divisible by the codec's downsampling factor.
    pub fn validate(&self, downsampling: usize) -> Result<()> {
        if self.size == 0 || self.patches_per_image == 0 {
            return Err(Error::Argument("patch size and count must be positive".into()));
        }
        if self.size % downsampling != 0 {
            return Err(Error::Argument(format!(
                "patch size {} is not divisible by downsampling factor {downsampling}",
                self.size
            )));
        }
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Identical seeded crop windows on both images of the pair. Images smaller
/// than the patch are skipped with a warning (empty result).
pub fn extract_aligned_patches(pair: &SamplePair, spec: &PatchSpec) -> Vec<SamplePair> {
    let (_, _, h, w) = pair.x_o.dims();
    if h < spec.size || w < spec.size {
        log::warn!(
            "image '{}' ({h}x{w}) smaller than patch size {}; skipped",
            pair.image_id,
            spec.size
        );
        return Vec::new();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(crate::util::derive_seed(spec.seed, 0x70617463, fnv1a(&pair.image_id)));
    (0..spec.patches_per_image)
        .map(|i| {
            let y0 = rng.gen_range(0..=h - spec.size);
            let x0 = rng.gen_range(0..=w - spec.size);
            SamplePair {
                x_o: pair.x_o.crop(y0, x0, spec.size, spec.size).expect("offset in range"),
                x_j: pair.x_j.crop(y0, x0, spec.size, spec.size).expect("offset in range"),
                source: pair.source,
                image_id: format!("{}#p{i}", pair.image_id),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::types::ImageTensor;
    use crate::data::manifest::SourceKind;
    use crate::tensor::Tensor;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        let mut t = Tensor::zeros(&[1, 3, h, w]);
        {
            let d = t.data_mut();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        d[(c * h + y) * w + x] = ((y * w + x) % 97) as f64 / 97.0;
                    }
                }
            }
        }
        ImageTensor::new(t).unwrap()
    }

    #[test]
    fn windows_are_aligned_via_marker_pixel() {
        // plant a marker in x_o only; the same location in every patch pair
        // must show the marker offset consistently
        let x_o = gradient_image(40, 40);
        let mut marked = x_o.tensor().clone();
        marked.data_mut()[5 * 40 + 7] = 1.0; // channel 0, y=5, x=7
        let x_j = ImageTensor::new(marked).unwrap();
        let pair =
            SamplePair::new(x_o, x_j, SourceKind::JndLabeled, "m".into()).unwrap();
        let spec = PatchSpec {
            size: 16,
            patches_per_image: 8,
            seed: 3,
        };
        for p in extract_aligned_patches(&pair, &spec) {
            let diff: Vec<usize> = p
                .x_o
                .tensor()
                .data()
                .iter()
                .zip(p.x_j.tensor().data())
                .enumerate()
                .filter(|(_, (a, b))| a != b)
                .map(|(i, _)| i)
                .collect();
            // either the marker is outside this window (no diffs) or it is
            // the single differing element in both crops
            assert!(diff.len() <= 1, "windows misaligned: {} diffs", diff.len());
        }
    }

    #[test]
    fn patch_shapes_and_count() {
        let img = gradient_image(512 / 4, 512 / 4); // 128x128 keeps the test fast
        let pair = SamplePair::proxy(img, "big".into());
        let spec = PatchSpec {
            size: 64,
            patches_per_image: 4,
            seed: 0,
        };
        let patches = extract_aligned_patches(&pair, &spec);
        assert_eq!(patches.len(), 4);
        for p in &patches {
            assert_eq!(p.x_o.dims(), (1, 3, 64, 64));
            assert_eq!(p.x_o.tensor(), p.x_j.tensor());
        }
    }

    #[test]
    fn undersized_image_yields_empty() {
        let pair = SamplePair::proxy(gradient_image(100, 100), "small".into());
        let spec = PatchSpec {
            size: 256,
            patches_per_image: 2,
            seed: 0,
        };
        assert!(extract_aligned_patches(&pair, &spec).is_empty());
    }

    #[test]
    fn offsets_are_deterministic_per_seed_and_id() {
        let pair = SamplePair::proxy(gradient_image(64, 64), "det".into());
        let spec = PatchSpec {
            size: 32,
            patches_per_image: 3,
            seed: 9,
        };
        let a = extract_aligned_patches(&pair, &spec);
        let b = extract_aligned_patches(&pair, &spec);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.x_o.tensor(), pb.x_o.tensor());
        }
        let other = PatchSpec { seed: 10, ..spec };
        let c = extract_aligned_patches(&pair, &other);
        assert!(a.iter().zip(&c).any(|(pa, pc)| pa.x_o.tensor() != pc.x_o.tensor()));
    }

    #[test]
    fn patch_spec_validates_divisibility() {
        let spec = PatchSpec {
            size: 60,
            patches_per_image: 1,
            seed: 0,
        };
        assert!(spec.validate(8).is_err());
        assert!(spec.validate(4).is_ok());
    }
}
