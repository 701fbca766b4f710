//! Image quality metrics and JND thresholds.

use crate::codec::types::ImageTensor;
use crate::error::Result;
use crate::losses::distortion::{distortion, msssim_metric, DistortionFamily};
use crate::metrics::rd::{JndLabel, QualityMetric};

/// Peak signal-to-noise ratio in dB for unit-peak images. Defined as
/// -10 log10(mse) so the psnr/mse consistency identity is exact; a zero
/// error yields the +inf sentinel.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let mse = distortion(a, b, DistortionFamily::Mse)?;
    Ok(-10.0 * mse.log10())
}

/// The quality a pair must reach to look like its JND-quality version:
/// the chosen metric evaluated between the original and the JND image.
pub fn jnd_quality_of_pair(
    x_o: &ImageTensor,
    x_j: &ImageTensor,
    metric: QualityMetric,
    image_id: &str,
) -> Result<JndLabel> {
    let value = match metric {
        QualityMetric::Psnr => psnr(x_o, x_j)?,
        QualityMetric::Msssim => msssim_metric(x_o, x_j)?,
    };
    let degenerate = match metric {
        QualityMetric::Psnr => value.is_infinite(),
        QualityMetric::Msssim => value >= 1.0,
    };
    if degenerate {
        log::warn!("image '{image_id}': JND pair is identical, threshold is degenerate");
    }
    Ok(JndLabel {
        image_id: image_id.to_string(),
        metric,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(Tensor::rand_uniform(&[1, 3, h, w], 0.5, &mut rng).map(|v| v + 0.5))
            .unwrap()
    }

    #[test]
    fn identical_images_have_infinite_psnr() {
        let x = random_image(8, 8, 1);
        assert!(psnr(&x, &x).unwrap().is_infinite());
    }

    #[test]
    fn psnr_log_arithmetic() {
        // mse 0.01 -> 20 dB, mse 1.0 -> 0 dB
        let a = ImageTensor::constant(8, 8, 0.0);
        let b = ImageTensor::constant(8, 8, 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = ImageTensor::constant(8, 8, 1.0);
        assert!(psnr(&a, &c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn psnr_mse_consistency_exact() {
        let a = random_image(16, 16, 2);
        let b = random_image(16, 16, 3);
        let p = psnr(&a, &b).unwrap();
        let mse = distortion(&a, &b, DistortionFamily::Mse).unwrap();
        assert_eq!(p, -10.0 * mse.log10());
    }

    #[test]
    fn jnd_threshold_from_known_mse() {
        // mse 0.001 -> 30 dB threshold
        let a = ImageTensor::constant(8, 8, 0.2);
        let delta = 0.001f64.sqrt();
        let b = ImageTensor::constant(8, 8, 0.2 + delta);
        let label = jnd_quality_of_pair(&a, &b, QualityMetric::Psnr, "x").unwrap();
        assert!((label.value - 30.0).abs() < 1e-6);
        assert_eq!(label.metric, QualityMetric::Psnr);
    }

    #[test]
    fn degenerate_pair_flags_infinite_threshold() {
        let a = random_image(16, 16, 4);
        let label = jnd_quality_of_pair(&a, &a, QualityMetric::Psnr, "x").unwrap();
        assert!(label.value.is_infinite());
        let label2 = jnd_quality_of_pair(&a, &a, QualityMetric::Msssim, "x").unwrap();
        assert_eq!(label2.value, 1.0);
    }
}
