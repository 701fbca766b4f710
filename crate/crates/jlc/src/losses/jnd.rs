//! The four distortion definitions and the RD objective.
//!
//! All variants route images the same way: x_o is the pristine original,
//! x_j the JND-quality image, x_hat the reconstruction. Only x_hat carries
//! gradients; x_o and x_j are data.

use serde::{Deserialize, Serialize};

use crate::codec::types::ImageTensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::distortion::{distortion, distortion_g, mse_g, DistortionFamily};
use crate::losses::features::FeatureExtractor;

/// Lagrange multipliers used in the original six-level training protocol.
pub const PAPER_LAMBDAS_MSE: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483];
pub const PAPER_LAMBDAS_MSSSIM: [f64; 6] = [2.40, 4.58, 8.73, 16.64, 31.73, 60.50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Baseline,
    Pwl,
    Iwl,
    Fwl,
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossVariant::Baseline => "baseline",
            LossVariant::Pwl => "pwl",
            LossVariant::Iwl => "iwl",
            LossVariant::Fwl => "fwl",
        };
        write!(f, "{s}")
    }
}

/// Loss selection for one training run. Serializes to the plain-text config
/// format and is embedded verbatim in checkpoints for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub family: DistortionFamily,
    pub lambda: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub iwl_clamp: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_extractor_id: Option<String>,
    /// Family of the FWL pixel term. Both Eq.-style FWL terms default to
    /// MSE; this override lets an MS-SSIM-trained run use its own family
    /// for the pixel term instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwl_pixel_family: Option<DistortionFamily>,
}

fn default_omega() -> f64 {
    0.5
}

impl LossConfig {
    pub fn new(variant: LossVariant, family: DistortionFamily, lambda: f64) -> Self {
        LossConfig {
            variant,
            family,
            lambda,
            omega: default_omega(),
            iwl_clamp: false,
            feature_extractor_id: None,
            fwl_pixel_family: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Argument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Argument(format!(
                "omega must be in [0, 1], got {}",
                self.omega
            )));
        }
        match self.variant {
            LossVariant::Fwl => {
                if self.feature_extractor_id.is_none() {
                    return Err(Error::Config(
                        "fwl requires a feature_extractor_id".into(),
                    ));
                }
            }
            _ => {
                if self.feature_extractor_id.is_some() {
                    return Err(Error::Config(format!(
                        "variant {} must not reference a feature extractor",
                        self.variant
                    )));
                }
                if self.fwl_pixel_family.is_some() {
                    return Err(Error::Config(
                        "fwl_pixel_family only applies to the fwl variant".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Method label used in RD results, e.g. "iwl-mse".
    pub fn method_id(&self) -> String {
        format!("{}-{}", self.variant, self.family)
    }

    /// Family of FWL's pixel term (MSE unless overridden).
    pub fn fwl_pixel(&self) -> DistortionFamily {
        self.fwl_pixel_family.unwrap_or(DistortionFamily::Mse)
    }
}

/// Pixel-wise JND loss: distortion against the JND-quality image.
/// The original image is deliberately not an argument.
pub fn loss_pwl_g(g: &mut Graph, x_j: Var, x_hat: Var, family: DistortionFamily) -> Result<Var> {
    distortion_g(g, x_j, x_hat, family)
}

pub fn loss_pwl(x_j: &ImageTensor, x_hat: &ImageTensor, family: DistortionFamily) -> Result<f64> {
    distortion(x_j, x_hat, family)
}

/// Image-wise JND loss: baseline distortion minus the (constant) distortion
/// of the JND-quality image itself. `jnd_level` must be
/// `distortion(x_o, x_j, family)`, treated as a constant so the gradient
/// w.r.t. x_hat equals the baseline gradient exactly.
pub fn loss_iwl_g(
    g: &mut Graph,
    x_o: Var,
    x_hat: Var,
    jnd_level: f64,
    family: DistortionFamily,
    clamp: bool,
) -> Result<Var> {
    let base = distortion_g(g, x_o, x_hat, family)?;
    let shifted = g.add_scalar(base, -jnd_level);
    Ok(if clamp {
        g.clamp_min(shifted, 0.0)
    } else {
        shifted
    })
}

pub fn loss_iwl(
    x_o: &ImageTensor,
    x_j: &ImageTensor,
    x_hat: &ImageTensor,
    family: DistortionFamily,
    clamp: bool,
) -> Result<f64> {
    let jnd_level = distortion(x_o, x_j, family)?;
    let v = distortion(x_o, x_hat, family)? - jnd_level;
    Ok(if clamp { v.max(0.0) } else { v })
}

/// Feature-wise JND loss:
/// omega * d(x_o, x_hat) + (1 - omega) * mean over taps of MSE(F(x_hat), F(x_j)).
/// Both terms are MSE unless `pixel_family` overrides the pixel term.
pub fn loss_fwl_g(
    g: &mut Graph,
    x_o: Var,
    x_j: Var,
    x_hat: Var,
    omega: f64,
    extractor: &FeatureExtractor,
    pixel_family: DistortionFamily,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Argument(format!("omega must be in [0, 1], got {omega}")));
    }
    let pixel = distortion_g(g, x_o, x_hat, pixel_family)?;

    let taps_hat = extractor.forward_g(g, x_hat);
    let taps_j = extractor.forward_g(g, x_j);
    let mut feat_sum: Option<Var> = None;
    for (th, tj) in taps_hat.iter().zip(&taps_j) {
        let m = mse_g(g, *th, *tj);
        feat_sum = Some(match feat_sum {
            None => m,
            Some(prev) => g.add(prev, m),
        });
    }
    let feat_total = feat_sum.expect("extractor has at least one tap");
    let feat = g.mul_scalar(feat_total, 1.0 / extractor.tap_count() as f64);

    let wp = g.mul_scalar(pixel, omega);
    let wf = g.mul_scalar(feat, 1.0 - omega);
    Ok(g.add(wp, wf))
}

pub fn loss_fwl(
    x_o: &ImageTensor,
    x_j: &ImageTensor,
    x_hat: &ImageTensor,
    omega: f64,
    extractor: &FeatureExtractor,
) -> Result<f64> {
    let mut g = Graph::new();
    let o = g.constant(x_o.tensor().clone());
    let j = g.constant(x_j.tensor().clone());
    let h = g.constant(x_hat.tensor().clone());
    let v = loss_fwl_g(&mut g, o, j, h, omega, extractor, DistortionFamily::Mse)?;
    Ok(g.value(v).item())
}

/// Rate-distortion objective: rate + lambda * distortion.
pub fn rd_loss(rate_bpp: f64, d: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    Ok(rate_bpp + lambda * d)
}

pub fn rd_loss_g(g: &mut Graph, rate: Var, d: Var, lambda: f64) -> Result<Var> {
    if !(lambda > 0.0) {
        return Err(Error::Argument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let wd = g.mul_scalar(d, lambda);
    Ok(g.add(rate, wd))
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
    fn pwl_identity_and_definition() {
        let x_j = random_image(16, 16, 1);
        let x_o = random_image(16, 16, 2);
        assert_eq!(loss_pwl(&x_j, &x_j, DistortionFamily::Mse).unwrap(), 0.0);
        let d = loss_pwl(&x_j, &x_o, DistortionFamily::Mse).unwrap();
        let direct = distortion(&x_j, &x_o, DistortionFamily::Mse).unwrap();
        assert_eq!(d, direct);
        assert!(d > 0.0);
    }

    #[test]
    fn iwl_cancellation_points() {
        let x_o = random_image(16, 16, 3);
        let x_j = random_image(16, 16, 4);
        // x_hat = x_j: the two terms cancel exactly
        assert_eq!(
            loss_iwl(&x_o, &x_j, &x_j, DistortionFamily::Mse, false).unwrap(),
            0.0
        );
        // x_hat = x_o: first term vanishes
        let v = loss_iwl(&x_o, &x_j, &x_o, DistortionFamily::Mse, false).unwrap();
        let jnd = distortion(&x_o, &x_j, DistortionFamily::Mse).unwrap();
        assert_eq!(v, -jnd);
        assert!(v <= 0.0);
        // clamped variant floors at zero
        assert_eq!(
            loss_iwl(&x_o, &x_j, &x_o, DistortionFamily::Mse, true).unwrap(),
            0.0
        );
    }

    #[test]
    fn pwl_and_iwl_reduce_to_baseline_on_proxy_pairs() {
        let x_o = random_image(16, 16, 5);
        let x_hat = random_image(16, 16, 6);
        for family in [DistortionFamily::Mse, DistortionFamily::OneMinusMsssim] {
            let baseline = distortion(&x_o, &x_hat, family).unwrap();
            let pwl = loss_pwl(&x_o, &x_hat, family).unwrap();
            let iwl = loss_iwl(&x_o, &x_o, &x_hat, family, false).unwrap();
            assert_eq!(pwl, baseline);
            assert!((iwl - baseline).abs() <= 1e-12 * baseline.abs().max(1.0));
        }
    }

    #[test]
    fn fwl_endpoint_identities() {
        let f = FeatureExtractor::seeded_random(9);
        let x_o = random_image(16, 16, 7);
        let x_j = random_image(16, 16, 8);
        let x_hat = random_image(16, 16, 9);

        // omega = 1: exactly the pixel MSE
        let v1 = loss_fwl(&x_o, &x_j, &x_hat, 1.0, &f).unwrap();
        let mse = distortion(&x_o, &x_hat, DistortionFamily::Mse).unwrap();
        assert_eq!(v1, mse);

        // omega = 0 and x_hat = x_j: features identical, loss zero
        let v0 = loss_fwl(&x_o, &x_j, &x_j, 0.0, &f).unwrap();
        assert_eq!(v0, 0.0);

        // all three equal: both terms vanish at any omega
        let vh = loss_fwl(&x_o, &x_o, &x_o, 0.5, &f).unwrap();
        assert_eq!(vh, 0.0);
    }

    #[test]
    fn fwl_is_nonnegative() {
        let f = FeatureExtractor::seeded_random(1);
        for seed in 0..5 {
            let a = random_image(16, 16, 100 + seed);
            let b = random_image(16, 16, 200 + seed);
            let c = random_image(16, 16, 300 + seed);
            assert!(loss_fwl(&a, &b, &c, 0.3, &f).unwrap() >= 0.0);
        }
    }

    #[test]
    fn rd_loss_arithmetic() {
        assert_eq!(rd_loss(1.0, 0.0, 0.0067).unwrap(), 1.0);
        assert_eq!(rd_loss(0.0, 2.0, 0.5).unwrap(), 1.0);
        assert!(matches!(rd_loss(1.0, 1.0, 0.0), Err(Error::Argument(_))));
        assert!(matches!(rd_loss(1.0, 1.0, -2.0), Err(Error::Argument(_))));
    }

    #[test]
    fn rd_loss_lambda_scaling() {
        let (r, d) = (0.73, 0.041);
        for lambda in PAPER_LAMBDAS_MSE {
            let a = rd_loss(r, d, 2.0 * lambda).unwrap();
            let b = rd_loss(r, d, lambda).unwrap();
            // algebraically lambda * d; floating point leaves a few ulps
            assert!((a - b - lambda * d).abs() <= 4.0 * f64::EPSILON * (r + d));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig::new(LossVariant::Fwl, DistortionFamily::Mse, 0.01);
        assert!(cfg.validate().is_err()); // missing extractor
        cfg.feature_extractor_id = Some("seeded_random:1".into());
        cfg.validate().unwrap();

        let mut base = LossConfig::new(LossVariant::Baseline, DistortionFamily::Mse, 0.01);
        base.feature_extractor_id = Some("seeded_random:1".into());
        assert!(base.validate().is_err()); // must not reference one

        let mut bad_omega = LossConfig::new(LossVariant::Pwl, DistortionFamily::Mse, 0.01);
        bad_omega.omega = 1.5;
        assert!(bad_omega.validate().is_err());

        let zero_lambda = LossConfig::new(LossVariant::Iwl, DistortionFamily::Mse, 0.0);
        assert!(zero_lambda.validate().is_err());
    }

    #[test]
    fn method_ids() {
        assert_eq!(
            LossConfig::new(LossVariant::Iwl, DistortionFamily::OneMinusMsssim, 2.4).method_id(),
            "iwl-msssim"
        );
        assert_eq!(
            LossConfig::new(LossVariant::Baseline, DistortionFamily::Mse, 0.01).method_id(),
            "baseline-mse"
        );
    }

    #[test]
    fn iwl_gradient_equals_baseline_gradient_exactly() {
        let x_o = random_image(12, 12, 10);
        let x_j = random_image(12, 12, 11);
        let x_hat = random_image(12, 12, 12);
        let jnd = distortion(&x_o, &x_j, DistortionFamily::Mse).unwrap();

        let mut g1 = Graph::new();
        let o1 = g1.constant(x_o.tensor().clone());
        let h1 = g1.leaf(x_hat.tensor().clone());
        let iwl = loss_iwl_g(&mut g1, o1, h1, jnd, DistortionFamily::Mse, false).unwrap();
        let gi = g1.backward(iwl);

        let mut g2 = Graph::new();
        let o2 = g2.constant(x_o.tensor().clone());
        let h2 = g2.leaf(x_hat.tensor().clone());
        let base = distortion_g(&mut g2, o2, h2, DistortionFamily::Mse).unwrap();
        let gb = g2.backward(base);

        assert_eq!(gi.wrt(h1), gb.wrt(h2));
    }
}
