//! Distortion families: MSE and 1 - MS-SSIM.
//!
//! MS-SSIM uses the standard 5-scale weights, an 11x11 Gaussian window with
//! sigma 1.5 and valid-window convolution. When an image cannot support the
//! requested scale count the scale count is reduced and the weights are
//! renormalized; below one scale (min dim < 11) the metric is undefined and
//! an argument error names the minimum.

use serde::{Deserialize, Serialize};

use crate::codec::types::ImageTensor;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionFamily {
    Mse,
    #[serde(alias = "msssim")]
    OneMinusMsssim,
}

impl std::fmt::Display for DistortionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistortionFamily::Mse => write!(f, "mse"),
            DistortionFamily::OneMinusMsssim => write!(f, "msssim"),
        }
    }
}

pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const MSSSIM_WINDOW: usize = 11;
pub const MSSSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
// guard against zero bases before the fractional-power weighting
const POW_FLOOR: f64 = 1e-6;

/// Mean squared error over all elements, as a graph node.
pub fn mse_g(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d2 = g.mul(d, d);
    g.mean(d2)
}

/// Largest usable scale count (<= 5) for a given spatial size.
pub fn feasible_scales(h: usize, w: usize) -> usize {
    let mut dim = h.min(w);
    let mut scales = 0;
    while scales < MSSSIM_WEIGHTS.len() && dim >= MSSSIM_WINDOW {
        scales += 1;
        dim /= 2;
    }
    scales
}

/// Minimum spatial size required for a scale count.
pub fn min_size_for_scales(scales: usize) -> usize {
    MSSSIM_WINDOW << (scales - 1)
}

fn gaussian_kernel_1d() -> Vec<f64> {
    let c = (MSSSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..MSSSIM_WINDOW)
        .map(|i| (-((i as f64 - c) * (i as f64 - c)) / (2.0 * MSSSIM_SIGMA * MSSSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Depthwise valid Gaussian blur via two separable passes.
fn blur(g: &mut Graph, x: Var, kh: Var, kv: Var, channels: usize) -> Var {
    let a = g.conv2d(x, kh, None, 1, 0, channels);
    g.conv2d(a, kv, None, 1, 0, channels)
}

/// MS-SSIM between two `[b, c, h, w]` tensors at an explicit scale count.
/// Fully differentiable in both inputs.
pub fn msssim_g(g: &mut Graph, a: Var, b: Var, scales: usize) -> Result<Var> {
    let (_, c, h, w) = g.value(a).dims4();
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "msssim inputs differ: {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    if scales == 0 || scales > MSSSIM_WEIGHTS.len() {
        return Err(Error::Argument(format!(
            "scale count must be in 1..={}, got {scales}",
            MSSSIM_WEIGHTS.len()
        )));
    }
    let needed = min_size_for_scales(scales);
    if h.min(w) < needed {
        return Err(Error::Argument(format!(
            "image {h}x{w} too small for {scales} MS-SSIM scales; minimum dimension is {needed}"
        )));
    }

    let k1d = gaussian_kernel_1d();
    let mut horiz = Tensor::zeros(&[c, 1, 1, MSSSIM_WINDOW]);
    let mut vert = Tensor::zeros(&[c, 1, MSSSIM_WINDOW, 1]);
    for ci in 0..c {
        for (i, &kv) in k1d.iter().enumerate() {
            horiz.data_mut()[ci * MSSSIM_WINDOW + i] = kv;
            vert.data_mut()[ci * MSSSIM_WINDOW + i] = kv;
        }
    }
    let kh = g.constant(horiz);
    let kv = g.constant(vert);

    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let wsum: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();

    let mut x = a;
    let mut y = b;
    let mut acc: Option<Var> = None;
    for s in 0..scales {
        let mu_x = blur(g, x, kh, kv, c);
        let mu_y = blur(g, y, kh, kv, c);
        let mu_xx = g.mul(mu_x, mu_x);
        let mu_yy = g.mul(mu_y, mu_y);
        let mu_xy = g.mul(mu_x, mu_y);

        let xx = g.mul(x, x);
        let yy = g.mul(y, y);
        let xy = g.mul(x, y);
        let exx = blur(g, xx, kh, kv, c);
        let eyy = blur(g, yy, kh, kv, c);
        let exy = blur(g, xy, kh, kv, c);
        let var_x = g.sub(exx, mu_xx);
        let var_y = g.sub(eyy, mu_yy);
        let cov = g.sub(exy, mu_xy);

        let cov2 = g.mul_scalar(cov, 2.0);
        let cs_num = g.add_scalar(cov2, c2);
        let var_sum = g.add(var_x, var_y);
        let cs_den = g.add_scalar(var_sum, c2);
        let cs = g.div(cs_num, cs_den);

        let weight = MSSSIM_WEIGHTS[s] / wsum;
        let factor = if s + 1 == scales {
            let l_num0 = g.mul_scalar(mu_xy, 2.0);
            let l_num = g.add_scalar(l_num0, c1);
            let mu_sq = g.add(mu_xx, mu_yy);
            let l_den = g.add_scalar(mu_sq, c1);
            let l = g.div(l_num, l_den);
            let ssim = g.mul(l, cs);
            g.mean(ssim)
        } else {
            g.mean(cs)
        };
        let safe = g.clamp_min(factor, POW_FLOOR);
        let powed = g.powf(safe, weight);
        acc = Some(match acc {
            None => powed,
            Some(prev) => g.mul(prev, powed),
        });

        if s + 1 < scales {
            x = g.avg_pool2(x);
            y = g.avg_pool2(y);
        }
    }
    Ok(acc.expect("at least one scale"))
}

/// Distortion as a graph node: `mse` or `1 - msssim` (scales auto-reduced).
pub fn distortion_g(g: &mut Graph, a: Var, b: Var, family: DistortionFamily) -> Result<Var> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "distortion inputs differ: {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    match family {
        DistortionFamily::Mse => Ok(mse_g(g, a, b)),
        DistortionFamily::OneMinusMsssim => {
            let (_, _, h, w) = g.value(a).dims4();
            let scales = feasible_scales(h, w);
            if scales == 0 {
                return Err(Error::Argument(format!(
                    "image {h}x{w} too small for MS-SSIM; minimum dimension is {MSSSIM_WINDOW}"
                )));
            }
            if scales < MSSSIM_WEIGHTS.len() {
                log::debug!("ms-ssim reduced to {scales} scales for {h}x{w} input");
            }
            let m = msssim_g(g, a, b, scales)?;
            let neg = g.mul_scalar(m, -1.0);
            Ok(g.add_scalar(neg, 1.0))
        }
    }
}

/// Scalar distortion between two images (shared implementation with the
/// graph path: this runs the same graph forward-only).
pub fn distortion(a: &ImageTensor, b: &ImageTensor, family: DistortionFamily) -> Result<f64> {
    let mut g = Graph::new();
    let av = g.constant(a.tensor().clone());
    let bv = g.constant(b.tensor().clone());
    let d = distortion_g(&mut g, av, bv, family)?;
    Ok(g.value(d).item())
}

/// MS-SSIM similarity in [0, 1] (1 = identical).
pub fn msssim_metric(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    Ok(1.0 - distortion(a, b, DistortionFamily::OneMinusMsssim)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::rand_uniform(&[1, 3, h, w], 0.5, &mut rng).map(|v| v + 0.5);
        ImageTensor::new(t).unwrap()
    }

    #[test]
    fn mse_identity_is_zero() {
        let x = random_image(16, 16, 1);
        assert_eq!(distortion(&x, &x, DistortionFamily::Mse).unwrap(), 0.0);
    }

    #[test]
    fn mse_constant_images() {
        let a = ImageTensor::constant(8, 8, 0.0);
        let b = ImageTensor::constant(8, 8, 0.5);
        let d = distortion(&a, &b, DistortionFamily::Mse).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn msssim_identity_is_one() {
        let x = random_image(48, 48, 2);
        let m = msssim_metric(&x, &x).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(
            distortion(&x, &x, DistortionFamily::OneMinusMsssim).unwrap(),
            0.0
        );
    }

    #[test]
    fn msssim_is_symmetric() {
        let a = random_image(32, 32, 3);
        let b = random_image(32, 32, 4);
        let m1 = msssim_metric(&a, &b).unwrap();
        let m2 = msssim_metric(&b, &a).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn msssim_below_one_for_perturbed_image() {
        // random perturbation oracle: any visible change must reduce MS-SSIM
        let a = random_image(32, 32, 5);
        let mut t = a.tensor().clone();
        for i in (0..t.numel()).step_by(7) {
            t.data_mut()[i] = (t.data()[i] + 0.3).min(1.0);
        }
        let b = ImageTensor::new(t).unwrap();
        let m = msssim_metric(&a, &b).unwrap();
        assert!(m < 1.0);
        assert!(m > 0.0);
    }

    #[test]
    fn scale_count_adapts_to_size() {
        assert_eq!(feasible_scales(16, 16), 1);
        assert_eq!(feasible_scales(48, 48), 3);
        assert_eq!(feasible_scales(176, 176), 5);
        assert_eq!(feasible_scales(10, 300), 0);
    }

    #[test]
    fn too_small_image_names_minimum() {
        let a = random_image(8, 8, 6);
        let err = distortion(&a, &a, DistortionFamily::OneMinusMsssim).unwrap_err();
        match err {
            Error::Argument(m) => assert!(m.contains("11"), "message: {m}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn explicit_scales_rejects_undersized() {
        let a = random_image(32, 32, 7);
        let mut g = Graph::new();
        let av = g.constant(a.tensor().clone());
        let err = msssim_g(&mut g, av, av, 3).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = random_image(16, 16, 8);
        let b = random_image(16, 32, 9);
        assert!(matches!(
            distortion(&a, &b, DistortionFamily::Mse),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn msssim_gradient_matches_finite_differences() {
        let a = random_image(16, 16, 10);
        let b = random_image(16, 16, 11);

        let eval = |t: &Tensor| {
            let mut g = Graph::new();
            let av = g.constant(a.tensor().clone());
            let bv = g.constant(t.clone());
            let d = distortion_g(&mut g, av, bv, DistortionFamily::OneMinusMsssim).unwrap();
            g.value(d).item()
        };

        let mut g = Graph::new();
        let av = g.constant(a.tensor().clone());
        let bv = g.leaf(b.tensor().clone());
        let d = distortion_g(&mut g, av, bv, DistortionFamily::OneMinusMsssim).unwrap();
        let grads = g.backward(d);
        let analytic = grads.wrt(bv);

        let h = 1e-4;
        for &i in &[0usize, 17, 100, 383, 555, 767] {
            let mut tp = b.tensor().clone();
            tp.data_mut()[i] += h;
            let mut tm = b.tensor().clone();
            tm.data_mut()[i] -= h;
            let fd = (eval(&tp) - eval(&tm)) / (2.0 * h);
            let an = analytic.data()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!(
                ((fd - an) / denom).abs() < 1e-3,
                "index {i}: fd={fd} analytic={an}"
            );
        }
    }
}
