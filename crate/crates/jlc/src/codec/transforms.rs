//! Analysis and synthesis transforms.
//!
//! `*_g` functions build the differentiable graph used in training; the
//! plain functions run the same graph forward-only and wrap the result in
//! the domain types.

use crate::codec::arch::{BoundCodec, BoundGdn, CodecParams, Nonlinearity, LEAKY_SLOPE};
use crate::codec::types::{ImageTensor, LatentTensor, QuantizeMode, QuantizedLatent};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

const GDN_BETA_FLOOR: f64 = 1e-6;

/// Divisive normalization: x / sqrt(beta + gamma * x^2), or its inverse
/// (multiply) on the synthesis side.
fn gdn_g(g: &mut Graph, x: Var, nl: &BoundGdn, inverse: bool) -> Var {
    let beta = g.softplus(nl.beta_raw);
    let beta = g.add_scalar(beta, GDN_BETA_FLOOR);
    let gamma = g.softplus(nl.gamma_raw);
    let x2 = g.mul(x, x);
    let weighted = g.mul_channel(x2, gamma);
    let shifted = g.add_channel(weighted, beta);
    let den = g.sqrt(shifted);
    if inverse {
        g.mul(x, den)
    } else {
        g.div(x, den)
    }
}

fn nonlin_analysis(g: &mut Graph, x: Var, bound: &BoundCodec, stage: usize) -> Var {
    match bound.nonlinearity {
        Nonlinearity::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        Nonlinearity::Gdn => gdn_g(g, x, &bound.analysis_nl[stage], false),
    }
}

fn nonlin_synthesis(g: &mut Graph, x: Var, bound: &BoundCodec, stage: usize) -> Var {
    match bound.nonlinearity {
        Nonlinearity::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        Nonlinearity::Gdn => gdn_g(g, x, &bound.synthesis_nl[stage], true),
    }
}

/// Strided conv stack mapping an image to its latent, with a per-channel
/// output gain (the learnable quantization step).
pub fn analyze_g(g: &mut Graph, x: Var, bound: &BoundCodec) -> Var {
    let pad = bound.kernel_size / 2;
    let stages = bound.analysis.len();
    let mut cur = x;
    for (i, layer) in bound.analysis.iter().enumerate() {
        cur = g.conv2d(cur, layer.weight, Some(layer.bias), 2, pad, 1);
        if i + 1 < stages {
            cur = nonlin_analysis(g, cur, bound, i);
        }
    }
    g.mul_channel(cur, bound.analysis_gain)
}

/// Mirrored transposed-conv stack mapping a quantized latent back to image
/// space. The output is *not* clamped; callers clamp at their boundary.
pub fn synthesize_g(g: &mut Graph, y: Var, bound: &BoundCodec) -> Var {
    let pad = bound.kernel_size / 2;
    let stages = bound.synthesis.len();
    let mut cur = g.mul_channel(y, bound.synthesis_gain);
    for (i, layer) in bound.synthesis.iter().enumerate() {
        cur = g.conv_transpose2d(cur, layer.weight, Some(layer.bias), 2, pad, 1);
        if i + 1 < stages {
            cur = nonlin_synthesis(g, cur, bound, i);
        }
    }
    cur
}

/// Checks the divisibility precondition, naming the offending dimension.
pub fn check_divisible(h: usize, w: usize, s: usize) -> Result<()> {
    if h % s != 0 {
        return Err(Error::Shape(format!(
            "height {h} is not divisible by downsampling factor {s}"
        )));
    }
    if w % s != 0 {
        return Err(Error::Shape(format!(
            "width {w} is not divisible by downsampling factor {s}"
        )));
    }
    Ok(())
}

/// Eq.-style analysis: image -> continuous latent.
pub fn analyze(x: &ImageTensor, params: &CodecParams) -> Result<LatentTensor> {
    let (_, _, h, w) = x.dims();
    check_divisible(h, w, params.arch.downsampling)?;
    let mut g = Graph::new();
    let xv = g.constant(x.tensor().clone());
    let bound = params.bind(&mut g, false);
    let y = analyze_g(&mut g, xv, &bound);
    LatentTensor::new(g.value(y).clone())
}

/// Synthesis: quantized latent -> image, clamped to [0, 1] at the boundary.
pub fn synthesize(yhat: &QuantizedLatent, params: &CodecParams) -> Result<ImageTensor> {
    let (_, c, _, _) = yhat.dims();
    if c != params.arch.latent_channels {
        return Err(Error::Shape(format!(
            "latent has {c} channels but params expect {}",
            params.arch.latent_channels
        )));
    }
    let mut g = Graph::new();
    let yv = g.constant(yhat.data.clone());
    let bound = params.bind(&mut g, false);
    let xv = synthesize_g(&mut g, yv, &bound);
    ImageTensor::new(g.value(xv).clone())
}

/// Element-wise quantizer. `TrainNoise` adds seeded uniform noise in
/// [-0.5, 0.5) (a fresh draw per element); `InferRound` rounds to the
/// nearest integer.
pub fn quantize(y: &LatentTensor, mode: QuantizeMode, rng_seed: u64) -> Result<QuantizedLatent> {
    if !y.tensor().is_finite() {
        return Err(Error::Numeric("quantize input contains non-finite values".into()));
    }
    let data = match mode {
        QuantizeMode::InferRound => y.tensor().map(f64::round),
        QuantizeMode::TrainNoise => {
            let noise = noise_like(y.tensor().numel(), rng_seed);
            let mut t = y.tensor().clone();
            for (v, n) in t.data_mut().iter_mut().zip(noise) {
                *v += n;
            }
            t
        }
    };
    Ok(QuantizedLatent { data, mode })
}

/// Training-time quantization inside a graph: adds the same seeded noise as
/// [`quantize`] as a constant, so the gradient w.r.t. `y` is the identity
/// (straight-through).
pub fn quantize_noise_g(g: &mut Graph, y: Var, rng_seed: u64) -> Var {
    let n = noise_like(g.value(y).numel(), rng_seed);
    let shape = g.value(y).shape().to_vec();
    let noise = g.constant(crate::tensor::Tensor::from_vec(&shape, n));
    g.add(y, noise)
}

fn noise_like(n: usize, rng_seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n)
        .map(|_| loop {
            let u = rng.gen::<f64>() - 0.5;
            // keep the deviation strictly below 0.5 for every seed
            if u > -0.5 {
                break u;
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::arch::ArchDescriptor;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn small_params() -> CodecParams {
        CodecParams::init(
            ArchDescriptor {
                latent_channels: 8,
                hidden_channels: 6,
                downsampling: 8,
                kernel_size: 5,
                nonlinearity: Nonlinearity::LeakyRelu,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn analyze_reduces_spatial_dims_by_s() {
        let params = small_params();
        let x = ImageTensor::constant(64, 64, 0.5);
        let y = analyze(&x, &params).unwrap();
        assert_eq!(y.tensor().shape(), &[1, 8, 8, 8]);
    }

    #[test]
    fn analyze_batch_s4() {
        let params = CodecParams::init(
            ArchDescriptor {
                latent_channels: 4,
                hidden_channels: 4,
                downsampling: 4,
                kernel_size: 3,
                nonlinearity: Nonlinearity::LeakyRelu,
            },
            1,
        )
        .unwrap();
        let x = ImageTensor::new(Tensor::full(&[2, 3, 32, 32], 0.25)).unwrap();
        let y = analyze(&x, &params).unwrap();
        assert_eq!(y.tensor().shape(), &[2, 4, 8, 8]);
    }

    #[test]
    fn analyze_rejects_indivisible_dims() {
        let params = small_params();
        let x = ImageTensor::new(Tensor::zeros(&[1, 3, 63, 64])).unwrap();
        let err = analyze(&x, &params).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.contains("height 63")));
    }

    #[test]
    fn synthesize_mirrors_analyze_shape() {
        let params = small_params();
        let x = ImageTensor::constant(64, 48, 0.3);
        let y = analyze(&x, &params).unwrap();
        let q = quantize(&y, QuantizeMode::InferRound, 0).unwrap();
        let xhat = synthesize(&q, &params).unwrap();
        assert_eq!(xhat.tensor().shape(), x.tensor().shape());
    }

    #[test]
    fn gdn_roundtrip_shapes() {
        let params = CodecParams::init(
            ArchDescriptor {
                latent_channels: 4,
                hidden_channels: 4,
                downsampling: 4,
                kernel_size: 3,
                nonlinearity: Nonlinearity::Gdn,
            },
            2,
        )
        .unwrap();
        let x = ImageTensor::constant(16, 16, 0.7);
        let y = analyze(&x, &params).unwrap();
        let q = quantize(&y, QuantizeMode::InferRound, 0).unwrap();
        let xhat = synthesize(&q, &params).unwrap();
        assert_eq!(xhat.tensor().shape(), &[1, 3, 16, 16]);
    }

    #[test]
    fn zero_weight_params_give_constant_output() {
        let mut params = small_params();
        for t in params.param_tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        // bias-only network: every output pixel identical
        let q = QuantizedLatent {
            data: Tensor::from_vec(
                &[1, 8, 2, 2],
                (0..32).map(|i| (i % 5) as f64).collect(),
            ),
            mode: QuantizeMode::InferRound,
        };
        let out = synthesize(&q, &params).unwrap();
        let d = out.tensor().data();
        assert!(d.iter().all(|&v| v == d[0]));
    }

    #[test]
    fn quantize_rounds_to_nearest() {
        let y = LatentTensor::new(Tensor::from_vec(&[1, 1, 1, 3], vec![0.4, -1.6, 2.0])).unwrap();
        let q = quantize(&y, QuantizeMode::InferRound, 0).unwrap();
        assert_eq!(q.data.data(), &[0.0, -2.0, 2.0]);
    }

    #[test]
    fn quantize_round_is_idempotent() {
        let y = LatentTensor::new(Tensor::from_vec(&[1, 1, 1, 4], vec![0.49, -0.5, 7.3, -3.9]))
            .unwrap();
        let q1 = quantize(&y, QuantizeMode::InferRound, 0).unwrap();
        let l1 = LatentTensor::new(q1.data.clone()).unwrap();
        let q2 = quantize(&l1, QuantizeMode::InferRound, 0).unwrap();
        assert_eq!(q1.data, q2.data);
    }

    #[test]
    fn nonfinite_latents_are_rejected() {
        let t = Tensor::from_vec(&[1, 1, 1, 1], vec![f64::NAN]);
        assert!(matches!(LatentTensor::new(t), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn noise_bound_strict(seed in 0u64..500) {
            let y = LatentTensor::new(Tensor::zeros(&[1, 2, 4, 4])).unwrap();
            let q = quantize(&y, QuantizeMode::TrainNoise, seed).unwrap();
            for (&a, &b) in q.data.data().iter().zip(y.tensor().data()) {
                prop_assert!((a - b).abs() < 0.5);
            }
        }
    }

    #[test]
    fn noise_deterministic_per_seed() {
        let y = LatentTensor::new(Tensor::full(&[1, 2, 3, 3], 0.1)).unwrap();
        let a = quantize(&y, QuantizeMode::TrainNoise, 9).unwrap();
        let b = quantize(&y, QuantizeMode::TrainNoise, 9).unwrap();
        let c = quantize(&y, QuantizeMode::TrainNoise, 10).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }
}
