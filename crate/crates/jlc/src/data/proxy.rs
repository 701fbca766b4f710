//! Synthetic JND-proxy generator.
//!
//! Stands in for human-labeled JND-quality images: a deterministic,
//! perceptually flavored degradation built from 8x8 block-DCT coefficient
//! quantization (JPEG-style), with the quantization strength stepped by
//! `level`. Level 0 is the identity; distortion grows strictly with level
//! on textured content.

use crate::codec::types::ImageTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_PROXY_LEVEL: u32 = 10;

const BLOCK: usize = 8;

/// Standard JPEG luminance quantization matrix (Annex K base table).
const BASE_QUANT: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0, //
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0, //
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0, //
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0, //
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0, //
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0, //
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0, //
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

fn quality_for_level(level: u32) -> f64 {
    // level 1 is barely visible, level 10 heavily quantized
    92.0 - 9.0 * level as f64
}

fn quant_table(level: u32) -> [f64; 64] {
    let q = quality_for_level(level).clamp(2.0, 98.0);
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [0.0; 64];
    for (o, b) in t.iter_mut().zip(BASE_QUANT.iter()) {
        *o = ((b * scale + 50.0) / 100.0).clamp(1.0, 255.0).floor();
    }
    t
}

fn dct_matrix() -> [[f64; BLOCK]; BLOCK] {
    let mut c = [[0.0; BLOCK]; BLOCK];
    for (k, row) in c.iter_mut().enumerate() {
        let a = if k == 0 {
            (1.0 / BLOCK as f64).sqrt()
        } else {
            (2.0 / BLOCK as f64).sqrt()
        };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64
                / (2.0 * BLOCK as f64))
                .cos();
        }
    }
    c
}

/// Deterministic JND-proxy degradation of an image batch.
pub fn synth_jnd_proxy(x_o: &ImageTensor, level: u32) -> Result<ImageTensor> {
    if level == 0 {
        return Ok(x_o.clone());
    }
    if level > MAX_PROXY_LEVEL {
        return Err(Error::Argument(format!(
            "proxy level must be in 0..={MAX_PROXY_LEVEL}, got {level}"
        )));
    }
    let (b, c, h, w) = x_o.dims();
    let qt = quant_table(level);
    let dct = dct_matrix();

    // pad each plane to a block multiple by edge replication
    let hp = h.div_ceil(BLOCK) * BLOCK;
    let wp = w.div_ceil(BLOCK) * BLOCK;

    let src = x_o.tensor().data();
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let dst = out.data_mut();

    let mut plane = vec![0.0f64; hp * wp];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for y in 0..hp {
                for xw in 0..wp {
                    let sy = y.min(h - 1);
                    let sx = xw.min(w - 1);
                    plane[y * wp + xw] = src[base + sy * w + sx] * 255.0 - 128.0;
                }
            }
            for by in (0..hp).step_by(BLOCK) {
                for bx in (0..wp).step_by(BLOCK) {
                    process_block(&mut plane, wp, by, bx, &dct, &qt);
                }
            }
            for y in 0..h {
                for xw in 0..w {
                    dst[base + y * w + xw] = ((plane[y * wp + xw] + 128.0) / 255.0).clamp(0.0, 1.0);
                }
            }
        }
    }
    ImageTensor::new(out)
}

fn process_block(
    plane: &mut [f64],
    stride: usize,
    by: usize,
    bx: usize,
    dct: &[[f64; BLOCK]; BLOCK],
    qt: &[f64; 64],
) {
    let mut block = [[0.0f64; BLOCK]; BLOCK];
    for (y, row) in block.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = plane[(by + y) * stride + bx + x];
        }
    }
    // coef = C * block * C^T
    let mut tmp = [[0.0f64; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[i][j] = (0..BLOCK).map(|k| dct[i][k] * block[k][j]).sum();
        }
    }
    let mut coef = [[0.0f64; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            coef[i][j] = (0..BLOCK).map(|k| tmp[i][k] * dct[j][k]).sum();
        }
    }
    for (i, row) in coef.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let q = qt[i * BLOCK + j];
            *v = (*v / q).round() * q;
        }
    }
    // block = C^T * coef * C
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[i][j] = (0..BLOCK).map(|k| dct[k][i] * coef[k][j]).sum();
        }
    }
    for (y, row) in block.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (0..BLOCK).map(|k| tmp[y][k] * dct[k][x]).sum();
        }
    }
    for (y, row) in block.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            plane[(by + y) * stride + bx + x] = *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::distortion::{distortion, DistortionFamily};

    /// Gradient plus texture; enough structure for every level to bite.
    pub(crate) fn textured_image(h: usize, w: usize) -> ImageTensor {
        let mut t = Tensor::zeros(&[1, 3, h, w]);
        {
            let d = t.data_mut();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let g = (x as f64 / w as f64 + y as f64 / h as f64) / 2.0;
                        let tex = 0.25 * ((x as f64 * 0.9).sin() * (y as f64 * 1.3).cos());
                        let chk = if (x / 4 + y / 4) % 2 == 0 { 0.08 } else { -0.08 };
                        d[(c * h + y) * w + x] = (g + tex + chk + c as f64 * 0.02).clamp(0.0, 1.0);
                    }
                }
            }
        }
        ImageTensor::new(t).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let x = textured_image(24, 24);
        let y = synth_jnd_proxy(&x, 0).unwrap();
        assert_eq!(y.tensor(), x.tensor());
    }

    #[test]
    fn output_dims_match_input_even_unaligned() {
        let x = textured_image(21, 19);
        let y = synth_jnd_proxy(&x, 3).unwrap();
        assert_eq!(y.tensor().shape(), x.tensor().shape());
    }

    #[test]
    fn distortion_strictly_increases_with_level() {
        // monotonicity verified by direct measurement
        let x = textured_image(40, 40);
        let mut prev = 0.0;
        for level in 1..=5 {
            let y = synth_jnd_proxy(&x, level).unwrap();
            let d = distortion(&x, &y, DistortionFamily::Mse).unwrap();
            assert!(
                d > prev,
                "level {level}: mse {d} not above previous {prev}"
            );
            prev = d;
        }
    }

    #[test]
    fn psnr_strictly_decreases_with_level() {
        let x = textured_image(32, 32);
        let mut prev = f64::INFINITY;
        for level in 1..=5 {
            let y = synth_jnd_proxy(&x, level).unwrap();
            let p = crate::metrics::psnr(&x, &y).unwrap();
            assert!(p < prev, "level {level}: psnr {p} not below {prev}");
            prev = p;
        }
    }

    #[test]
    fn out_of_range_level_rejected() {
        let x = textured_image(8, 8);
        assert!(synth_jnd_proxy(&x, MAX_PROXY_LEVEL + 1).is_err());
    }

    #[test]
    fn proxy_is_deterministic() {
        let x = textured_image(16, 16);
        let a = synth_jnd_proxy(&x, 4).unwrap();
        let b = synth_jnd_proxy(&x, 4).unwrap();
        assert_eq!(a.tensor(), b.tensor());
    }
}
