//! Domain types shared by the codec pipeline.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of RGB images, shape `[batch, 3, h, w]`, intensities in [0, 1].
///
/// Construction clamps to [0, 1] and rejects non-finite values, so a held
/// `ImageTensor` always satisfies both invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Tensor,
}

impl ImageTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 4 || data.shape()[1] != 3 {
            return Err(Error::Shape(format!(
                "image tensor must be [batch, 3, h, w], got {:?}",
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Numeric("image tensor contains non-finite values".into()));
        }
        Ok(ImageTensor {
            data: data.clamp(0.0, 1.0),
        })
    }

    /// Single gray-valued image, handy for tests and examples.
    pub fn constant(h: usize, w: usize, value: f64) -> Self {
        ImageTensor {
            data: Tensor::full(&[1, 3, h, w], value.clamp(0.0, 1.0)),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dims4()
    }

    /// Total source pixels: batch * h * w.
    pub fn pixel_count(&self) -> usize {
        let (b, _, h, w) = self.dims();
        b * h * w
    }

    /// Rectangular crop shared by the patch pipeline and padded evaluation.
    pub fn crop(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<ImageTensor> {
        let (b, c, h, w) = self.dims();
        if y0 + ch > h || x0 + cw > w {
            return Err(Error::Shape(format!(
                "crop {ch}x{cw}@({y0},{x0}) exceeds image {h}x{w}"
            )));
        }
        let src = self.data.data();
        let mut out = Tensor::zeros(&[b, c, ch, cw]);
        {
            let d = out.data_mut();
            for p in 0..b * c {
                for y in 0..ch {
                    let row = &src[p * h * w + (y0 + y) * w + x0..][..cw];
                    d[p * ch * cw + y * cw..][..cw].copy_from_slice(row);
                }
            }
        }
        Ok(ImageTensor { data: out })
    }

    /// Pad height/width up to multiples of `s` by symmetric edge mirroring.
    /// Returns the image unchanged when already aligned.
    pub fn pad_to_multiple(&self, s: usize) -> ImageTensor {
        let (b, c, h, w) = self.dims();
        let hp = h.div_ceil(s) * s;
        let wp = w.div_ceil(s) * s;
        if hp == h && wp == w {
            return self.clone();
        }
        let src = self.data.data();
        let mut out = Tensor::zeros(&[b, c, hp, wp]);
        {
            let d = out.data_mut();
            let mirror = |i: usize, n: usize| {
                if i < n {
                    i
                } else {
                    // symmetric reflection: n, n+1, ... map to n-1, n-2, ...
                    n - 1 - (i - n).min(n - 1)
                }
            };
            for p in 0..b * c {
                for y in 0..hp {
                    let sy = mirror(y, h);
                    for x in 0..wp {
                        let sx = mirror(x, w);
                        d[p * hp * wp + y * wp + x] = src[p * h * w + sy * w + sx];
                    }
                }
            }
        }
        ImageTensor { data: out }
    }
}

/// Stack single-image tensors into one batch.
pub fn stack_images(images: &[&ImageTensor]) -> Result<ImageTensor> {
    if images.is_empty() {
        return Err(Error::Argument("cannot stack an empty image list".into()));
    }
    let (_, c, h, w) = images[0].dims();
    let mut out = Tensor::zeros(&[images.len(), c, h, w]);
    let plane = c * h * w;
    for (i, img) in images.iter().enumerate() {
        if img.dims() != (1, c, h, w) {
            return Err(Error::Shape(format!(
                "stack expects uniform [1, {c}, {h}, {w}] images, got {:?}",
                img.dims()
            )));
        }
        out.data_mut()[i * plane..][..plane].copy_from_slice(img.tensor().data());
    }
    ImageTensor::new(out)
}

/// Continuous latents `[batch, latent_channels, h/s, w/s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    data: Tensor,
}

impl LatentTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "latent tensor must be 4-D, got {:?}",
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Numeric("latent tensor contains non-finite values".into()));
        }
        Ok(LatentTensor { data })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dims4()
    }
}

/// How a latent was quantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizeMode {
    /// Additive uniform noise in [-0.5, 0.5); used during training.
    TrainNoise,
    /// Nearest-integer rounding; used for real coding.
    InferRound,
}

/// A quantized latent together with the mode that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedLatent {
    pub data: Tensor,
    pub mode: QuantizeMode,
}

impl QuantizedLatent {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dims4()
    }
}
