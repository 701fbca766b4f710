//! 8-bit PNG/PPM image IO, mapped to [0, 1] by /255.

use std::path::Path;

use image::ColorType;

use crate::codec::types::ImageTensor;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Load an 8-bit PNG or PPM file as a single-image batch.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported bit depth/color type {other:?}, expected 8-bit",
                path.display()
            )))
        }
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros(&[1, 3, h, w]);
    {
        let d = t.data_mut();
        for (y, x, px) in rgb.enumerate_pixels().map(|(x, y, p)| (y as usize, x as usize, p)) {
            for c in 0..3 {
                d[(c * h + y) * w + x] = px.0[c] as f64 / 255.0;
            }
        }
    }
    ImageTensor::new(t)
}

/// Save the first image of a batch as 8-bit PNG or PPM (by extension),
/// quantizing with round(v * 255).
pub fn save_image(x: &ImageTensor, path: &Path) -> Result<()> {
    let (b, _, h, w) = x.dims();
    if b != 1 {
        return Err(Error::Argument(format!(
            "save_image expects a single-image batch, got batch {b}"
        )));
    }
    let d = x.tensor().data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for xw in 0..w {
            let px = [0, 1, 2].map(|c| {
                let v = d[(c * h + y) * w + xw];
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            });
            img.put_pixel(xw as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}
