//! PNG/JPEG file I/O. Files round-trip through 8-bit samples, so values on
//! disk are exact multiples of 1/255; reports that compare disk images note
//! this quantization.

use std::path::Path;

use image::GenericImageView;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image::tensor::ImageTensor;

/// Decode an image file into `[0, 1]` floats. Three-channel output unless
/// the file is single-channel gray.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = img.dimensions();
    let data = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let mut a = Array3::zeros((h as usize, w as usize, 1));
            for (x, y, p) in g.enumerate_pixels() {
                a[[y as usize, x as usize, 0]] = p.0[0] as f64 / 255.0;
            }
            a
        }
        other => {
            let rgb = other.to_rgb8();
            let mut a = Array3::zeros((h as usize, w as usize, 3));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    a[[y as usize, x as usize, c]] = p.0[c] as f64 / 255.0;
                }
            }
            a
        }
    };
    ImageTensor::new(data)
}

/// Quantize to 8-bit and write a PNG.
pub fn save_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, c) = img.data().dim();
    let to_u8 = |v: f64| -> u8 { (v * 255.0).round().clamp(0.0, 255.0) as u8 };
    let result = if c == 1 {
        let mut buf = image::GrayImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                buf.put_pixel(j as u32, i as u32, image::Luma([to_u8(img.data()[[i, j, 0]])]));
            }
        }
        buf.save(path)
    } else {
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for i in 0..h {
            for j in 0..w {
                let px = image::Rgb([
                    to_u8(img.data()[[i, j, 0]]),
                    to_u8(img.data()[[i, j, 1]]),
                    to_u8(img.data()[[i, j, 2]]),
                ]);
                buf.put_pixel(j as u32, i as u32, px);
            }
        }
        buf.save(path)
    };
    result.map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: format!("encode failed: {e}"),
    })
}
