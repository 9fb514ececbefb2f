//! Windowed structural similarity on luminance: 11x11 Gaussian window with
//! sigma 1.5, stabilizers k1 = 0.01 and k2 = 0.03, dynamic range 1.0, mean
//! over all valid window positions.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::tensor::ImageTensor;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 1.0;

fn gaussian_window(size: usize, sigma: f64) -> Array2<f64> {
    let mut w = Array2::zeros((size, size));
    let c = (size as f64 - 1.0) / 2.0;
    let mut total = 0.0;
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - c;
            let dx = j as f64 - c;
            let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            w[[i, j]] = v;
            total += v;
        }
    }
    w.mapv_inplace(|v| v / total);
    w
}

/// Structural similarity between two images of equal shape. Color inputs are
/// converted to luminance first. Symmetric in its arguments; equals 1 for
/// identical inputs.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    let ya = a.luminance();
    let yb = b.luminance();
    let (h, w) = ya.dim();
    // Shrink the window for small images, keeping it odd.
    let mut win = WINDOW.min(h).min(w);
    if win % 2 == 0 {
        win -= 1;
    }
    let kernel = gaussian_window(win, SIGMA);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - win) {
        for ox in 0..=(w - win) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for i in 0..win {
                for j in 0..win {
                    let k = kernel[[i, j]];
                    let va = ya[[oy + i, ox + j]];
                    let vb = yb[[oy + i, ox + j]];
                    mu_a += k * va;
                    mu_b += k * vb;
                    aa += k * va * va;
                    bb += k * vb * vb;
                    ab += k * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
