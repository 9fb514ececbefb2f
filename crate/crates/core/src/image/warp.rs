//! Geometric warping: small random rotation / scaling / shifting used to
//! augment substitute training, plus the bilinear resampler shared with
//! dataset loading and the evaluation-time realism transform.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::tensor::{clip_image_range, ImageTensor};

/// Ranges from which a concrete warp is drawn.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct WarpLimits {
    /// Maximum absolute rotation, degrees.
    pub max_rotation_deg: f64,
    /// Maximum relative deviation of the scale factor from 1.
    pub max_scale_delta: f64,
    /// Maximum shift as a fraction of width/height.
    pub max_shift: f64,
}

impl Default for WarpLimits {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_scale_delta: 0.05,
            max_shift: 0.05,
        }
    }
}

impl WarpLimits {
    pub fn identity() -> Self {
        Self {
            max_rotation_deg: 0.0,
            max_scale_delta: 0.0,
            max_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rotation_deg < 0.0 || self.max_scale_delta < 0.0 || self.max_shift < 0.0 {
            return Err(Error::InvalidConfig(
                "warp limits must be non-negative".into(),
            ));
        }
        if self.max_scale_delta >= 1.0 {
            return Err(Error::InvalidConfig(
                "max_scale_delta must be below 1".into(),
            ));
        }
        Ok(())
    }
}

/// A concrete warp: rotation in degrees, scale factor, and shifts as
/// fractions of width/height.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarpParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl WarpParams {
    pub const IDENTITY: WarpParams = WarpParams {
        rotation_deg: 0.0,
        scale: 1.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0 && self.shift_x == 0.0 && self.shift_y == 0.0
    }

    pub fn sample(limits: &WarpLimits, rng: &mut impl Rng) -> WarpParams {
        let draw = |rng: &mut dyn rand::RngCore, half: f64| -> f64 {
            if half == 0.0 {
                0.0
            } else {
                rng.gen_range(-half..=half)
            }
        };
        WarpParams {
            rotation_deg: draw(rng, limits.max_rotation_deg),
            scale: 1.0 + draw(rng, limits.max_scale_delta),
            shift_x: draw(rng, limits.max_shift),
            shift_y: draw(rng, limits.max_shift),
        }
    }

    pub fn within(&self, limits: &WarpLimits) -> bool {
        self.rotation_deg.abs() <= limits.max_rotation_deg + 1e-12
            && (self.scale - 1.0).abs() <= limits.max_scale_delta + 1e-12
            && self.shift_x.abs() <= limits.max_shift + 1e-12
            && self.shift_y.abs() <= limits.max_shift + 1e-12
    }
}

/// Bilinear sample with edge replication at the borders.
fn sample_bilinear(data: &Array3<f64>, y: f64, x: f64, c: usize) -> f64 {
    let (h, w, _) = data.dim();
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let v00 = data[[y0, x0, c]];
    let v01 = data[[y0, x1, c]];
    let v10 = data[[y1, x0, c]];
    let v11 = data[[y1, x1, c]];
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Apply a concrete warp about the image centre. Output regions that map
/// outside the frame replicate the nearest edge pixel.
pub fn warp(x: &ImageTensor, params: &WarpParams) -> ImageTensor {
    if params.is_identity() {
        return x.clone();
    }
    let data = x.data();
    let (h, w, c) = data.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let theta = params.rotation_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let ty = params.shift_y * h as f64;
    let tx = params.shift_x * w as f64;
    let inv_scale = 1.0 / params.scale;

    let mut out = Array3::zeros((h, w, c));
    for i in 0..h {
        for j in 0..w {
            // Invert: forward map is rotate+scale about centre, then shift.
            let dy = i as f64 - cy - ty;
            let dx = j as f64 - cx - tx;
            let sy = (dy * cos_t - dx * sin_t) * inv_scale + cy;
            let sx = (dy * sin_t + dx * cos_t) * inv_scale + cx;
            for ch in 0..c {
                out[[i, j, ch]] = sample_bilinear(data, sy, sx, ch);
            }
        }
    }
    clip_image_range(&out).expect("warp of a valid image stays finite")
}

/// Draw a warp within `limits` from the seeded stream and apply it.
pub fn random_warp(x: &ImageTensor, limits: &WarpLimits, rng_seed: u64) -> ImageTensor {
    let mut rng = crate::rng::substream(rng_seed, "warp", 0);
    let params = WarpParams::sample(limits, &mut rng);
    warp(x, &params)
}

/// Bilinear resize to `(new_h, new_w)` with corner-aligned coordinates.
pub fn resize_bilinear(data: &Array3<f64>, new_h: usize, new_w: usize) -> Array3<f64> {
    let (h, w, c) = data.dim();
    if (h, w) == (new_h, new_w) {
        return data.clone();
    }
    let mut out = Array3::zeros((new_h, new_w, c));
    let sy = if new_h > 1 {
        (h as f64 - 1.0) / (new_h as f64 - 1.0)
    } else {
        0.0
    };
    let sx = if new_w > 1 {
        (w as f64 - 1.0) / (new_w as f64 - 1.0)
    } else {
        0.0
    };
    for i in 0..new_h {
        for j in 0..new_w {
            let y = i as f64 * sy;
            let x = j as f64 * sx;
            for ch in 0..c {
                out[[i, j, ch]] = sample_bilinear(data, y, x, ch);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn stripes(h: usize, w: usize) -> ImageTensor {
        let mut a = Array3::zeros((h, w, 1));
        for i in 0..h {
            for j in 0..w {
                a[[i, j, 0]] = if j % 4 < 2 { 0.2 } else { 0.9 };
            }
        }
        ImageTensor::new(a).unwrap()
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let x = stripes(16, 16);
        let out = warp(&x, &WarpParams::IDENTITY);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn random_warp_with_identity_limits_is_bit_exact() {
        let x = stripes(16, 16);
        let out = random_warp(&x, &WarpLimits::identity(), 42);
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn rotation_of_constant_field_is_constant() {
        let x = ImageTensor::constant(16, 16, 3, 0.42).unwrap();
        let out = warp(
            &x,
            &WarpParams {
                rotation_deg: 5.0,
                scale: 1.0,
                shift_x: 0.0,
                shift_y: 0.0,
            },
        );
        for (&a, &b) in out.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Brute-force oracle: re-derive the inverse map and bilinear weights
    /// from scratch per pixel, without the shared sampling helper.
    fn reference_rotate(x: &ImageTensor, deg: f64) -> Array3<f64> {
        let data = x.data();
        let (h, w, c) = data.dim();
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let t = deg.to_radians();
        let mut out = Array3::zeros((h, w, c));
        for i in 0..h {
            for j in 0..w {
                let dy = i as f64 - cy;
                let dx = j as f64 - cx;
                let sy = (dy * t.cos() - dx * t.sin() + cy).clamp(0.0, (h - 1) as f64);
                let sx = (dy * t.sin() + dx * t.cos() + cx).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                for ch in 0..c {
                    out[[i, j, ch]] = data[[y0, x0, ch]] * (1.0 - fy) * (1.0 - fx)
                        + data[[y0, x1, ch]] * (1.0 - fy) * fx
                        + data[[y1, x0, ch]] * fy * (1.0 - fx)
                        + data[[y1, x1, ch]] * fy * fx;
                }
            }
        }
        out
    }

    #[test]
    fn rotation_matches_brute_force_resampling_oracle() {
        let x = stripes(24, 24);
        let got = warp(
            &x,
            &WarpParams {
                rotation_deg: 5.0,
                scale: 1.0,
                shift_x: 0.0,
                shift_y: 0.0,
            },
        );
        let want = reference_rotate(&x, 5.0);
        for (&a, &b) in got.data().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn warp_output_shape_and_range_hold() {
        let x = stripes(16, 20);
        let params = WarpParams {
            rotation_deg: 9.0,
            scale: 1.05,
            shift_x: 0.05,
            shift_y: -0.05,
        };
        let out = warp(&x, &params);
        assert!(out.same_shape(&x));
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn sampled_params_respect_limits() {
        let limits = WarpLimits::default();
        let mut rng = crate::rng::substream(5, "t", 0);
        for _ in 0..200 {
            let p = WarpParams::sample(&limits, &mut rng);
            assert!(p.within(&limits), "{p:?}");
        }
    }

    #[test]
    fn resize_round_trip_shape() {
        let x = stripes(16, 16);
        let up = resize_bilinear(x.data(), 20, 20);
        let back = resize_bilinear(&up, 16, 16);
        assert_eq!(back.dim(), (16, 16, 1));
    }
}
