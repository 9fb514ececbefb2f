//! Feature similarity on luminance: phase-congruency and gradient-magnitude
//! similarity maps combined and weighted by the maximum phase congruency.
//!
//! Phase congruency follows the log-Gabor construction with 4 scales and
//! 4 orientations (minimum wavelength 6, scale multiplier 2, sigmaOnf 0.55,
//! angular spread sigma pi/4/1.2), Rayleigh-based noise compensation with
//! k = 2 and the empirical 1/1.7 rescale. Gradients use the Scharr operator.
//! Inputs are scaled to [0, 255] so the canonical stabilizers T1 = 0.85 and
//! T2 = 160 apply.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::tensor::ImageTensor;

pub const NSCALE: usize = 4;
pub const NORIENT: usize = 4;
pub const MIN_WAVELENGTH: f64 = 6.0;
pub const MULT: f64 = 2.0;
pub const SIGMA_ONF: f64 = 0.55;
pub const D_THETA_ON_SIGMA: f64 = 1.2;
pub const NOISE_K: f64 = 2.0;
pub const EPSILON: f64 = 1e-4;
pub const T1: f64 = 0.85;
pub const T2: f64 = 160.0;

// ----------------------------------------------------------------------
// Small complex 2D DFT: radix-2 when the length is a power of two, naive
// with precomputed twiddles otherwise. Separable row/column application.
// ----------------------------------------------------------------------

fn dft1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(re, im, inverse);
        return;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for (k, (our, oui)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
        let mut acc_re = 0.0;
        let mut acc_im = 0.0;
        for j in 0..n {
            let ang = sign * 2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64;
            let (s, c) = ang.sin_cos();
            acc_re += re[j] * c - im[j] * s;
            acc_im += re[j] * s + im[j] * c;
        }
        *our = acc_re;
        *oui = acc_im;
    }
    re.copy_from_slice(&out_re);
    im.copy_from_slice(&out_im);
}

fn fft_radix2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    // bit reversal
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (ws, wc) = ang.sin_cos();
        let mut i = 0;
        while i < n {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let u_re = re[i + k];
                let u_im = im[i + k];
                let v_re = re[i + k + len / 2] * cur_re - im[i + k + len / 2] * cur_im;
                let v_im = re[i + k + len / 2] * cur_im + im[i + k + len / 2] * cur_re;
                re[i + k] = u_re + v_re;
                im[i + k] = u_im + v_im;
                re[i + k + len / 2] = u_re - v_re;
                im[i + k + len / 2] = u_im - v_im;
                let next_re = cur_re * wc - cur_im * ws;
                cur_im = cur_re * ws + cur_im * wc;
                cur_re = next_re;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// In-place 2D DFT over (re, im); the inverse includes the 1/(H*W) scale.
fn dft2d(re: &mut Array2<f64>, im: &mut Array2<f64>, inverse: bool) {
    let (h, w) = re.dim();
    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    for i in 0..h {
        for j in 0..w {
            row_re[j] = re[[i, j]];
            row_im[j] = im[[i, j]];
        }
        dft1d(&mut row_re, &mut row_im, inverse);
        for j in 0..w {
            re[[i, j]] = row_re[j];
            im[[i, j]] = row_im[j];
        }
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            col_re[i] = re[[i, j]];
            col_im[i] = im[[i, j]];
        }
        dft1d(&mut col_re, &mut col_im, inverse);
        for i in 0..h {
            re[[i, j]] = col_re[i];
            im[[i, j]] = col_im[i];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        re.mapv_inplace(|v| v * scale);
        im.mapv_inplace(|v| v * scale);
    }
}

fn freq_coord(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Phase congruency map of a luminance image.
pub fn phase_congruency(y: &Array2<f64>) -> Array2<f64> {
    let (h, w) = y.dim();
    let mut f_re = y.clone();
    let mut f_im = Array2::zeros((h, w));
    dft2d(&mut f_re, &mut f_im, false);

    // Frequency grid: radius (with DC forced to 1) and angle.
    let mut radius = Array2::zeros((h, w));
    let mut sin_theta = Array2::zeros((h, w));
    let mut cos_theta = Array2::zeros((h, w));
    for i in 0..h {
        let fy = freq_coord(i, h);
        for j in 0..w {
            let fx = freq_coord(j, w);
            let r = (fx * fx + fy * fy).sqrt();
            radius[[i, j]] = r;
            let theta = (-fy).atan2(fx);
            sin_theta[[i, j]] = theta.sin();
            cos_theta[[i, j]] = theta.cos();
        }
    }
    radius[[0, 0]] = 1.0;

    let log_gabor: Vec<Array2<f64>> = (0..NSCALE)
        .map(|s| {
            let f0 = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ONF.ln().powi(2);
            let mut g = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let v = (radius[[i, j]] / f0).ln();
                    g[[i, j]] = (-(v * v) / denom).exp();
                }
            }
            g[[0, 0]] = 0.0;
            g
        })
        .collect();

    let theta_sigma = std::f64::consts::PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let mut energy_all = Array2::<f64>::zeros((h, w));
    let mut an_all = Array2::<f64>::zeros((h, w));

    for o in 0..NORIENT {
        let angle = o as f64 * std::f64::consts::PI / NORIENT as f64;
        let (angle_sin, angle_cos) = angle.sin_cos();
        let mut spread = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                // wrapped angular distance
                let ds = sin_theta[[i, j]] * angle_cos - cos_theta[[i, j]] * angle_sin;
                let dc = cos_theta[[i, j]] * angle_cos + sin_theta[[i, j]] * angle_sin;
                let dtheta = ds.atan2(dc).abs();
                spread[[i, j]] = (-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma)).exp();
            }
        }

        let mut sum_e = Array2::<f64>::zeros((h, w));
        let mut sum_o = Array2::<f64>::zeros((h, w));
        let mut sum_an = Array2::<f64>::zeros((h, w));
        let mut eo_re = Vec::with_capacity(NSCALE);
        let mut eo_im = Vec::with_capacity(NSCALE);
        let mut tau = 0.0;

        for (s, lg) in log_gabor.iter().enumerate() {
            let mut re = Array2::zeros((h, w));
            let mut im = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    let filt = lg[[i, j]] * spread[[i, j]];
                    re[[i, j]] = f_re[[i, j]] * filt;
                    im[[i, j]] = f_im[[i, j]] * filt;
                }
            }
            dft2d(&mut re, &mut im, true);
            let mut an = Array2::zeros((h, w));
            for i in 0..h {
                for j in 0..w {
                    an[[i, j]] = (re[[i, j]] * re[[i, j]] + im[[i, j]] * im[[i, j]]).sqrt();
                }
            }
            sum_e += &re;
            sum_o += &im;
            sum_an += &an;
            if s == 0 {
                let mut vals: Vec<f64> = an.iter().cloned().collect();
                tau = median(&mut vals) / (4.0f64).ln().sqrt();
            }
            eo_re.push(re);
            eo_im.push(im);
        }

        let mut energy = Array2::<f64>::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let x_energy =
                    (sum_e[[i, j]] * sum_e[[i, j]] + sum_o[[i, j]] * sum_o[[i, j]]).sqrt() + EPSILON;
                let mean_e = sum_e[[i, j]] / x_energy;
                let mean_o = sum_o[[i, j]] / x_energy;
                let mut acc = 0.0;
                for s in 0..NSCALE {
                    let e = eo_re[s][[i, j]];
                    let od = eo_im[s][[i, j]];
                    acc += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
                }
                energy[[i, j]] = acc;
            }
        }

        // Rayleigh noise compensation estimated from the smallest scale.
        let total_tau = tau * (1.0 - (1.0 / MULT).powi(NSCALE as i32)) / (1.0 - 1.0 / MULT);
        let noise_mean = total_tau * (std::f64::consts::PI / 2.0).sqrt();
        let noise_sigma = total_tau * ((4.0 - std::f64::consts::PI) / 2.0).sqrt();
        let t = (noise_mean + NOISE_K * noise_sigma) / 1.7;
        energy.mapv_inplace(|v| (v - t).max(0.0));

        energy_all += &energy;
        an_all += &sum_an;
    }

    let mut pc = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            pc[[i, j]] = energy_all[[i, j]] / (an_all[[i, j]] + EPSILON);
        }
    }
    pc
}

/// Scharr gradient magnitude with zero-padded borders; kernels scaled by 1/16.
pub fn scharr_gradient(y: &Array2<f64>) -> Array2<f64> {
    let (h, w) = y.dim();
    let kx = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let mut g = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for di in 0..3 {
                for dj in 0..3 {
                    let ii = i as isize + di as isize - 1;
                    let jj = j as isize + dj as isize - 1;
                    if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                        let v = y[[ii as usize, jj as usize]];
                        gx += kx[di][dj] / 16.0 * v;
                        gy += kx[dj][di] / 16.0 * v;
                    }
                }
            }
            g[[i, j]] = (gx * gx + gy * gy).sqrt();
        }
    }
    g
}

/// Box-average downsampling used for large inputs (factor chosen as in the
/// canonical implementation: round(min_dim / 256), at least 1).
fn maybe_downsample(y: &Array2<f64>) -> Array2<f64> {
    let (h, w) = y.dim();
    let f = ((h.min(w) as f64 / 256.0).round() as usize).max(1);
    if f == 1 {
        return y.clone();
    }
    let (nh, nw) = (h / f, w / f);
    let mut out = Array2::zeros((nh, nw));
    for i in 0..nh {
        for j in 0..nw {
            let mut acc = 0.0;
            for di in 0..f {
                for dj in 0..f {
                    acc += y[[i * f + di, j * f + dj]];
                }
            }
            out[[i, j]] = acc / (f * f) as f64;
        }
    }
    out
}

/// Feature similarity between two images of equal shape.
pub fn fsim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.data().dim(),
            b.data().dim()
        )));
    }
    let ya = maybe_downsample(&a.luminance().mapv(|v| v * 255.0));
    let yb = maybe_downsample(&b.luminance().mapv(|v| v * 255.0));

    let pc1 = phase_congruency(&ya);
    let pc2 = phase_congruency(&yb);
    let g1 = scharr_gradient(&ya);
    let g2 = scharr_gradient(&yb);

    let (h, w) = ya.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut fallback = 0.0;
    for i in 0..h {
        for j in 0..w {
            let s_pc = (2.0 * pc1[[i, j]] * pc2[[i, j]] + T1)
                / (pc1[[i, j]] * pc1[[i, j]] + pc2[[i, j]] * pc2[[i, j]] + T1);
            let s_g = (2.0 * g1[[i, j]] * g2[[i, j]] + T2)
                / (g1[[i, j]] * g1[[i, j]] + g2[[i, j]] * g2[[i, j]] + T2);
            let pcm = pc1[[i, j]].max(pc2[[i, j]]);
            num += s_pc * s_g * pcm;
            den += pcm;
            fallback += s_pc * s_g;
        }
    }
    if den <= 1e-12 {
        // featureless pair (e.g. two constant fields): fall back to the
        // unweighted mean similarity
        return Ok(fallback / (h * w) as f64);
    }
    Ok(num / den)
}
