//! Independent reference implementations of the referenced quality metrics,
//! written straight from their definitions with their own numeric plumbing
//! (plain nested Vec grids and a direct DFT). These exist purely to
//! cross-check the production implementations; they deliberately share no
//! code with them.

use dfshield_core::image::tensor::ImageTensor;

type Grid = Vec<Vec<f64>>;

fn luminance_255(img: &ImageTensor) -> Grid {
    let (h, w, c) = img.data().dim();
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            let v = if c == 1 {
                img.data()[[i, j, 0]]
            } else {
                0.299 * img.data()[[i, j, 0]]
                    + 0.587 * img.data()[[i, j, 1]]
                    + 0.114 * img.data()[[i, j, 2]]
            };
            out[i][j] = v * 255.0;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// SSIM reference: direct windowed formula
// ---------------------------------------------------------------------------

pub fn ssim_reference(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let ya = luminance_255(a);
    let yb = luminance_255(b);
    let h = ya.len();
    let w = ya[0].len();
    // work in [0,1] units like the production code
    let ya: Grid = ya.iter().map(|r| r.iter().map(|v| v / 255.0).collect()).collect();
    let yb: Grid = yb.iter().map(|r| r.iter().map(|v| v / 255.0).collect()).collect();

    let mut win = 11usize.min(h).min(w);
    if win % 2 == 0 {
        win -= 1;
    }
    let centre = (win as f64 - 1.0) / 2.0;
    let sigma = 1.5;
    let mut kernel = vec![vec![0.0; win]; win];
    let mut norm = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let dy = i as f64 - centre;
            let dx = j as f64 - centre;
            *cell = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            norm += *cell;
        }
    }
    for row in kernel.iter_mut() {
        for cell in row.iter_mut() {
            *cell /= norm;
        }
    }

    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - win) {
        for ox in 0..=(w - win) {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut qaa, mut qbb, mut qab) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let k = kernel[i][j];
                    let va = ya[oy + i][ox + j];
                    let vb = yb[oy + i][ox + j];
                    ma += k * va;
                    mb += k * vb;
                    qaa += k * va * va;
                    qbb += k * vb * vb;
                    qab += k * va * vb;
                }
            }
            let va = qaa - ma * ma;
            let vb = qbb - mb * mb;
            let cov = qab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

// ---------------------------------------------------------------------------
// FSIM reference: phase congruency (log-Gabor, 4 scales x 4 orientations,
// Rayleigh noise compensation with k = 2 and the 1/1.7 rescale) combined
// with Scharr gradient similarity, weighted by the max phase congruency.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Cpx {
    re: f64,
    im: f64,
}

impl Cpx {
    fn zero() -> Self {
        Cpx { re: 0.0, im: 0.0 }
    }
    fn mul_scalar(self, s: f64) -> Self {
        Cpx {
            re: self.re * s,
            im: self.im * s,
        }
    }
}

/// Direct (O(n^2) per axis) DFT over rows then columns.
fn dft2_direct(data: &[Vec<Cpx>], inverse: bool) -> Vec<Vec<Cpx>> {
    let h = data.len();
    let w = data[0].len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut rows = vec![vec![Cpx::zero(); w]; h];
    for i in 0..h {
        for k in 0..w {
            let mut acc = Cpx::zero();
            for j in 0..w {
                let ang = sign * 2.0 * std::f64::consts::PI * (k * j) as f64 / w as f64;
                let (s, c) = ang.sin_cos();
                acc.re += data[i][j].re * c - data[i][j].im * s;
                acc.im += data[i][j].re * s + data[i][j].im * c;
            }
            rows[i][k] = acc;
        }
    }
    let mut out = vec![vec![Cpx::zero(); w]; h];
    for j in 0..w {
        for k in 0..h {
            let mut acc = Cpx::zero();
            for i in 0..h {
                let ang = sign * 2.0 * std::f64::consts::PI * (k * i) as f64 / h as f64;
                let (s, c) = ang.sin_cos();
                acc.re += rows[i][j].re * c - rows[i][j].im * s;
                acc.im += rows[i][j].re * s + rows[i][j].im * c;
            }
            out[k][j] = acc;
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v = v.mul_scalar(scale);
            }
        }
    }
    out
}

fn frequency(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

fn reference_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn phase_congruency_reference(y: &Grid) -> Grid {
    let h = y.len();
    let w = y[0].len();
    let nscale = 4usize;
    let norient = 4usize;
    let min_wavelength = 6.0;
    let mult = 2.0f64;
    let sigma_onf: f64 = 0.55;
    let d_theta_on_sigma = 1.2;
    let k_noise = 2.0;
    let eps = 1e-4;

    let input: Vec<Vec<Cpx>> = y
        .iter()
        .map(|row| row.iter().map(|&v| Cpx { re: v, im: 0.0 }).collect())
        .collect();
    let spectrum = dft2_direct(&input, false);

    let mut energy_total = vec![vec![0.0; w]; h];
    let mut amplitude_total = vec![vec![0.0; w]; h];

    for o in 0..norient {
        let angle = o as f64 * std::f64::consts::PI / norient as f64;
        let theta_sigma = std::f64::consts::PI / norient as f64 / d_theta_on_sigma;

        let mut per_scale: Vec<Vec<Vec<Cpx>>> = Vec::with_capacity(nscale);
        let mut tau = 0.0;
        for s in 0..nscale {
            let f0 = 1.0 / (min_wavelength * mult.powi(s as i32));
            // filtered spectrum
            let mut filtered = vec![vec![Cpx::zero(); w]; h];
            for (i, row) in filtered.iter_mut().enumerate() {
                let fy = frequency(i, h);
                for (j, cell) in row.iter_mut().enumerate() {
                    let fx = frequency(j, w);
                    let mut radius = (fx * fx + fy * fy).sqrt();
                    if i == 0 && j == 0 {
                        radius = 1.0;
                    }
                    let lg = if i == 0 && j == 0 {
                        0.0
                    } else {
                        (-(radius / f0).ln().powi(2) / (2.0 * sigma_onf.ln().powi(2))).exp()
                    };
                    let theta = (-fy).atan2(fx);
                    let ds = theta.sin() * angle.cos() - theta.cos() * angle.sin();
                    let dc = theta.cos() * angle.cos() + theta.sin() * angle.sin();
                    let dtheta = ds.atan2(dc).abs();
                    let spread =
                        (-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma)).exp();
                    *cell = spectrum[i][j].mul_scalar(lg * spread);
                }
            }
            let response = dft2_direct(&filtered, true);
            if s == 0 {
                let amps: Vec<f64> = response
                    .iter()
                    .flat_map(|row| row.iter().map(|c| (c.re * c.re + c.im * c.im).sqrt()))
                    .collect();
                tau = reference_median(amps) / (4.0f64).ln().sqrt();
            }
            per_scale.push(response);
        }

        let mut energy = vec![vec![0.0; w]; h];
        for i in 0..h {
            for j in 0..w {
                let mut sum_e = 0.0;
                let mut sum_o = 0.0;
                let mut sum_a = 0.0;
                for resp in per_scale.iter() {
                    sum_e += resp[i][j].re;
                    sum_o += resp[i][j].im;
                    sum_a += (resp[i][j].re * resp[i][j].re + resp[i][j].im * resp[i][j].im).sqrt();
                }
                let x_energy = (sum_e * sum_e + sum_o * sum_o).sqrt() + eps;
                let me = sum_e / x_energy;
                let mo = sum_o / x_energy;
                let mut acc = 0.0;
                for resp in per_scale.iter() {
                    let e = resp[i][j].re;
                    let od = resp[i][j].im;
                    acc += e * me + od * mo - (e * mo - od * me).abs();
                }
                energy[i][j] = acc;
                amplitude_total[i][j] += sum_a;
            }
        }

        let total_tau = tau * (1.0 - (1.0 / mult).powi(nscale as i32)) / (1.0 - 1.0 / mult);
        let noise_mean = total_tau * (std::f64::consts::PI / 2.0).sqrt();
        let noise_sigma = total_tau * ((4.0 - std::f64::consts::PI) / 2.0).sqrt();
        let threshold = (noise_mean + k_noise * noise_sigma) / 1.7;
        for i in 0..h {
            for j in 0..w {
                energy_total[i][j] += (energy[i][j] - threshold).max(0.0);
            }
        }
    }

    let mut pc = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            pc[i][j] = energy_total[i][j] / (amplitude_total[i][j] + eps);
        }
    }
    pc
}

fn scharr_reference(y: &Grid) -> Grid {
    let h = y.len();
    let w = y[0].len();
    let gx_k = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h {
        for j in 0..w {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for di in 0..3usize {
                for dj in 0..3usize {
                    let ii = i as isize + di as isize - 1;
                    let jj = j as isize + dj as isize - 1;
                    if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                        let v = y[ii as usize][jj as usize];
                        gx += gx_k[di][dj] / 16.0 * v;
                        gy += gx_k[dj][di] / 16.0 * v;
                    }
                }
            }
            out[i][j] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn fsim_reference(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let ya = luminance_255(a);
    let yb = luminance_255(b);
    let pc1 = phase_congruency_reference(&ya);
    let pc2 = phase_congruency_reference(&yb);
    let g1 = scharr_reference(&ya);
    let g2 = scharr_reference(&yb);
    let t1 = 0.85;
    let t2 = 160.0;
    let h = ya.len();
    let w = ya[0].len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h {
        for j in 0..w {
            let s_pc =
                (2.0 * pc1[i][j] * pc2[i][j] + t1) / (pc1[i][j].powi(2) + pc2[i][j].powi(2) + t1);
            let s_g = (2.0 * g1[i][j] * g2[i][j] + t2) / (g1[i][j].powi(2) + g2[i][j].powi(2) + t2);
            let pcm = pc1[i][j].max(pc2[i][j]);
            num += s_pc * s_g * pcm;
            den += pcm;
        }
    }
    num / den
}
