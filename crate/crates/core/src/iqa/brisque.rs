//! No-reference quality score from natural-scene statistics: 36 features
//! (generalized-Gaussian fits of MSCN coefficients plus asymmetric fits of
//! four orientations of pairwise products, over two scales) scored by an
//! RBF support-vector regressor whose coefficients ship with the crate as a
//! versioned data file. Higher scores mean worse perceived quality.
//!
//! The bundled model is fit in-repo on a deterministic synthetic degradation
//! ladder (see [`fit`]); a test regenerates it byte-for-byte from source.

use std::sync::OnceLock;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::tensor::ImageTensor;

pub const NUM_FEATURES: usize = 36;
pub const MIN_DIMENSION: usize = 32;

/// The versioned coefficient file bundled with the crate.
pub const BUNDLED_MODEL: &str = include_str!("../../data/brisque_model_v1.txt");

// ----------------------------------------------------------------------
// Gamma function (Lanczos approximation, g = 7)
// ----------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

pub fn gamma_fn(x: f64) -> f64 {
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

// ----------------------------------------------------------------------
// Distribution fits via moment matching against precomputed ratio tables
// ----------------------------------------------------------------------

struct RatioTable {
    gammas: Vec<f64>,
    ratios: Vec<f64>,
}

fn ggd_table() -> &'static RatioTable {
    static TABLE: OnceLock<RatioTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut gammas = Vec::new();
        let mut ratios = Vec::new();
        let mut g = 0.2;
        while g <= 10.0 + 1e-9 {
            gammas.push(g);
            // sigma^2 / E|x|^2 for a GGD with shape g
            ratios.push(gamma_fn(1.0 / g) * gamma_fn(3.0 / g) / gamma_fn(2.0 / g).powi(2));
            g += 0.001;
        }
        RatioTable { gammas, ratios }
    })
}

fn aggd_table() -> &'static RatioTable {
    static TABLE: OnceLock<RatioTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut gammas = Vec::new();
        let mut ratios = Vec::new();
        let mut g = 0.2;
        while g <= 10.0 + 1e-9 {
            gammas.push(g);
            ratios.push(gamma_fn(2.0 / g).powi(2) / (gamma_fn(1.0 / g) * gamma_fn(3.0 / g)));
            g += 0.001;
        }
        RatioTable { gammas, ratios }
    })
}

/// Generalized Gaussian fit: returns (shape alpha, variance).
fn fit_ggd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let sigma_sq = values.iter().map(|v| v * v).sum::<f64>() / n;
    let e_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    if e_abs < 1e-12 {
        return (10.0, sigma_sq);
    }
    let rho = sigma_sq / (e_abs * e_abs);
    let table = ggd_table();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &r) in table.ratios.iter().enumerate() {
        let d = (rho - r).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (table.gammas[best], sigma_sq)
}

/// Asymmetric generalized Gaussian fit: returns
/// (alpha, mean, left variance, right variance).
fn fit_aggd(values: &[f64]) -> (f64, f64, f64, f64) {
    let mut left_sq = 0.0;
    let mut left_n = 0usize;
    let mut right_sq = 0.0;
    let mut right_n = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for &v in values {
        if v < 0.0 {
            left_sq += v * v;
            left_n += 1;
        } else if v > 0.0 {
            right_sq += v * v;
            right_n += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    let n = values.len() as f64;
    let left_std = if left_n > 0 { (left_sq / left_n as f64).sqrt() } else { 0.0 };
    let right_std = if right_n > 0 { (right_sq / right_n as f64).sqrt() } else { 0.0 };
    if sq_sum < 1e-12 || left_std < 1e-12 || right_std < 1e-12 {
        return (10.0, 0.0, left_std * left_std, right_std * right_std);
    }
    let gamma_hat = left_std / right_std;
    let r_hat = (abs_sum / n).powi(2) / (sq_sum / n);
    let r_hat_norm = r_hat * (gamma_hat.powi(3) + 1.0) * (gamma_hat + 1.0)
        / (gamma_hat * gamma_hat + 1.0).powi(2);
    let table = aggd_table();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, &r) in table.ratios.iter().enumerate() {
        let d = (r - r_hat_norm) * (r - r_hat_norm);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let alpha = table.gammas[best];
    let konst = (gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha)).sqrt();
    let mean = (right_std - left_std) * (gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha)) * konst;
    (alpha, mean, left_std * left_std, right_std * right_std)
}

// ----------------------------------------------------------------------
// MSCN coefficients and the 36-dimensional feature vector
// ----------------------------------------------------------------------

fn gaussian_kernel7() -> &'static Array2<f64> {
    static KERNEL: OnceLock<Array2<f64>> = OnceLock::new();
    KERNEL.get_or_init(|| {
        let size = 7usize;
        let sigma = 7.0 / 6.0;
        let c = (size as f64 - 1.0) / 2.0;
        let mut k = Array2::zeros((size, size));
        let mut total = 0.0;
        for i in 0..size {
            for j in 0..size {
                let dy = i as f64 - c;
                let dx = j as f64 - c;
                let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                k[[i, j]] = v;
                total += v;
            }
        }
        k.mapv_inplace(|v| v / total);
        k
    })
}

fn filter_same(y: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = y.dim();
    let (kh, kw) = kernel.dim();
    let (cy, cx) = (kh / 2, kw / 2);
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for ki in 0..kh {
                for kj in 0..kw {
                    let ii = i as isize + ki as isize - cy as isize;
                    let jj = j as isize + kj as isize - cx as isize;
                    if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                        acc += kernel[[ki, kj]] * y[[ii as usize, jj as usize]];
                    }
                }
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients of a [0, 255] luminance
/// plane.
pub fn mscn(y: &Array2<f64>) -> Array2<f64> {
    let kernel = gaussian_kernel7();
    let mu = filter_same(y, kernel);
    let sq = y.mapv(|v| v * v);
    let mu_sq = filter_same(&sq, kernel);
    let (h, w) = y.dim();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let var = (mu_sq[[i, j]] - mu[[i, j]] * mu[[i, j]]).max(0.0);
            out[[i, j]] = (y[[i, j]] - mu[[i, j]]) / (var.sqrt() + 1.0);
        }
    }
    out
}

fn circshift_product(m: &Array2<f64>, dy: isize, dx: isize) -> Vec<f64> {
    let (h, w) = m.dim();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let si = ((i as isize + dy).rem_euclid(h as isize)) as usize;
            let sj = ((j as isize + dx).rem_euclid(w as isize)) as usize;
            out.push(m[[i, j]] * m[[si, sj]]);
        }
    }
    out
}

fn scale_features(y: &Array2<f64>, out: &mut Vec<f64>) {
    let coeffs = mscn(y);
    let flat: Vec<f64> = coeffs.iter().cloned().collect();
    let (alpha, sigma_sq) = fit_ggd(&flat);
    out.push(alpha);
    out.push(sigma_sq);
    // orientations: horizontal, vertical, main diagonal, anti diagonal
    for (dy, dx) in [(0isize, 1isize), (1, 0), (1, 1), (1, -1)] {
        let prod = circshift_product(&coeffs, dy, dx);
        let (a, m, lv, rv) = fit_aggd(&prod);
        out.push(a);
        out.push(m);
        out.push(lv);
        out.push(rv);
    }
}

fn half_scale(y: &Array2<f64>) -> Array2<f64> {
    let (h, w) = y.dim();
    let (nh, nw) = (h / 2, w / 2);
    let mut out = Array2::zeros((nh, nw));
    for i in 0..nh {
        for j in 0..nw {
            out[[i, j]] = 0.25
                * (y[[2 * i, 2 * j]]
                    + y[[2 * i, 2 * j + 1]]
                    + y[[2 * i + 1, 2 * j]]
                    + y[[2 * i + 1, 2 * j + 1]]);
        }
    }
    out
}

/// The 36-feature natural-scene-statistics vector over two scales.
pub fn features(x: &ImageTensor) -> Result<[f64; NUM_FEATURES]> {
    if x.height().min(x.width()) < MIN_DIMENSION {
        return Err(Error::InvalidImage(format!(
            "image {}x{} too small for the two-scale statistics (min {MIN_DIMENSION})",
            x.height(),
            x.width()
        )));
    }
    let y = x.luminance().mapv(|v| v * 255.0);
    let mut out = Vec::with_capacity(NUM_FEATURES);
    scale_features(&y, &mut out);
    let y2 = half_scale(&y);
    scale_features(&y2, &mut out);
    debug_assert_eq!(out.len(), NUM_FEATURES);
    let mut arr = [0.0; NUM_FEATURES];
    arr.copy_from_slice(&out);
    Ok(arr)
}

// ----------------------------------------------------------------------
// RBF-SVR scoring model
// ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BrisqueModel {
    pub version: String,
    pub gamma: f64,
    pub bias: f64,
    pub ranges: Vec<(f64, f64)>,
    pub alphas: Vec<f64>,
    pub support_vectors: Vec<Vec<f64>>,
}

impl BrisqueModel {
    /// Parse the plain-text coefficient format:
    /// a header line, `gamma`, `bias`, `features`, a `ranges` block with one
    /// min/max pair per feature, and a `support_vectors` block with one
    /// alpha followed by the (scaled) vector per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |m: &str| Error::InvalidConfig(format!("brisque model: {m}"));
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        if !header.starts_with("brisque-rbf-svr") {
            return Err(bad("unknown format header"));
        }
        let version = header.trim().to_string();
        let mut gamma = None;
        let mut bias = None;
        let mut nfeat = None;
        loop {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("provenance:") => continue,
                Some("gamma") => {
                    gamma = Some(
                        parts
                            .next()
                            .ok_or_else(|| bad("gamma value missing"))?
                            .parse::<f64>()
                            .map_err(|e| bad(&e.to_string()))?,
                    )
                }
                Some("bias") => {
                    bias = Some(
                        parts
                            .next()
                            .ok_or_else(|| bad("bias value missing"))?
                            .parse::<f64>()
                            .map_err(|e| bad(&e.to_string()))?,
                    )
                }
                Some("features") => {
                    nfeat = Some(
                        parts
                            .next()
                            .ok_or_else(|| bad("feature count missing"))?
                            .parse::<usize>()
                            .map_err(|e| bad(&e.to_string()))?,
                    )
                }
                Some("ranges") => break,
                _ => return Err(bad("unexpected header line")),
            }
        }
        let nfeat = nfeat.ok_or_else(|| bad("missing feature count"))?;
        if nfeat != NUM_FEATURES {
            return Err(bad(&format!("expected {NUM_FEATURES} features, got {nfeat}")));
        }
        let mut ranges = Vec::with_capacity(nfeat);
        for _ in 0..nfeat {
            let line = lines.next().ok_or_else(|| bad("truncated ranges"))?;
            let mut parts = line.split_whitespace();
            let lo: f64 = parts
                .next()
                .ok_or_else(|| bad("range lo missing"))?
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
            let hi: f64 = parts
                .next()
                .ok_or_else(|| bad("range hi missing"))?
                .parse()
                .map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))?;
            ranges.push((lo, hi));
        }
        let sv_header = lines.next().ok_or_else(|| bad("missing support_vectors"))?;
        let mut parts = sv_header.split_whitespace();
        if parts.next() != Some("support_vectors") {
            return Err(bad("expected support_vectors block"));
        }
        let nsv: usize = parts
            .next()
            .ok_or_else(|| bad("support vector count missing"))?
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(&e.to_string()))?;
        let mut alphas = Vec::with_capacity(nsv);
        let mut support_vectors = Vec::with_capacity(nsv);
        for _ in 0..nsv {
            let line = lines.next().ok_or_else(|| bad("truncated support vectors"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if vals.len() != nfeat + 1 {
                return Err(bad("support vector arity mismatch"));
            }
            alphas.push(vals[0]);
            support_vectors.push(vals[1..].to_vec());
        }
        Ok(Self {
            version,
            gamma: gamma.ok_or_else(|| bad("missing gamma"))?,
            bias: bias.ok_or_else(|| bad("missing bias"))?,
            ranges,
            alphas,
            support_vectors,
        })
    }

    pub fn bundled() -> &'static BrisqueModel {
        static MODEL: OnceLock<BrisqueModel> = OnceLock::new();
        MODEL.get_or_init(|| BrisqueModel::parse(BUNDLED_MODEL).expect("bundled model parses"))
    }

    /// Scale a raw feature vector into [-1, 1] per the stored ranges.
    pub fn scale(&self, feats: &[f64; NUM_FEATURES]) -> Vec<f64> {
        feats
            .iter()
            .zip(self.ranges.iter())
            .map(|(&f, &(lo, hi))| {
                if hi - lo < 1e-12 {
                    0.0
                } else {
                    -1.0 + 2.0 * (f - lo) / (hi - lo)
                }
            })
            .collect()
    }

    pub fn predict(&self, feats: &[f64; NUM_FEATURES]) -> f64 {
        let scaled = self.scale(feats);
        let mut acc = self.bias;
        for (alpha, sv) in self.alphas.iter().zip(self.support_vectors.iter()) {
            let dist_sq: f64 = scaled
                .iter()
                .zip(sv.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            acc += alpha * (-self.gamma * dist_sq).exp();
        }
        acc
    }
}

/// Score an image with the bundled model. Deterministic; higher is worse.
pub fn brisque(x: &ImageTensor) -> Result<f64> {
    let feats = features(x)?;
    Ok(BrisqueModel::bundled().predict(&feats))
}

/// Score with an explicit model (for tests and custom coefficient files).
pub fn brisque_with(model: &BrisqueModel, x: &ImageTensor) -> Result<f64> {
    let feats = features(x)?;
    Ok(model.predict(&feats))
}

// ----------------------------------------------------------------------
// Reference-model fitting (kernel ridge in SVR form) on a deterministic
// synthetic degradation ladder
// ----------------------------------------------------------------------

pub mod fit {
    use super::*;
    use crate::image::synth::{render_face, SynthConfig};
    use crate::rng::substream;
    use ndarray::Array3;
    use rand::Rng;

    pub const LADDER_SEED: u64 = 20260808;

    fn texture(kind: usize, h: usize, w: usize) -> ImageTensor {
        let mut a = Array3::zeros((h, w, 3));
        for i in 0..h {
            for j in 0..w {
                let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
                let v = match kind {
                    0 => 0.5 + 0.45 * (12.0 * x).sin() * (9.0 * y).cos(),
                    1 => 0.5 + 0.4 * ((20.0 * (x + y)).sin()),
                    2 => {
                        let cx = x - 0.5;
                        let cy = y - 0.5;
                        0.5 + 0.45 * (30.0 * (cx * cx + cy * cy).sqrt()).cos()
                    }
                    3 => (0.3 + 0.6 * x * y + 0.1 * (25.0 * x).sin()).clamp(0.0, 1.0),
                    _ => {
                        let s = ((x * 8.0).floor() + (y * 8.0).floor()) as i64;
                        if s % 2 == 0 {
                            0.25 + 0.2 * (10.0 * x).sin()
                        } else {
                            0.75 - 0.2 * (10.0 * y).cos()
                        }
                    }
                };
                let v = v.clamp(0.0, 1.0);
                a[[i, j, 0]] = v;
                a[[i, j, 1]] = (v * 0.9 + 0.05).clamp(0.0, 1.0);
                a[[i, j, 2]] = (v * 1.1 - 0.03).clamp(0.0, 1.0);
            }
        }
        ImageTensor::new(a).unwrap()
    }

    fn base_images() -> Vec<ImageTensor> {
        let mut out = Vec::new();
        let cfg = SynthConfig {
            num_identities: 5,
            images_per_identity: 2,
            height: 64,
            width: 64,
            seed: LADDER_SEED,
        };
        for id in 0..5u64 {
            for k in 0..2u64 {
                out.push(render_face(&cfg, id, k));
            }
        }
        for kind in 0..5 {
            out.push(texture(kind, 64, 64));
        }
        out
    }

    fn add_gaussian_noise(x: &ImageTensor, sigma: f64, seed: u64) -> ImageTensor {
        let mut rng = substream(seed, "ladder-noise", 0);
        let data = Array3::from_shape_fn(x.data().dim(), |idx| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            (x.data()[idx] + sigma * z).clamp(0.0, 1.0)
        });
        ImageTensor::new(data).unwrap()
    }

    fn box_blur(x: &ImageTensor, passes: usize) -> ImageTensor {
        let mut data = x.data().clone();
        let (h, w, c) = data.dim();
        for _ in 0..passes {
            let src = data.clone();
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        let mut n = 0.0;
                        for di in -1i64..=1 {
                            for dj in -1i64..=1 {
                                let ii = i as i64 + di;
                                let jj = j as i64 + dj;
                                if ii >= 0 && ii < h as i64 && jj >= 0 && jj < w as i64 {
                                    acc += src[[ii as usize, jj as usize, ch]];
                                    n += 1.0;
                                }
                            }
                        }
                        data[[i, j, ch]] = acc / n;
                    }
                }
            }
        }
        ImageTensor::new(data).unwrap()
    }

    /// Heavily noise-corrupted copy used by directional sanity tests.
    pub fn degradation_test_pair(x: &ImageTensor) -> ImageTensor {
        add_gaussian_noise(x, 0.15, LADDER_SEED + 99)
    }

    /// The degradation ladder: (image, target score) pairs ordered from
    /// pristine to heavily corrupted.
    pub fn degradation_ladder() -> Vec<(ImageTensor, f64)> {
        let mut out = Vec::new();
        for (bi, base) in base_images().into_iter().enumerate() {
            let seed = LADDER_SEED + bi as u64 * 1000;
            out.push((base.clone(), 10.0));
            out.push((box_blur(&base, 1), 28.0));
            out.push((box_blur(&base, 3), 42.0));
            out.push((add_gaussian_noise(&base, 0.02, seed + 1), 35.0));
            out.push((add_gaussian_noise(&base, 0.05, seed + 2), 55.0));
            out.push((add_gaussian_noise(&base, 0.10, seed + 3), 75.0));
            out.push((add_gaussian_noise(&base, 0.20, seed + 4), 92.0));
            out.push((
                add_gaussian_noise(&box_blur(&base, 2), 0.05, seed + 5),
                62.0,
            ));
        }
        out
    }

    fn cholesky_solve(a: &mut Vec<Vec<f64>>, b: &mut [f64]) {
        let n = b.len();
        // in-place LL^T factorization
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i][j];
                for k in 0..j {
                    sum -= a[i][k] * a[j][k];
                }
                if i == j {
                    a[i][j] = sum.max(1e-12).sqrt();
                } else {
                    a[i][j] = sum / a[j][j];
                }
            }
        }
        // forward then backward substitution
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= a[i][k] * b[k];
            }
            b[i] = sum / a[i][i];
        }
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..n {
                sum -= a[k][i] * b[k];
            }
            b[i] = sum / a[i][i];
        }
    }

    /// Fit the reference model and render it in the coefficient-file format.
    pub fn fit_reference_model() -> String {
        let ladder = degradation_ladder();
        let feats: Vec<[f64; NUM_FEATURES]> = ladder
            .iter()
            .map(|(img, _)| features(img).expect("ladder image large enough"))
            .collect();
        let targets: Vec<f64> = ladder.iter().map(|(_, s)| *s).collect();

        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); NUM_FEATURES];
        for f in &feats {
            for (k, &v) in f.iter().enumerate() {
                ranges[k].0 = ranges[k].0.min(v);
                ranges[k].1 = ranges[k].1.max(v);
            }
        }
        let scale = |f: &[f64; NUM_FEATURES]| -> Vec<f64> {
            f.iter()
                .zip(ranges.iter())
                .map(|(&v, &(lo, hi))| {
                    if hi - lo < 1e-12 {
                        0.0
                    } else {
                        -1.0 + 2.0 * (v - lo) / (hi - lo)
                    }
                })
                .collect()
        };
        let scaled: Vec<Vec<f64>> = feats.iter().map(scale).collect();

        // gamma from the median pairwise squared distance
        let mut dists = Vec::new();
        for i in 0..scaled.len() {
            for j in (i + 1)..scaled.len() {
                let d: f64 = scaled[i]
                    .iter()
                    .zip(scaled[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d);
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = dists[dists.len() / 2].max(1e-9);
        let gamma = 1.0 / med;

        // kernel ridge: alpha = (K + lambda I)^-1 (y - mean)
        let n = scaled.len();
        let bias = targets.iter().sum::<f64>() / n as f64;
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let d: f64 = scaled[i]
                    .iter()
                    .zip(scaled[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                k[i][j] = (-gamma * d).exp();
            }
            k[i][i] += 1e-3;
        }
        let mut alphas: Vec<f64> = targets.iter().map(|t| t - bias).collect();
        cholesky_solve(&mut k, &mut alphas);

        let mut out = String::new();
        out.push_str("brisque-rbf-svr v1\n");
        out.push_str(&format!(
            "provenance: kernel ridge fit on the in-repo synthetic degradation ladder, seed {LADDER_SEED}\n"
        ));
        out.push_str(&format!("gamma {gamma:?}\n"));
        out.push_str(&format!("bias {bias:?}\n"));
        out.push_str(&format!("features {NUM_FEATURES}\n"));
        out.push_str("ranges\n");
        for (lo, hi) in &ranges {
            out.push_str(&format!("{lo:?} {hi:?}\n"));
        }
        out.push_str(&format!("support_vectors {n}\n"));
        for (alpha, sv) in alphas.iter().zip(scaled.iter()) {
            out.push_str(&format!("{alpha:?}"));
            for v in sv {
                out.push_str(&format!(" {v:?}"));
            }
            out.push('\n');
        }
        out
    }
}
