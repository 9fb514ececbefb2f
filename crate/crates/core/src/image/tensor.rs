//! Image tensors, perturbations, and the shared projection primitives.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Minimum spatial extent accepted anywhere in the pipeline.
pub const MIN_DIM: usize = 8;

/// A real-valued image grid in `[0, 1]`, stored H x W x C.
///
/// This is the universal currency of the pipeline; every constructor
/// validates the range and shape invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < MIN_DIM || w < MIN_DIM {
            return Err(Error::InvalidImage(format!(
                "spatial dims {h}x{w} below minimum {MIN_DIM}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count {c} not in {{1, 3}}"
            )));
        }
        for &v in data.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidImage("non-finite values".into()));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidImage(format!(
                    "value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn constant(h: usize, w: usize, c: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((h, w, c), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.data.dim() == other.data.dim()
    }

    /// ITU-R 601 luminance. Grayscale images pass through unchanged.
    pub fn luminance(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                out[[i, j]] = if c == 1 {
                    self.data[[i, j, 0]]
                } else {
                    0.299 * self.data[[i, j, 0]]
                        + 0.587 * self.data[[i, j, 1]]
                        + 0.114 * self.data[[i, j, 2]]
                };
            }
        }
        out
    }

    /// Largest absolute pixel difference between two images of equal shape.
    pub fn linf_distance(&self, other: &ImageTensor) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Mean absolute pixel difference.
    pub fn l1_distance(&self, other: &ImageTensor) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let n = self.data.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n)
    }
}

/// Stack images into an NCHW batch for the network kernels.
pub fn stack_nchw(images: &[&ImageTensor]) -> ndarray::Array4<f64> {
    assert!(!images.is_empty(), "empty batch");
    let (h, w, c) = images[0].data().dim();
    let mut out = ndarray::Array4::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        debug_assert_eq!(img.data().dim(), (h, w, c));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    out[[n, ch, i, j]] = img.data()[[i, j, ch]];
                }
            }
        }
    }
    out
}

/// Convert one CHW sample back to an image, clamping float spill.
pub fn image_from_chw(chw: ndarray::ArrayView3<f64>) -> Result<ImageTensor> {
    let (c, h, w) = chw.dim();
    let mut out = Array3::zeros((h, w, c));
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out[[i, j, ch]] = chw[[ch, i, j]];
            }
        }
    }
    clip_image_range(&out)
}

/// HWC residual grid into a 1CHW batch.
pub fn residual_to_nchw(r: &Array3<f64>) -> ndarray::Array4<f64> {
    let (h, w, c) = r.dim();
    let mut out = ndarray::Array4::zeros((1, c, h, w));
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out[[0, ch, i, j]] = r[[i, j, ch]];
            }
        }
    }
    out
}

/// One CHW sample into an HWC residual grid.
pub fn chw_to_residual(chw: ndarray::ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = chw.dim();
    let mut out = Array3::zeros((h, w, c));
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                out[[i, j, ch]] = chw[[ch, i, j]];
            }
        }
    }
    out
}

/// An additive residual with an enforced infinity-norm bound.
#[derive(Debug, Clone)]
pub struct Perturbation {
    data: Array3<f64>,
    bound: f64,
}

/// Slack allowed when validating the infinity-norm bound.
pub const BOUND_TOL: f64 = 1e-9;

impl Perturbation {
    pub fn new(data: Array3<f64>, bound: f64) -> Result<Self> {
        if bound <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "perturbation bound must be positive, got {bound}"
            )));
        }
        let max_abs = data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if !max_abs.is_finite() {
            return Err(Error::InvalidImage("non-finite values".into()));
        }
        if max_abs > bound + BOUND_TOL {
            return Err(Error::InvalidImage(format!(
                "perturbation max |r| = {max_abs} exceeds bound {bound}"
            )));
        }
        Ok(Self { data, bound })
    }

    pub fn zeros_like(x: &ImageTensor, bound: f64) -> Result<Self> {
        Self::new(Array3::zeros(x.data().dim()), bound)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Elementwise clamp of a residual into `[-eps, +eps]`.
pub fn clip_eps(delta: &Array3<f64>, eps: f64) -> Result<Perturbation> {
    if eps <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let clipped = delta.mapv(|v| v.clamp(-eps, eps));
    Perturbation::new(clipped, eps)
}

/// Elementwise clamp into the image range `[0, 1]`.
///
/// Rejects non-finite inputs rather than silently clamping them.
pub fn clip_image_range(x: &Array3<f64>) -> Result<ImageTensor> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidImage("non-finite values".into()));
    }
    ImageTensor::new(x.mapv(|v| v.clamp(0.0, 1.0)))
}

/// `clip_image_range(x + r)`: the only sanctioned way to combine an image
/// with a perturbation.
pub fn apply_perturbation(x: &ImageTensor, r: &Perturbation) -> Result<ImageTensor> {
    if x.data().dim() != r.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs perturbation {:?}",
            x.data().dim(),
            r.data().dim()
        )));
    }
    clip_image_range(&(x.data() + r.data()))
}
