//! Referenced (SSIM, FSIM) and non-referenced (BRISQUE) image quality
//! metrics. All metrics operate on luminance, are deterministic, and carry
//! their parameters into every report for comparability across runs.

pub mod brisque;
pub mod fsim;
pub mod ssim;

use std::collections::BTreeMap;

use crate::error::Result;
use crate::image::tensor::ImageTensor;

pub use brisque::{brisque, brisque_with, BrisqueModel};
pub use fsim::fsim;
pub use ssim::ssim;

/// Quality report for one reference/test image pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IqaReport {
    pub ssim: f64,
    pub fsim: f64,
    pub brisque_ref: f64,
    pub brisque_test: f64,
    pub metadata: BTreeMap<String, String>,
}

/// The metric parameters in force, recorded verbatim in reports.
pub fn metric_metadata() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert(
        "ssim".to_string(),
        format!(
            "gaussian window {} sigma {} k1 {} k2 {} range {} on luminance",
            ssim::WINDOW,
            ssim::SIGMA,
            ssim::K1,
            ssim::K2,
            ssim::DYNAMIC_RANGE
        ),
    );
    m.insert(
        "fsim".to_string(),
        format!(
            "{} scales x {} orientations, minwl {}, mult {}, sigmaOnf {}, T1 {}, T2 {}, scharr gradient, luminance x255",
            fsim::NSCALE,
            fsim::NORIENT,
            fsim::MIN_WAVELENGTH,
            fsim::MULT,
            fsim::SIGMA_ONF,
            fsim::T1,
            fsim::T2
        ),
    );
    let model = brisque::BrisqueModel::bundled();
    m.insert(
        "brisque".to_string(),
        format!(
            "36 NSS features, 2 scales, model '{}' ({} support vectors, gamma {:.6})",
            model.version,
            model.support_vectors.len(),
            model.gamma
        ),
    );
    m
}

/// Evaluate all metrics on a pair.
pub fn evaluate_pair(reference: &ImageTensor, test: &ImageTensor) -> Result<IqaReport> {
    Ok(IqaReport {
        ssim: ssim(reference, test)?,
        fsim: fsim(reference, test)?,
        brisque_ref: brisque(reference)?,
        brisque_test: brisque(test)?,
        metadata: metric_metadata(),
    })
}
