//! The black-box disruption evaluation: finalized adversarial examples go
//! through the realism transform and the face-swap target, and the damage is
//! measured with referenced metrics (between the two swap outputs) and the
//! non-referenced score (of each swap output), alongside source-level
//! imperceptibility.

use std::collections::BTreeMap;

use crate::deepfake::{BlackBoxHandle, RealismTransform};
use crate::error::{Error, Result};
use crate::image::tensor::ImageTensor;
use crate::iqa::{brisque, fsim, metric_metadata, ssim};

/// One finalized attack pair queued for evaluation.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub name: String,
    pub identity: String,
    pub clean: ImageTensor,
    pub adversarial: ImageTensor,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalConfig {
    /// Perturbation budget every pair must respect.
    pub eps: f64,
    pub seed: u64,
    pub realism: RealismTransform,
    pub method_label: String,
}

impl EvalConfig {
    pub fn new(method_label: &str, eps: f64, seed: u64) -> Self {
        Self {
            eps,
            seed,
            realism: RealismTransform::default(),
            method_label: method_label.to_string(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DisruptionRow {
    pub name: String,
    pub identity: String,
    /// Referenced metrics between the two face-swap outputs.
    pub swap_ssim: f64,
    pub swap_fsim: f64,
    /// Non-referenced score of each face-swap output.
    pub swap_brisque_clean: f64,
    pub swap_brisque_adv: f64,
    /// Source-level imperceptibility: metrics between x and x_adv.
    pub source_ssim: f64,
    pub source_fsim: f64,
    pub max_perturbation: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct DisruptionMeans {
    pub swap_ssim: f64,
    pub swap_fsim: f64,
    pub swap_brisque_clean: f64,
    pub swap_brisque_adv: f64,
    pub source_ssim: f64,
    pub source_fsim: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DisruptionReport {
    pub method: String,
    pub rows: Vec<DisruptionRow>,
    /// Pairs rejected for violating the perturbation budget.
    pub violations: Vec<String>,
    pub means: DisruptionMeans,
    pub metadata: BTreeMap<String, String>,
}

/// Evaluate finalized pairs against the black-box target.
///
/// Preconditions: the handle has never been queried (the attack stage is
/// zero-query by contract), and every pair satisfies the infinity-norm
/// budget; violating pairs are rejected and recorded, not scored.
pub fn evaluate_disruption(
    handle: &BlackBoxHandle,
    pairs: &[EvalPair],
    cfg: &EvalConfig,
) -> Result<DisruptionReport> {
    if handle.query_count() != 0 {
        return Err(Error::Evaluation(format!(
            "black-box audit failed: {} queries were issued before evaluation",
            handle.query_count()
        )));
    }
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for (k, pair) in pairs.iter().enumerate() {
        let linf = pair.adversarial.linf_distance(&pair.clean)?;
        if linf > cfg.eps + 1e-6 {
            violations.push(format!(
                "{}: max |r| = {:.6} exceeds eps = {}",
                pair.name, linf, cfg.eps
            ));
            continue;
        }
        // Identical ingestion for both members of a pair: same draw.
        let params = cfg.realism.sample_params(cfg.seed, k as u64);
        let clean_in = cfg.realism.apply(&pair.clean, &params)?;
        let adv_in = cfg.realism.apply(&pair.adversarial, &params)?;
        let swap_clean = handle.face_swap(&clean_in, &pair.identity)?;
        let swap_adv = handle.face_swap(&adv_in, &pair.identity)?;
        rows.push(DisruptionRow {
            name: pair.name.clone(),
            identity: pair.identity.clone(),
            swap_ssim: ssim(&swap_clean, &swap_adv)?,
            swap_fsim: fsim(&swap_clean, &swap_adv)?,
            swap_brisque_clean: brisque(&swap_clean)?,
            swap_brisque_adv: brisque(&swap_adv)?,
            source_ssim: ssim(&pair.clean, &pair.adversarial)?,
            source_fsim: fsim(&pair.clean, &pair.adversarial)?,
            max_perturbation: linf,
        });
    }
    let means = compute_means(&rows);
    let mut metadata = metric_metadata();
    metadata.insert("method".to_string(), cfg.method_label.clone());
    metadata.insert("eps".to_string(), format!("{}", cfg.eps));
    metadata.insert("eval_seed".to_string(), format!("{}", cfg.seed));
    metadata.insert(
        "realism_transform".to_string(),
        format!(
            "resize round-trip x{}, rotation <= {} deg, shift <= {}",
            cfg.realism.resize_factor, cfg.realism.max_rotation_deg, cfg.realism.max_shift
        ),
    );
    metadata.insert(
        "target_arch".to_string(),
        handle.arch_description(),
    );
    metadata.insert(
        "target_queries_during_eval".to_string(),
        handle.query_count().to_string(),
    );
    Ok(DisruptionReport {
        method: cfg.method_label.clone(),
        rows,
        violations,
        means,
        metadata,
    })
}

fn compute_means(rows: &[DisruptionRow]) -> DisruptionMeans {
    if rows.is_empty() {
        return DisruptionMeans::default();
    }
    let n = rows.len() as f64;
    DisruptionMeans {
        swap_ssim: rows.iter().map(|r| r.swap_ssim).sum::<f64>() / n,
        swap_fsim: rows.iter().map(|r| r.swap_fsim).sum::<f64>() / n,
        swap_brisque_clean: rows.iter().map(|r| r.swap_brisque_clean).sum::<f64>() / n,
        swap_brisque_adv: rows.iter().map(|r| r.swap_brisque_adv).sum::<f64>() / n,
        source_ssim: rows.iter().map(|r| r.source_ssim).sum::<f64>() / n,
        source_fsim: rows.iter().map(|r| r.source_fsim).sum::<f64>() / n,
    }
}
