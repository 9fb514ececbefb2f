//! Structured outputs: per-image CSV, summary tables mirroring the
//! referenced / non-referenced assessment layout, training-curve CSVs, and
//! delta histograms rendered to PNG.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::evaluate::DisruptionReport;
use crate::image::tensor::ImageTensor;
use crate::substitute::EpochRow;
use crate::tcagan::StepRow;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-image rows for one or more methods, one CSV with a method column.
pub fn disruption_csv(reports: &[&DisruptionReport]) -> String {
    let mut out = String::from(
        "method,name,identity,swap_ssim,swap_fsim,swap_brisque_clean,swap_brisque_adv,source_ssim,source_fsim,max_perturbation\n",
    );
    for report in reports {
        for r in &report.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.6},{:.6},{:.9},{:.9},{:.9}",
                report.method,
                r.name,
                r.identity,
                r.swap_ssim,
                r.swap_fsim,
                r.swap_brisque_clean,
                r.swap_brisque_adv,
                r.source_ssim,
                r.source_fsim,
                r.max_perturbation
            );
        }
    }
    out
}

pub fn write_disruption_csv(path: &Path, reports: &[&DisruptionReport]) -> Result<()> {
    write_text(path, &disruption_csv(reports))
}

/// Summary block with the referenced table (source and face-swapping
/// columns) and the non-referenced table.
pub fn summary_tables(reports: &[&DisruptionReport]) -> String {
    let mut out = String::new();
    out.push_str("Referenced image quality (means; source = x vs x_adv, face swapping = DF(x) vs DF(x_adv))\n");
    out.push_str(&format!(
        "{:<24} {:>12} {:>12} {:>12} {:>12}\n",
        "method", "src SSIM", "src FSIM", "swap SSIM", "swap FSIM"
    ));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            r.method, r.means.source_ssim, r.means.source_fsim, r.means.swap_ssim, r.means.swap_fsim
        );
    }
    out.push('\n');
    out.push_str("Non-referenced image quality (BRISQUE means; higher = worse)\n");
    out.push_str(&format!(
        "{:<24} {:>16} {:>16}\n",
        "method", "swap original", "swap adversarial"
    ));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:>16.3} {:>16.3}",
            r.method, r.means.swap_brisque_clean, r.means.swap_brisque_adv
        );
    }
    out.push('\n');
    for r in reports {
        if !r.violations.is_empty() {
            let _ = writeln!(out, "{}: {} constraint violations", r.method, r.violations.len());
            for v in &r.violations {
                let _ = writeln!(out, "  {v}");
            }
        }
    }
    if let Some(first) = reports.first() {
        out.push_str("\nmetadata\n");
        for (k, v) in &first.metadata {
            if k != "method" {
                let _ = writeln!(out, "  {k}: {v}");
            }
        }
    }
    out
}

pub fn write_summary(path: &Path, reports: &[&DisruptionReport]) -> Result<()> {
    write_text(path, &summary_tables(reports))
}

pub fn substitute_log_csv(rows: &[EpochRow]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.9},{:.9}", r.epoch, r.train_loss, r.val_loss);
    }
    out
}

pub fn tcagan_log_csv(rows: &[StepRow]) -> String {
    let mut out = String::from("step,l_adv,l_cyc,l_disr,total\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.9}",
            r.step, r.l_adv, r.l_cyc, r.l_disr, r.total
        );
    }
    out
}

/// Render a histogram of values into a bar-chart PNG.
pub fn histogram_png(path: &Path, values: &[f64], bins: usize, title_hint: &str) -> Result<()> {
    let bins = bins.max(1);
    let (w, h) = (max_dim(bins * 8 + 16, 256), 160usize);
    let mut counts = vec![0usize; bins];
    if !values.is_empty() {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for &v in values {
            let b = (((v - lo) / span) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
    }
    let peak = counts.iter().cloned().max().unwrap_or(1).max(1);
    let mut img = Array3::from_elem((h, w, 3), 1.0);
    // frame
    for x in 0..w {
        for c in 0..3 {
            img[[h - 1, x, c]] = 0.2;
            img[[0, x, c]] = 0.9;
        }
    }
    let bar_w = (w - 16) / bins;
    for (b, &count) in counts.iter().enumerate() {
        let bar_h = ((count as f64 / peak as f64) * (h as f64 - 20.0)) as usize;
        for y in 0..bar_h {
            for x in 0..bar_w.saturating_sub(1) {
                let px = 8 + b * bar_w + x;
                let py = h - 2 - y;
                img[[py, px, 0]] = 0.15;
                img[[py, px, 1]] = 0.35;
                img[[py, px, 2]] = 0.75;
            }
        }
    }
    let _ = title_hint;
    let tensor = ImageTensor::new(img)
        .map_err(|e| Error::Evaluation(format!("histogram raster: {e}")))?;
    crate::image::io::save_png(path, &tensor)
}

fn max_dim(a: usize, b: usize) -> usize {
    a.max(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{DisruptionMeans, DisruptionRow};
    use std::collections::BTreeMap;

    fn report(method: &str) -> DisruptionReport {
        DisruptionReport {
            method: method.to_string(),
            rows: vec![DisruptionRow {
                name: "img000".into(),
                identity: "id00".into(),
                swap_ssim: 0.8,
                swap_fsim: 0.9,
                swap_brisque_clean: 30.0,
                swap_brisque_adv: 45.0,
                source_ssim: 0.95,
                source_fsim: 0.97,
                max_perturbation: 0.03,
            }],
            violations: vec![],
            means: DisruptionMeans {
                swap_ssim: 0.8,
                swap_fsim: 0.9,
                swap_brisque_clean: 30.0,
                swap_brisque_adv: 45.0,
                source_ssim: 0.95,
                source_fsim: 0.97,
            },
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn csv_has_header_and_method_column() {
        let a = report("ours");
        let b = report("pgd");
        let csv = disruption_csv(&[&a, &b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("method,name"));
        assert!(lines[1].starts_with("ours,"));
        assert!(lines[2].starts_with("pgd,"));
    }

    #[test]
    fn summary_contains_both_tables() {
        let a = report("ours");
        let text = summary_tables(&[&a]);
        assert!(text.contains("Referenced image quality"));
        assert!(text.contains("Non-referenced image quality"));
        assert!(text.contains("ours"));
    }

    #[test]
    fn histogram_renders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        histogram_png(&path, &[0.1, 0.2, 0.2, 0.3, 0.9], 8, "deltas").unwrap();
        assert!(path.exists());
        let img = crate::image::io::load_image(&path).unwrap();
        assert!(img.width() >= 256);
    }
}
