//! Command implementations. Every command writes a frozen copy of its fully
//! resolved configuration (with the crate version) next to its outputs, so
//! any artifact directory is reproducible from its own record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dfshield_core::attack::{attack_items, quantize_within_budget, AttackConfig, AttackMethod};
use dfshield_core::deepfake::{
    load_deepfake, train_deepfake, BlackBoxHandle, DeepFakeArch, DeepFakeTrainConfig,
};
use dfshield_core::evaluate::{evaluate_disruption, EvalConfig, EvalPair};
use dfshield_core::image::dataset::{FaceDataset, SplitFractions, SplitKind};
use dfshield_core::image::io::{load_image, save_png};
use dfshield_core::image::synth::{write_corpus, SynthConfig};
use dfshield_core::postreg::PostRegConfig;
use dfshield_core::report;
use dfshield_core::substitute::{
    load_substitute, train_substitute as train_substitute_core, SubstituteArch,
    SubstituteTrainConfig,
};
use dfshield_core::tcagan::{
    load_tcagan, save_tcagan, substitute_fingerprint, train_tcagan as train_tcagan_core,
    CycleMode, LipschitzMethod, TcaGanConfig,
};

use crate::{ensure_dir, parse_channels};

/// Serialize the resolved parameters of a run next to its outputs.
fn freeze_config<T: serde::Serialize>(dir: &Path, command: &str, params: &T) -> Result<()> {
    ensure_dir(dir)?;
    let record = serde_json::json!({
        "tool": "dfshield",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "parameters": params,
    });
    let path = dir.join(format!("{command}_config.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_dataset(data_dir: &Path, size: usize, manifest: Option<&Path>) -> Result<FaceDataset> {
    let mut ds = FaceDataset::load_corpus(data_dir, (size, size))
        .with_context(|| format!("loading corpus from {}", data_dir.display()))?;
    if let Some(m) = manifest {
        ds.apply_manifest(m)
            .with_context(|| format!("applying manifest {}", m.display()))?;
    }
    Ok(ds)
}

// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
pub struct PrepareArgs {
    pub data_dir: PathBuf,
    pub out_manifest: PathBuf,
    pub synthetic: bool,
    pub identities: usize,
    pub images_per_identity: usize,
    pub size: usize,
    pub frac_substitute: f64,
    pub frac_tcagan: f64,
    pub frac_eval: f64,
    pub seed: u64,
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    if args.synthetic {
        ensure_dir(&args.data_dir)?;
        write_corpus(
            &SynthConfig {
                num_identities: args.identities,
                images_per_identity: args.images_per_identity,
                height: args.size,
                width: args.size,
                seed: args.seed,
            },
            &args.data_dir,
        )?;
        println!(
            "wrote synthetic corpus: {} identities x {} images at {}x{}",
            args.identities, args.images_per_identity, args.size, args.size
        );
    }
    let mut ds = load_dataset(&args.data_dir, args.size, None)?;
    if ds.identities.len() < 2 {
        bail!(
            "swap training needs at least 2 identities, corpus has {}",
            ds.identities.len()
        );
    }
    let fractions = SplitFractions {
        train_substitute: args.frac_substitute,
        train_tcagan: args.frac_tcagan,
        attack_eval: args.frac_eval,
    };
    ds.assign_splits(&fractions, args.seed)?;
    ds.write_manifest(&args.out_manifest)?;
    println!(
        "manifest {}: train_substitute={} train_tcagan={} attack_eval={}",
        args.out_manifest.display(),
        ds.split_size(SplitKind::TrainSubstitute),
        ds.split_size(SplitKind::TrainTcagan),
        ds.split_size(SplitKind::AttackEval),
    );
    if let Some(parent) = args.out_manifest.parent() {
        if !parent.as_os_str().is_empty() {
            freeze_config(parent, "prepare", &args)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
pub struct TrainSubstituteArgs {
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub channels: String,
}

pub fn train_substitute(args: TrainSubstituteArgs) -> Result<()> {
    let ds = load_dataset(&args.data_dir, args.size, Some(&args.manifest))?;
    let arch = SubstituteArch {
        input_height: args.size,
        input_width: args.size,
        input_channels: 3,
        encoder_channels: parse_channels(&args.channels)?,
        encoder_kernel: 4,
        leaky_slope: 0.2,
    };
    let cfg = SubstituteTrainConfig {
        arch,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        checkpoint_path: Some(args.out.clone()),
        ..Default::default()
    };
    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    ensure_dir(&out_dir)?;
    let outcome = train_substitute_core(&ds, &cfg)?;
    let log_path = args.out.with_extension("curve.csv");
    std::fs::write(&log_path, report::substitute_log_csv(&outcome.log))
        .with_context(|| format!("writing {}", log_path.display()))?;
    println!(
        "substitute trained: held-out reconstruction L1 = {:.4} ({} epochs); checkpoint {}",
        outcome.final_val_l1,
        args.epochs,
        args.out.display()
    );
    freeze_config(&out_dir, "train-substitute", &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
pub struct TrainTargetArgs {
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub size: usize,
    pub identity_a: Option<String>,
    pub identity_b: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub channels: String,
    pub dense_dim: usize,
}

pub fn train_target(args: TrainTargetArgs) -> Result<()> {
    let ds = load_dataset(&args.data_dir, args.size, Some(&args.manifest))?;
    let id_a = args
        .identity_a
        .clone()
        .or_else(|| ds.identities.first().cloned())
        .context("no identities in corpus")?;
    let id_b = args
        .identity_b
        .clone()
        .or_else(|| ds.identities.get(1).cloned())
        .context("swap training needs a second identity")?;
    let decoder_side = (args.size / 8).max(4);
    let cfg = DeepFakeTrainConfig {
        arch: DeepFakeArch {
            input_height: args.size,
            input_width: args.size,
            input_channels: 3,
            encoder_channels: parse_channels(&args.channels)?,
            dense_dim: args.dense_dim,
            decoder_base: (decoder_side, 32),
        },
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        checkpoint_path: Some(args.out.clone()),
        ..Default::default()
    };
    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    ensure_dir(&out_dir)?;
    let outcome = train_deepfake(&ds, &id_a, &id_b, &cfg)?;
    println!(
        "target trained on ({id_a}, {id_b}): held-out own-identity L1 = ({:.4}, {:.4}); checkpoint {}",
        outcome.held_out_l1.0,
        outcome.held_out_l1.1,
        args.out.display()
    );
    freeze_config(&out_dir, "train-target", &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, serde::Serialize)]
pub enum CycleChoice {
    None,
    Unidirectional,
    Bidirectional,
}

#[derive(serde::Serialize)]
pub struct TrainTcaganArgs {
    pub substitute: PathBuf,
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub size: usize,
    pub lambda_cyc: f64,
    pub lambda_disr: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub no_latent_disruption: bool,
    pub cycle: CycleChoice,
    pub weight_clip: bool,
}

pub fn train_tcagan(args: TrainTcaganArgs) -> Result<()> {
    let (substitute, _) = load_substitute(&args.substitute)?;
    let ds = load_dataset(&args.data_dir, args.size, Some(&args.manifest))?;
    let out_dir = args.out.parent().unwrap_or(Path::new(".")).to_path_buf();
    ensure_dir(&out_dir)?;
    let cfg = TcaGanConfig {
        lambda_cyc: match args.cycle {
            CycleChoice::None => 0.0,
            _ => args.lambda_cyc,
        },
        lambda_disr: args.lambda_disr,
        eps: args.eps,
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        use_latent_disruption: !args.no_latent_disruption,
        cycle_mode: match args.cycle {
            CycleChoice::Bidirectional => CycleMode::Bidirectional,
            _ => CycleMode::Unidirectional,
        },
        lipschitz: if args.weight_clip {
            LipschitzMethod::WeightClip
        } else {
            LipschitzMethod::GradientPenalty
        },
        checkpoint_dir: Some(out_dir.clone()),
        ..Default::default()
    };
    let outcome = train_tcagan_core(&substitute, &ds, &cfg)?;
    save_tcagan(&args.out, &outcome.bundle, &cfg, &substitute)?;
    let log_path = args.out.with_extension("losses.csv");
    std::fs::write(&log_path, report::tcagan_log_csv(&outcome.log))
        .with_context(|| format!("writing {}", log_path.display()))?;
    let last = outcome.log.last();
    println!(
        "adversary networks trained ({} steps); final step losses: {}; checkpoint {}",
        outcome.log.len(),
        last.map(|r| format!(
            "adv {:.4} cyc {:.4} disr {:.4} total {:.4}",
            r.l_adv, r.l_cyc, r.l_disr, r.total
        ))
        .unwrap_or_else(|| "n/a".into()),
        args.out.display()
    );
    freeze_config(&out_dir, "train-tcagan", &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, serde::Serialize)]
pub enum BaselineChoice {
    Fgsm,
    Pgd,
}

#[derive(serde::Serialize)]
pub struct AttackArgs {
    pub substitute: PathBuf,
    pub tcagan: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub size: usize,
    pub no_postreg: bool,
    pub baseline: Option<BaselineChoice>,
    pub noise: bool,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub seed: u64,
}

pub fn attack(args: AttackArgs) -> Result<()> {
    if args.baseline.is_some() && args.noise {
        bail!("choose either --baseline or --noise, not both");
    }
    let (substitute, _) = load_substitute(&args.substitute)?;
    let method = if args.noise {
        AttackMethod::UniformNoise
    } else if let Some(b) = args.baseline {
        match b {
            BaselineChoice::Fgsm => AttackMethod::Fgsm,
            BaselineChoice::Pgd => AttackMethod::Pgd,
        }
    } else if args.no_postreg {
        AttackMethod::TcaGanRaw
    } else {
        AttackMethod::TcaGanRefined
    };

    let generator = if matches!(method, AttackMethod::TcaGanRaw | AttackMethod::TcaGanRefined) {
        let path = args
            .tcagan
            .as_ref()
            .context("--tcagan checkpoint is required unless --baseline or --noise is set")?;
        let (bundle, gan_cfg, header) = load_tcagan(path)?;
        let fp = substitute_fingerprint(&substitute);
        let stored = header
            .extra
            .get("substitute_fingerprint")
            .cloned()
            .unwrap_or_default();
        if stored != fp {
            bail!(
                "checkpoint mismatch: the adversary networks were trained against a different \
                 substitute (stored fingerprint {stored}, loaded substitute {fp})"
            );
        }
        if (gan_cfg.eps - args.eps).abs() > 1e-12 {
            bail!(
                "config mismatch: generator was built for eps = {} but the attack requests eps = {}",
                gan_cfg.eps,
                args.eps
            );
        }
        Some(bundle.generator)
    } else {
        None
    };

    let ds = load_dataset(&args.data_dir, args.size, args.manifest.as_deref())?;
    let items: Vec<_> = if args.manifest.is_some() {
        ds.split_items(SplitKind::AttackEval)
    } else {
        ds.items.iter().collect()
    };
    if items.is_empty() {
        println!("warning: no images to attack; nothing to do");
        return Ok(());
    }

    let cfg = AttackConfig {
        eps: args.eps,
        alpha: args.alpha,
        iters: args.iters,
        seed: args.seed,
        postreg: PostRegConfig {
            eps: args.eps,
            alpha: args.alpha,
            iters: args.iters,
            ..Default::default()
        },
    };
    let pairs = attack_items(&substitute, generator.as_ref(), &items, method, &cfg)?;

    ensure_dir(&args.out_dir)?;
    let mut stats = String::from("identity,filename,method,max_perturbation,max_perturbation_quantized\n");
    for pair in &pairs {
        let dir = args.out_dir.join(&pair.identity);
        ensure_dir(&dir)?;
        let quantized = quantize_within_budget(&pair.clean, &pair.adversarial, args.eps);
        save_png(&dir.join(&pair.name), &quantized)?;
        stats.push_str(&format!(
            "{},{},{},{:.9},{:.9}\n",
            pair.identity,
            pair.name,
            method.label(),
            pair.adversarial.linf_distance(&pair.clean)?,
            quantized.linf_distance(&pair.clean)?,
        ));
    }
    std::fs::write(args.out_dir.join("perturbation_stats.csv"), stats)
        .with_context(|| "writing perturbation stats".to_string())?;
    std::fs::write(
        args.out_dir.join("audit.txt"),
        "target_queries_during_attack: 0 (the attack stage has no access to any target model)\n",
    )?;
    println!(
        "attacked {} images with {} (eps {}, quantized to the 8-bit grid within budget)",
        pairs.len(),
        method.label(),
        args.eps
    );
    freeze_config(&args.out_dir, "attack", &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
pub struct EvaluateArgs {
    pub target: PathBuf,
    pub clean_dir: PathBuf,
    pub adv_dir: PathBuf,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub size: usize,
    pub method_label: String,
    pub eps: f64,
    pub seed: u64,
}

/// Assemble aligned pairs from two identity trees; every adversarial file
/// must match a clean file of the same identity/filename and vice versa.
fn collect_pairs(
    clean_dir: &Path,
    adv_dir: &Path,
    size: usize,
    manifest: &Path,
) -> Result<Vec<EvalPair>> {
    let clean = load_dataset(clean_dir, size, Some(manifest))?;
    let eval_items: Vec<_> = clean.split_items(SplitKind::AttackEval);
    let corpus_files: BTreeMap<(String, String), ()> = clean
        .items
        .iter()
        .map(|it| ((it.identity.clone(), it.filename.clone()), ()))
        .collect();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for it in &eval_items {
        let adv_path = adv_dir.join(&it.identity).join(&it.filename);
        if !adv_path.exists() {
            unmatched.push(format!("missing adversarial file {}", adv_path.display()));
            continue;
        }
        let adv =
            load_image(&adv_path).with_context(|| format!("loading {}", adv_path.display()))?;
        if (adv.height(), adv.width()) != (size, size) {
            unmatched.push(format!(
                "{} has size {}x{}, expected {size}x{size}",
                adv_path.display(),
                adv.height(),
                adv.width()
            ));
            continue;
        }
        pairs.push(EvalPair {
            name: it.filename.clone(),
            identity: it.identity.clone(),
            clean: it.image.clone(),
            adversarial: adv,
        });
    }
    // any adversarial files with no clean counterpart in the corpus?
    for entry in std::fs::read_dir(adv_dir).with_context(|| adv_dir.display().to_string())? {
        let entry = entry?;
        if !entry.path().is_dir() {
            continue;
        }
        let identity = entry.file_name().to_string_lossy().into_owned();
        for file in std::fs::read_dir(entry.path())? {
            let name = file?.file_name().to_string_lossy().into_owned();
            if !name.ends_with(".png") {
                continue;
            }
            if !corpus_files.contains_key(&(identity.clone(), name.clone())) {
                unmatched.push(format!(
                    "adversarial file {identity}/{name} has no matching clean image"
                ));
            }
        }
    }
    if !unmatched.is_empty() {
        bail!("unmatched filenames:\n  {}", unmatched.join("\n  "));
    }
    Ok(pairs)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    if !args.target.exists() {
        bail!("target checkpoint {} does not exist", args.target.display());
    }
    let (model, _) = load_deepfake(&args.target)?;
    let handle = BlackBoxHandle::new(model);
    let pairs = collect_pairs(&args.clean_dir, &args.adv_dir, args.size, &args.manifest)?;
    let cfg = EvalConfig::new(&args.method_label, args.eps, args.seed);
    let queries_before = handle.query_count();
    let report_out = evaluate_disruption(&handle, &pairs, &cfg)?;
    ensure_dir(&args.out_dir)?;
    report::write_disruption_csv(&args.out_dir.join("per_image.csv"), &[&report_out])?;
    report::write_summary(&args.out_dir.join("summary.txt"), &[&report_out])?;
    let deltas: Vec<f64> = report_out.rows.iter().map(|r| 1.0 - r.swap_ssim).collect();
    report::histogram_png(
        &args.out_dir.join("swap_ssim_delta_hist.png"),
        &deltas,
        16,
        "1 - swap SSIM",
    )?;
    println!(
        "evaluated {} pairs ({} rejected): mean swap SSIM {:.4}, FSIM {:.4}, BRISQUE {:.2} -> {:.2}",
        report_out.rows.len(),
        report_out.violations.len(),
        report_out.means.swap_ssim,
        report_out.means.swap_fsim,
        report_out.means.swap_brisque_clean,
        report_out.means.swap_brisque_adv,
    );
    println!(
        "black-box audit: {} queries before evaluation, {} during",
        queries_before,
        handle.query_count()
    );
    freeze_config(&args.out_dir, "evaluate", &args)?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct AblateVariant {
    name: String,
    /// "none", "uni", or "bi"
    #[serde(default = "default_cycle")]
    cycle: String,
    #[serde(default = "default_true")]
    lvd: bool,
    #[serde(default = "default_true")]
    prm: bool,
}

fn default_cycle() -> String {
    "uni".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct AblateMatrix {
    variants: Vec<AblateVariant>,
}

#[derive(serde::Serialize)]
pub struct AblateArgs {
    pub config: PathBuf,
    pub substitute: PathBuf,
    pub target: PathBuf,
    pub data_dir: PathBuf,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub size: usize,
    pub epochs: usize,
    pub eps: f64,
    pub seed: u64,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let matrix: AblateMatrix = serde_json::from_str(
        &std::fs::read_to_string(&args.config)
            .with_context(|| format!("reading {}", args.config.display()))?,
    )
    .context("parsing ablation matrix")?;
    {
        let mut seen = std::collections::BTreeSet::new();
        for v in &matrix.variants {
            if !seen.insert(v.name.clone()) {
                bail!("duplicate variant name '{}'", v.name);
            }
        }
    }
    let (substitute, _) = load_substitute(&args.substitute)?;
    let (model, _) = load_deepfake(&args.target)?;
    let ds = load_dataset(&args.data_dir, args.size, Some(&args.manifest))?;
    let eval_items = ds.split_items(SplitKind::AttackEval);
    ensure_dir(&args.out_dir)?;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for variant in &matrix.variants {
        let result = run_variant(&args, variant, &substitute, &model, &ds, &eval_items);
        match result {
            Ok(report_out) => {
                rows.push(format!(
                    "{:<28} cc={:<4} lvd={:<5} prm={:<5} swap SSIM {:.4}  FSIM {:.4}  BRISQUE {:.2}",
                    variant.name,
                    variant.cycle,
                    variant.lvd,
                    variant.prm,
                    report_out.means.swap_ssim,
                    report_out.means.swap_fsim,
                    report_out.means.swap_brisque_adv
                ));
                reports.push(report_out);
            }
            Err(e) => {
                rows.push(format!("{:<28} FAILED: {e:#}", variant.name));
            }
        }
    }
    let table = format!(
        "Ablation results ({} eval images, eps {})\n{}\n",
        eval_items.len(),
        args.eps,
        rows.join("\n")
    );
    std::fs::write(args.out_dir.join("ablation_table.txt"), &table)?;
    let refs: Vec<&dfshield_core::evaluate::DisruptionReport> = reports.iter().collect();
    if !refs.is_empty() {
        report::write_disruption_csv(&args.out_dir.join("ablation_per_image.csv"), &refs)?;
        report::write_summary(&args.out_dir.join("ablation_summary.txt"), &refs)?;
    }
    print!("{table}");
    freeze_config(&args.out_dir, "ablate", &args)?;
    Ok(())
}

fn run_variant(
    args: &AblateArgs,
    variant: &AblateVariant,
    substitute: &dfshield_core::substitute::SubstituteModel,
    model: &dfshield_core::deepfake::DeepFakeModel,
    ds: &FaceDataset,
    eval_items: &[&dfshield_core::image::dataset::DatasetItem],
) -> Result<dfshield_core::evaluate::DisruptionReport> {
    let cycle_mode = match variant.cycle.as_str() {
        "bi" => CycleMode::Bidirectional,
        "uni" | "none" => CycleMode::Unidirectional,
        other => bail!("unknown cycle type '{other}' in variant '{}'", variant.name),
    };
    let gan_cfg = TcaGanConfig {
        lambda_cyc: if variant.cycle == "none" { 0.0 } else { 10.0 },
        eps: args.eps,
        epochs: args.epochs,
        seed: args.seed,
        use_latent_disruption: variant.lvd,
        cycle_mode,
        ..Default::default()
    };
    let outcome = train_tcagan_core(substitute, ds, &gan_cfg)?;
    let attack_cfg = AttackConfig {
        eps: args.eps,
        seed: args.seed,
        ..Default::default()
    };
    let method = if variant.prm {
        AttackMethod::TcaGanRefined
    } else {
        AttackMethod::TcaGanRaw
    };
    let pairs = attack_items(
        substitute,
        Some(&outcome.bundle.generator),
        eval_items,
        method,
        &attack_cfg,
    )?;
    let handle = BlackBoxHandle::new(model.clone());
    let report_out = evaluate_disruption(
        &handle,
        &pairs,
        &EvalConfig::new(&variant.name, args.eps, args.seed),
    )?;
    Ok(report_out)
}
