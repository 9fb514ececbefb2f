//! dfshield: protect face photos against black-box face swapping.
//!
//! Pipeline commands: prepare a split manifest (optionally generating the
//! bundled synthetic corpus), train the substitute and the toy swap target,
//! train the adversary networks, generate attacks, evaluate disruption
//! against the black box, and run ablation matrices.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "dfshield", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Fgsm,
    Pgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CycleArg {
    None,
    Uni,
    Bi,
}

#[derive(Subcommand)]
enum Command {
    /// Build the split manifest for a corpus (optionally generating the
    /// synthetic corpus first). Splits are disjoint by construction.
    Prepare {
        /// Corpus root: one subdirectory per identity.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
        /// Generate the synthetic corpus into --data-dir first.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 2)]
        identities: usize,
        #[arg(long, default_value_t = 200)]
        images_per_identity: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.35)]
        frac_substitute: f64,
        #[arg(long, default_value_t = 0.35)]
        frac_tcagan: f64,
        #[arg(long, default_value_t = 0.30)]
        frac_eval: f64,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Train the face-reconstruction substitute on its split.
    TrainSubstitute {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 2e-4)]
        lr: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Encoder stage widths, comma separated.
        #[arg(long, default_value = "16,32,64")]
        channels: String,
    },
    /// Train the toy black-box face-swapping target (shared encoder, one
    /// decoder per identity) on the training splits.
    TrainTarget {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        identity_a: Option<String>,
        #[arg(long)]
        identity_b: Option<String>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 2e-4)]
        lr: f64,
        #[arg(long, default_value_t = 23)]
        seed: u64,
        #[arg(long, default_value = "12,24")]
        channels: String,
        /// Width of the fully-connected bottleneck (0 = pure conv).
        #[arg(long, default_value_t = 512)]
        dense_dim: usize,
    },
    /// Train the adversary networks against a frozen substitute.
    TrainTcagan {
        #[arg(long)]
        substitute: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 10.0)]
        lambda_cyc: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_disr: f64,
        #[arg(long, default_value_t = 0.03)]
        eps: f64,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 41)]
        seed: u64,
        /// Disable the latent-variable disruption term (ablation).
        #[arg(long)]
        no_latent_disruption: bool,
        /// Cycle-consistency variant (none sets lambda_cyc = 0).
        #[arg(long, value_enum, default_value_t = CycleArg::Uni)]
        cycle: CycleArg,
        /// Use weight clipping instead of the gradient penalty.
        #[arg(long)]
        weight_clip: bool,
    },
    /// Generate adversarial images for a directory of face chips. Writes
    /// one PNG per input plus a perturbation-stats sidecar. Never touches
    /// the target model.
    Attack {
        #[arg(long)]
        substitute: PathBuf,
        #[arg(long)]
        tcagan: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Emit raw generator output without post-regularization.
        #[arg(long)]
        no_postreg: bool,
        /// Route to a gradient baseline instead of the trained generator.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        /// Uniform noise at the same budget (sanity floor).
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value_t = 0.03)]
        eps: f64,
        #[arg(long, default_value_t = 0.006)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 97)]
        seed: u64,
    },
    /// Evaluate disruption of finalized adversarial images against the
    /// black-box target; emits per-image CSV, summary tables, and plots.
    Evaluate {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        adv_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "ours")]
        method_label: String,
        #[arg(long, default_value_t = 0.03)]
        eps: f64,
        #[arg(long, default_value_t = 131)]
        seed: u64,
    },
    /// Run a matrix of ablation variants end to end and emit one combined
    /// table (cycle-consistency, latent disruption, post-regularization).
    Ablate {
        /// JSON matrix: {"variants": [{"name", "cycle", "lvd", "prm"}, ...]}
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        substitute: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 0.03)]
        eps: f64,
        #[arg(long, default_value_t = 211)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            data_dir,
            out_manifest,
            synthetic,
            identities,
            images_per_identity,
            size,
            frac_substitute,
            frac_tcagan,
            frac_eval,
            seed,
        } => commands::prepare(commands::PrepareArgs {
            data_dir,
            out_manifest,
            synthetic,
            identities,
            images_per_identity,
            size,
            frac_substitute,
            frac_tcagan,
            frac_eval,
            seed,
        }),
        Command::TrainSubstitute {
            data_dir,
            manifest,
            out,
            size,
            epochs,
            batch_size,
            lr,
            seed,
            channels,
        } => commands::train_substitute(commands::TrainSubstituteArgs {
            data_dir,
            manifest,
            out,
            size,
            epochs,
            batch_size,
            lr,
            seed,
            channels,
        }),
        Command::TrainTarget {
            data_dir,
            manifest,
            out,
            size,
            identity_a,
            identity_b,
            epochs,
            batch_size,
            lr,
            seed,
            channels,
            dense_dim,
        } => commands::train_target(commands::TrainTargetArgs {
            data_dir,
            manifest,
            out,
            size,
            identity_a,
            identity_b,
            epochs,
            batch_size,
            lr,
            seed,
            channels,
            dense_dim,
        }),
        Command::TrainTcagan {
            substitute,
            data_dir,
            manifest,
            out,
            size,
            lambda_cyc,
            lambda_disr,
            eps,
            epochs,
            batch_size,
            lr,
            seed,
            no_latent_disruption,
            cycle,
            weight_clip,
        } => commands::train_tcagan(commands::TrainTcaganArgs {
            substitute,
            data_dir,
            manifest,
            out,
            size,
            lambda_cyc,
            lambda_disr,
            eps,
            epochs,
            batch_size,
            lr,
            seed,
            no_latent_disruption,
            cycle: match cycle {
                CycleArg::None => commands::CycleChoice::None,
                CycleArg::Uni => commands::CycleChoice::Unidirectional,
                CycleArg::Bi => commands::CycleChoice::Bidirectional,
            },
            weight_clip,
        }),
        Command::Attack {
            substitute,
            tcagan,
            data_dir,
            manifest,
            out_dir,
            size,
            no_postreg,
            baseline,
            noise,
            eps,
            alpha,
            iters,
            seed,
        } => commands::attack(commands::AttackArgs {
            substitute,
            tcagan,
            data_dir,
            manifest,
            out_dir,
            size,
            no_postreg,
            baseline: baseline.map(|b| match b {
                BaselineArg::Fgsm => commands::BaselineChoice::Fgsm,
                BaselineArg::Pgd => commands::BaselineChoice::Pgd,
            }),
            noise,
            eps,
            alpha,
            iters,
            seed,
        }),
        Command::Evaluate {
            target,
            clean_dir,
            adv_dir,
            manifest,
            out_dir,
            size,
            method_label,
            eps,
            seed,
        } => commands::evaluate(commands::EvaluateArgs {
            target,
            clean_dir,
            adv_dir,
            manifest,
            out_dir,
            size,
            method_label,
            eps,
            seed,
        }),
        Command::Ablate {
            config,
            substitute,
            target,
            data_dir,
            manifest,
            out_dir,
            size,
            epochs,
            eps,
            seed,
        } => commands::ablate(commands::AblateArgs {
            config,
            substitute,
            target,
            data_dir,
            manifest,
            out_dir,
            size,
            epochs,
            eps,
            seed,
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Parse "a,b,c" channel lists.
pub(crate) fn parse_channels(s: &str) -> anyhow::Result<Vec<usize>> {
    let out: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("channel list must be comma-separated integers")?;
    if out.is_empty() {
        bail!("channel list is empty");
    }
    Ok(out)
}

pub(crate) fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
