//! The cycle adversary network: a perturbation generator and a perturbation
//! remover trained as a min-max game against two domain critics, with the
//! frozen substitute supplying the disruption signal on both the latent and
//! the pixel level.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4};

use crate::baselines::{pgd_attack, BaselineConfig};
use crate::error::{Error, Result};
use crate::image::tensor::{
    apply_perturbation, chw_to_residual, stack_nchw, ImageTensor, Perturbation,
};
use crate::image::{FaceDataset, SplitKind};
use crate::nn::{
    read_checkpoint, write_checkpoint, Activation, Adam, Arr, CheckpointHeader, ConvLayer,
    ConvSpec, LinearLayer, Tape, Var,
};
use crate::rng::{fnv1a, substream};
use crate::substitute::{config_hash_of, SubstituteModel};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// Encoder-decoder generator with skip connections.
#[derive(Debug, Clone)]
pub struct UNet {
    pub enc: Vec<ConvLayer>,
    pub dec: Vec<ConvLayer>,
    pub out: ConvLayer,
}

pub struct UNetBinding {
    enc: Vec<(Var, Var)>,
    dec: Vec<(Var, Var)>,
    out: (Var, Var),
}

impl UNet {
    /// `channels` are the encoder stage widths; the decoder mirrors them and
    /// receives skip concatenations from every non-bottleneck stage.
    pub fn init(in_ch: usize, out_ch: usize, channels: &[usize], seed: u64, label: &str) -> Self {
        assert!(channels.len() >= 2, "unet needs at least two stages");
        let act = Activation::LeakyRelu(0.2);
        let mut rng = substream(seed, label, 0);
        let mut enc = Vec::new();
        let mut prev = in_ch;
        for &ch in channels {
            enc.push(ConvLayer::init(ConvSpec::down(prev, ch, act), &mut rng));
            prev = ch;
        }
        let s = channels.len();
        let mut dec = Vec::new();
        // dec[0] consumes the bottleneck; later stages consume concat(up, skip).
        for i in 0..s {
            let (cin, cout) = if i == 0 {
                (channels[s - 1], channels[s - 2])
            } else if i < s - 1 {
                (2 * channels[s - 1 - i], channels[s - 2 - i])
            } else {
                (2 * channels[0], channels[0])
            };
            dec.push(ConvLayer::init(ConvSpec::up(cin, cout, act), &mut rng));
        }
        let out = ConvLayer::init(ConvSpec::same(channels[0], out_ch, Activation::None), &mut rng);
        Self { enc, dec, out }
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> UNetBinding {
        let mut bind_layer = |l: &ConvLayer| {
            if trainable {
                (t.leaf(l.w.clone()), t.leaf(l.b.clone()))
            } else {
                (t.constant(l.w.clone()), t.constant(l.b.clone()))
            }
        };
        UNetBinding {
            enc: self.enc.iter().map(&mut bind_layer).collect(),
            dec: self.dec.iter().map(&mut bind_layer).collect(),
            out: bind_layer(&self.out),
        }
    }

    pub fn binding_vars(b: &UNetBinding) -> Vec<Var> {
        b.enc
            .iter()
            .chain(b.dec.iter())
            .chain(std::iter::once(&b.out))
            .flat_map(|&(w, bias)| [w, bias])
            .collect()
    }

    pub fn forward_tape(&self, t: &mut Tape, x: Var, b: &UNetBinding) -> Var {
        let s = self.enc.len();
        let mut skips = Vec::with_capacity(s);
        let mut cur = x;
        for (layer, &(w, bias)) in self.enc.iter().zip(b.enc.iter()) {
            cur = layer.forward_tape(t, cur, w, bias);
            skips.push(cur);
        }
        for (i, (layer, &(w, bias))) in self.dec.iter().zip(b.dec.iter()).enumerate() {
            cur = layer.forward_tape(t, cur, w, bias);
            if i < s - 1 {
                cur = t.concat_channels(cur, skips[s - 2 - i]);
            }
        }
        self.out.forward_tape(t, cur, b.out.0, b.out.1)
    }

    pub fn forward_infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let s = self.enc.len();
        let mut skips = Vec::with_capacity(s);
        let mut cur = x.clone();
        for layer in &self.enc {
            cur = layer.forward_infer(&cur);
            skips.push(cur.clone());
        }
        for (i, layer) in self.dec.iter().enumerate() {
            cur = layer.forward_infer(&cur);
            if i < s - 1 {
                cur = ndarray::concatenate(
                    ndarray::Axis(1),
                    &[cur.view(), skips[s - 2 - i].view()],
                )
                .expect("skip concat");
            }
        }
        self.out.forward_infer(&cur)
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter().enumerate() {
            out.push((format!("{prefix}.enc.{i}.w"), &l.w));
            out.push((format!("{prefix}.enc.{i}.b"), &l.b));
        }
        for (i, l) in self.dec.iter().enumerate() {
            out.push((format!("{prefix}.dec.{i}.w"), &l.w));
            out.push((format!("{prefix}.dec.{i}.b"), &l.b));
        }
        out.push((format!("{prefix}.out.w"), &self.out.w));
        out.push((format!("{prefix}.out.b"), &self.out.b));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.iter_mut().enumerate() {
            out.push((format!("{prefix}.enc.{i}.w"), &mut l.w));
            out.push((format!("{prefix}.enc.{i}.b"), &mut l.b));
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            out.push((format!("{prefix}.dec.{i}.w"), &mut l.w));
            out.push((format!("{prefix}.dec.{i}.b"), &mut l.b));
        }
        out.push((format!("{prefix}.out.w"), &mut self.out.w));
        out.push((format!("{prefix}.out.b"), &mut self.out.b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params("p").iter().map(|(_, a)| a.len()).sum()
    }
}

/// Produces the bounded adversarial perturbation: `eps * tanh(unet(x))`, so
/// the infinity-norm bound holds architecturally for every input.
#[derive(Debug, Clone)]
pub struct AdversaryGenerator {
    pub net: UNet,
    pub output_bound: f64,
}

impl AdversaryGenerator {
    pub fn forward_infer(&self, x: &Array4<f64>) -> Array4<f64> {
        let raw = self.net.forward_infer(x);
        raw.mapv(|v| self.output_bound * v.tanh())
    }

    pub fn forward_tape(&self, t: &mut Tape, x: Var, b: &UNetBinding) -> Var {
        let raw = self.net.forward_tape(t, x, b);
        let th = t.tanh(raw);
        t.scale(th, self.output_bound)
    }
}

/// Estimates the perturbation carried by an (adversarial) input.
#[derive(Debug, Clone)]
pub struct AdversaryRemover {
    pub net: UNet,
}

impl AdversaryRemover {
    pub fn forward_infer(&self, x: &Array4<f64>) -> Array4<f64> {
        self.net.forward_infer(x)
    }

    pub fn forward_tape(&self, t: &mut Tape, x: Var, b: &UNetBinding) -> Var {
        self.net.forward_tape(t, x, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CriticDomain {
    Legitimate,
    Adversarial,
}

/// Unbounded scalar critic: strided conv stages and a linear head.
#[derive(Debug, Clone)]
pub struct DomainDiscriminator {
    pub stack: Vec<ConvLayer>,
    pub fc: LinearLayer,
    pub domain: CriticDomain,
    input_hw: (usize, usize),
}

pub struct CriticBinding {
    stack: Vec<(Var, Var)>,
    fc: (Var, Var),
}

impl DomainDiscriminator {
    pub fn init(
        in_ch: usize,
        channels: &[usize],
        input_hw: (usize, usize),
        domain: CriticDomain,
        seed: u64,
        label: &str,
    ) -> Self {
        let mut rng = substream(seed, label, 0);
        let mut stack = Vec::new();
        let mut prev = in_ch;
        for &ch in channels {
            stack.push(ConvLayer::init(
                ConvSpec::down(prev, ch, Activation::LeakyRelu(0.2)),
                &mut rng,
            ));
            prev = ch;
        }
        let s = channels.len();
        let feat = channels[s - 1] * (input_hw.0 >> s) * (input_hw.1 >> s);
        let fc = LinearLayer::init(feat, 1, &mut rng);
        Self {
            stack,
            fc,
            domain,
            input_hw,
        }
    }

    fn feat_shape(&self) -> (usize, usize, usize) {
        let s = self.stack.len();
        (
            self.stack[s - 1].spec.out_ch,
            self.input_hw.0 >> s,
            self.input_hw.1 >> s,
        )
    }

    pub fn bind(&self, t: &mut Tape, trainable: bool) -> CriticBinding {
        let mut bind_layer = |w: &Arr, b: &Arr| {
            if trainable {
                (t.leaf(w.clone()), t.leaf(b.clone()))
            } else {
                (t.constant(w.clone()), t.constant(b.clone()))
            }
        };
        CriticBinding {
            stack: self.stack.iter().map(|l| bind_layer(&l.w, &l.b)).collect(),
            fc: bind_layer(&self.fc.w, &self.fc.b),
        }
    }

    pub fn binding_vars(b: &CriticBinding) -> Vec<Var> {
        b.stack
            .iter()
            .chain(std::iter::once(&b.fc))
            .flat_map(|&(w, bias)| [w, bias])
            .collect()
    }

    /// Forward returning the score `[n, 1]` plus the pre-activation nodes of
    /// every conv stage (needed to build the input-gradient graph).
    fn forward_parts(&self, t: &mut Tape, x: Var, b: &CriticBinding) -> (Var, Vec<Var>) {
        let mut pre = Vec::new();
        let mut cur = x;
        for (layer, &(w, bias)) in self.stack.iter().zip(b.stack.iter()) {
            let z = t.conv2d(cur, w, Some(bias), layer.spec.stride, layer.spec.pad);
            pre.push(z);
            cur = layer.spec.act.apply_tape(t, z);
        }
        let n = t.value(cur).shape()[0];
        let (c, h, w) = self.feat_shape();
        let flat = t.reshape(cur, &[n, c * h * w]);
        let score = t.linear(flat, b.fc.0, Some(b.fc.1));
        (score, pre)
    }

    pub fn forward_tape(&self, t: &mut Tape, x: Var, b: &CriticBinding) -> Var {
        self.forward_parts(t, x, b).0
    }

    pub fn score_batch(&self, x: &Array4<f64>) -> Array1<f64> {
        let mut t = Tape::new();
        let b = self.bind(&mut t, false);
        let xv = t.constant(x.clone().into_dyn());
        let y = self.forward_tape(&mut t, xv, &b);
        Array1::from_iter(t.value(y).iter().cloned())
    }

    /// Build the gradient of the critic's summed score w.r.t. `x` as tape
    /// nodes, differentiable w.r.t. the critic parameters. Activation masks
    /// are piecewise constant and enter as constants, which is exact almost
    /// everywhere.
    pub fn input_grad_graph(&self, t: &mut Tape, x: Var, b: &CriticBinding) -> Var {
        let (_, pre) = self.forward_parts(t, x, b);
        let n = t.value(x).shape()[0];
        let (c, h, w) = self.feat_shape();

        let ones = t.constant(ndarray::Array2::<f64>::ones((n, 1)).into_dyn());
        let gflat = t.linear_input_grad(ones, b.fc.0);
        let mut g = t.reshape(gflat, &[n, c, h, w]);

        // Track per-layer input sizes going forward to invert them here.
        let mut sizes = Vec::new();
        let mut cur_hw = self.input_hw;
        for layer in &self.stack {
            sizes.push(cur_hw);
            cur_hw = (cur_hw.0 >> 1, cur_hw.1 >> 1);
            let _ = layer;
        }

        for (i, layer) in self.stack.iter().enumerate().rev() {
            let alpha = match layer.spec.act {
                Activation::LeakyRelu(a) => a,
                Activation::Relu => 0.0,
                _ => unreachable!("critic stages use leaky relu"),
            };
            let mask = t.value(pre[i]).mapv(|v| if v > 0.0 { 1.0 } else { alpha });
            let mask = t.constant(mask);
            g = t.mul_no_grad_rhs(g, mask);
            let (ih, iw) = sizes[i];
            g = t.conv_input_grad(g, b.stack[i].0, layer.spec.stride, layer.spec.pad, ih, iw);
        }
        g
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.stack.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &l.w));
            out.push((format!("{prefix}.{i}.b"), &l.b));
        }
        out.push((format!("{prefix}.fc.w"), &self.fc.w));
        out.push((format!("{prefix}.fc.b"), &self.fc.b));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Arr)> {
        let mut out = Vec::new();
        for (i, l) in self.stack.iter_mut().enumerate() {
            out.push((format!("{prefix}.{i}.w"), &mut l.w));
            out.push((format!("{prefix}.{i}.b"), &mut l.b));
        }
        out.push((format!("{prefix}.fc.w"), &mut self.fc.w));
        out.push((format!("{prefix}.fc.b"), &mut self.fc.b));
        out
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LipschitzMethod {
    GradientPenalty,
    WeightClip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CycleMode {
    Unidirectional,
    /// Adds a reverse cycle on adversarial examples regenerated by PGD at
    /// every iteration. Ablation configuration.
    Bidirectional,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TcaGanConfig {
    pub lambda_cyc: f64,
    pub lambda_disr: f64,
    pub eps: f64,
    /// 0 = auto: 1 for gradient penalty, 5 for weight clipping.
    pub critic_steps_per_gen_step: usize,
    pub lipschitz: LipschitzMethod,
    pub gp_coef: f64,
    pub weight_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Critic learning rate; defaults to `lr` when unset.
    #[serde(default)]
    pub critic_lr: Option<f64>,
    pub seed: u64,
    /// Include the latent term of the disruption loss (the latent variable
    /// disruption ablation switch).
    pub use_latent_disruption: bool,
    pub cycle_mode: CycleMode,
    pub gen_channels: Vec<usize>,
    pub critic_channels: Vec<usize>,
    /// Epoch snapshots are written here so divergence retains the last good
    /// bundle.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TcaGanConfig {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_disr: 1.0,
            eps: 0.03,
            critic_steps_per_gen_step: 0,
            lipschitz: LipschitzMethod::GradientPenalty,
            gp_coef: 10.0,
            weight_clip: 0.01,
            epochs: 12,
            batch_size: 16,
            lr: 1e-4,
            critic_lr: None,
            seed: 41,
            use_latent_disruption: true,
            cycle_mode: CycleMode::Unidirectional,
            gen_channels: vec![16, 32, 64],
            critic_channels: vec![12, 24, 48],
            checkpoint_dir: None,
        }
    }
}

impl TcaGanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cyc < 0.0 || self.lambda_disr < 0.0 {
            return Err(Error::InvalidConfig("lambdas must be >= 0".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.gen_channels.len() < 2 || self.critic_channels.is_empty() {
            return Err(Error::InvalidConfig(
                "generator needs >= 2 stages, critic >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn effective_critic_steps(&self) -> usize {
        if self.critic_steps_per_gen_step > 0 {
            self.critic_steps_per_gen_step
        } else {
            match self.lipschitz {
                LipschitzMethod::GradientPenalty => 1,
                LipschitzMethod::WeightClip => 5,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Loss evaluators (inference side; the training loop builds the same
// formulas on the tape)
// ---------------------------------------------------------------------------

/// Disruption loss from precomputed mean-L1 gaps.
pub fn loss_disr_from_gaps(latent_gap: f64, pixel_gap: f64) -> f64 {
    (-latent_gap).exp() + (-pixel_gap).exp()
}

/// `exp(-mean|S_e(x) - S_e(x_adv)|) + exp(-mean|S(x) - S(x_adv)|)`.
/// Equals 2 exactly when `x_adv == x`, and decreases toward 0 as either
/// discrepancy grows.
pub fn loss_disr(s: &SubstituteModel, x: &ImageTensor, x_adv: &ImageTensor) -> Result<f64> {
    let zx = s.encode_batch(&stack_nchw(&[x]));
    let za = s.encode_batch(&stack_nchw(&[x_adv]));
    let sx = s.decode_batch(&zx);
    let sa = s.decode_batch(&za);
    let l1 = |a: &Array4<f64>, b: &Array4<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
    };
    Ok(loss_disr_from_gaps(l1(&zx, &za), l1(&sx, &sa)))
}

/// Mean-L1 between the remover's estimate and the true perturbation.
pub fn loss_cyc_terms(estimate: &Array4<f64>, r: &Array4<f64>) -> f64 {
    estimate
        .iter()
        .zip(r.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / r.len() as f64
}

/// `mean|G_R(x + G_P(x)) - G_P(x)|`.
pub fn loss_cyc(
    gen: &AdversaryGenerator,
    rem: &AdversaryRemover,
    x: &ImageTensor,
) -> Result<f64> {
    let xb = stack_nchw(&[x]);
    let r = gen.forward_infer(&xb);
    let x_adv = (&xb + &r).mapv(|v| v.clamp(0.0, 1.0));
    let est = rem.forward_infer(&x_adv);
    Ok(loss_cyc_terms(&est, &r))
}

/// `D_L(x_adv) - D_L(x) + D_A(x_adv - G_R(x_adv)) - D_A(x_adv)`, each term a
/// batch mean. Generators minimize it, critics maximize it.
pub fn loss_adv(
    d_l: &DomainDiscriminator,
    d_a: &DomainDiscriminator,
    rem: &AdversaryRemover,
    x: &ImageTensor,
    x_adv: &ImageTensor,
) -> Result<f64> {
    let xb = stack_nchw(&[x]);
    let ab = stack_nchw(&[x_adv]);
    let removed = &ab - &rem.forward_infer(&ab);
    let mean = |v: Array1<f64>| -> f64 { v.sum() / v.len() as f64 };
    Ok(mean(d_l.score_batch(&ab)) - mean(d_l.score_batch(&xb)) + mean(d_a.score_batch(&removed))
        - mean(d_a.score_batch(&ab)))
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub adv: f64,
    pub cyc: f64,
    pub disr: f64,
}

/// `L = L_adv + lambda_cyc * L_cyc + lambda_disr * L_disr`.
pub fn total_loss(cfg: &TcaGanConfig, parts: LossParts) -> f64 {
    parts.adv + cfg.lambda_cyc * parts.cyc + cfg.lambda_disr * parts.disr
}

/// Single forward pass of the trained generator; no target-model queries.
pub fn generate_perturbation(gen: &AdversaryGenerator, x: &ImageTensor) -> Result<Perturbation> {
    let r = gen.forward_infer(&stack_nchw(&[x]));
    let grid = chw_to_residual(r.index_axis(ndarray::Axis(0), 0));
    Perturbation::new(grid, gen.output_bound)
}

/// Generator output applied to the image: `clip01(x + G_P(x))`.
pub fn adversarial_example(gen: &AdversaryGenerator, x: &ImageTensor) -> Result<ImageTensor> {
    let r = generate_perturbation(gen, x)?;
    apply_perturbation(x, &r)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TcaGanBundle {
    pub generator: AdversaryGenerator,
    pub remover: AdversaryRemover,
    pub critic_legit: DomainDiscriminator,
    pub critic_adv: DomainDiscriminator,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRow {
    pub step: usize,
    pub l_adv: f64,
    pub l_cyc: f64,
    pub l_disr: f64,
    pub total: f64,
}

#[derive(Debug)]
pub struct TcaGanTrainOutcome {
    pub bundle: TcaGanBundle,
    pub log: Vec<StepRow>,
}

fn init_bundle(cfg: &TcaGanConfig, in_hw: (usize, usize), in_ch: usize) -> TcaGanBundle {
    TcaGanBundle {
        generator: AdversaryGenerator {
            net: UNet::init(in_ch, in_ch, &cfg.gen_channels, cfg.seed, "tcagan-init-gp"),
            output_bound: cfg.eps,
        },
        remover: AdversaryRemover {
            net: UNet::init(in_ch, in_ch, &cfg.gen_channels, cfg.seed, "tcagan-init-gr"),
        },
        critic_legit: DomainDiscriminator::init(
            in_ch,
            &cfg.critic_channels,
            in_hw,
            CriticDomain::Legitimate,
            cfg.seed,
            "tcagan-init-dl",
        ),
        critic_adv: DomainDiscriminator::init(
            in_ch,
            &cfg.critic_channels,
            in_hw,
            CriticDomain::Adversarial,
            cfg.seed,
            "tcagan-init-da",
        ),
    }
}

/// One maximization step for both critics (they minimize `-L_adv` plus the
/// Lipschitz regularizer).
fn critic_step(
    bundle: &mut TcaGanBundle,
    opt: &mut Adam,
    cfg: &TcaGanConfig,
    x: &Array4<f64>,
    step_seed: u64,
) -> Result<()> {
    let r = bundle.generator.forward_infer(x);
    let x_adv = (x + &r).mapv(|v| v.clamp(0.0, 1.0));
    let est = bundle.remover.forward_infer(&x_adv);
    let removed = &x_adv - &est;

    let mut t = Tape::new();
    let dl_b = bundle.critic_legit.bind(&mut t, true);
    let da_b = bundle.critic_adv.bind(&mut t, true);
    let xv = t.constant(x.clone().into_dyn());
    let av = t.constant(x_adv.clone().into_dyn());
    let rv = t.constant(removed.clone().into_dyn());

    let s_adv = bundle.critic_legit.forward_tape(&mut t, av, &dl_b);
    let s_x = bundle.critic_legit.forward_tape(&mut t, xv, &dl_b);
    let s_rem = bundle.critic_adv.forward_tape(&mut t, rv, &da_b);
    let s_adv2 = bundle.critic_adv.forward_tape(&mut t, av, &da_b);
    let m_adv = t.mean_all(s_adv);
    let m_x = t.mean_all(s_x);
    let m_rem = t.mean_all(s_rem);
    let m_adv2 = t.mean_all(s_adv2);
    let d1 = t.sub(m_adv, m_x);
    let d2 = t.sub(m_rem, m_adv2);
    let l_adv = t.add(d1, d2);
    let mut critic_loss = t.neg(l_adv);

    if cfg.lipschitz == LipschitzMethod::GradientPenalty {
        let n = x.dim().0;
        let mut rng = substream(cfg.seed, "tcagan-gp-interp", step_seed);
        let mut mix = |a: &Array4<f64>, b: &Array4<f64>| -> Array4<f64> {
            let mut out = a.clone();
            for i in 0..n {
                use rand::Rng;
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut slice = out.index_axis_mut(ndarray::Axis(0), i);
                slice.zip_mut_with(&b.index_axis(ndarray::Axis(0), i), |av, &bv| {
                    *av = u * *av + (1.0 - u) * bv;
                });
            }
            out
        };
        let interp_l = t.constant(mix(x, &x_adv).into_dyn());
        let g_l = bundle
            .critic_legit
            .input_grad_graph(&mut t, interp_l, &dl_b);
        let gp_l = gradient_penalty(&mut t, g_l);
        let interp_a = t.constant(mix(&removed, &x_adv).into_dyn());
        let g_a = bundle.critic_adv.input_grad_graph(&mut t, interp_a, &da_b);
        let gp_a = gradient_penalty(&mut t, g_a);
        let gp = t.add(gp_l, gp_a);
        let gp = t.scale(gp, cfg.gp_coef);
        critic_loss = t.add(critic_loss, gp);
    }

    let loss_val = t.scalar(critic_loss);
    if !loss_val.is_finite() {
        return Err(Error::Diverged("critic loss became non-finite".into()));
    }

    let mut grads = t.backward(critic_loss);
    let vars: Vec<Var> = DomainDiscriminator::binding_vars(&dl_b)
        .into_iter()
        .chain(DomainDiscriminator::binding_vars(&da_b))
        .collect();
    let grad_list: Vec<Option<Arr>> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut params = bundle.critic_legit.named_params_mut("dl");
    params.extend(bundle.critic_adv.named_params_mut("da"));
    let mut refs: Vec<&mut Arr> = params.iter_mut().map(|(_, p)| &mut **p).collect();
    opt.step(&mut refs, &grad_list);

    if cfg.lipschitz == LipschitzMethod::WeightClip {
        let c = cfg.weight_clip;
        for (_, p) in bundle
            .critic_legit
            .named_params_mut("dl")
            .into_iter()
            .chain(bundle.critic_adv.named_params_mut("da"))
        {
            p.mapv_inplace(|v| v.clamp(-c, c));
        }
    }

    Ok(())
}

fn gradient_penalty(t: &mut Tape, g: Var) -> Var {
    let sq = t.square(g);
    let ps = t.sum_per_sample(sq);
    let shifted = t.add_scalar(ps, 1e-12);
    let norm = t.sqrt(shifted);
    let centered = t.add_scalar(norm, -1.0);
    let pen = t.square(centered);
    t.mean_all(pen)
}

struct GenStepOutcome {
    l_adv: f64,
    l_cyc: f64,
    l_disr: f64,
    total: f64,
}

/// One minimization step for both generators against frozen critics and the
/// frozen substitute.
#[allow(clippy::too_many_arguments)]
fn generator_step(
    bundle: &mut TcaGanBundle,
    substitute: &SubstituteModel,
    opt: &mut Adam,
    cfg: &TcaGanConfig,
    x: &Array4<f64>,
    se_x: &Arr,
    s_x: &Arr,
    x_pgd: Option<&Array4<f64>>,
) -> Result<GenStepOutcome> {
    let mut t = Tape::new();
    let gp_b = bundle.generator.net.bind(&mut t, true);
    let gr_b = bundle.remover.net.bind(&mut t, true);
    let dl_b = bundle.critic_legit.bind(&mut t, false);
    let da_b = bundle.critic_adv.bind(&mut t, false);
    let enc_b = substitute.bind_encoder(&mut t, false);
    let dec_b = substitute.bind_decoder(&mut t, false);

    let xv = t.constant(x.clone().into_dyn());
    let r = bundle.generator.forward_tape(&mut t, xv, &gp_b);
    let sum = t.add(xv, r);
    let x_adv = t.clamp01(sum);

    // Disruption: drive both the latent code and the reconstruction of the
    // adversarial example away from their clean anchors.
    let se_adv = substitute.encode_tape(&mut t, x_adv, &enc_b);
    let se_anchor = t.constant(se_x.clone());
    let latent_gap = t.l1_mean(se_adv, se_anchor);
    let s_adv = substitute.decoder.forward_tape(&mut t, se_adv, &dec_b);
    let s_anchor = t.constant(s_x.clone());
    let pixel_gap = t.l1_mean(s_adv, s_anchor);
    let neg_pixel = t.neg(pixel_gap);
    let e_pixel = t.exp(neg_pixel);
    let l_disr = if cfg.use_latent_disruption {
        let neg_latent = t.neg(latent_gap);
        let e_latent = t.exp(neg_latent);
        t.add(e_latent, e_pixel)
    } else {
        e_pixel
    };

    // Unidirectional cycle: recover the perturbation that was just added.
    let est = bundle.remover.forward_tape(&mut t, x_adv, &gr_b);
    let mut l_cyc = t.l1_mean(est, r);

    // Bidirectional ablation: an extra cycle on independently generated
    // adversarial examples, regenerated by PGD for every step.
    if let Some(x_pgd) = x_pgd {
        let pv = t.constant(x_pgd.clone().into_dyn());
        let est2 = bundle.remover.forward_tape(&mut t, pv, &gr_b);
        let clean2 = t.sub(pv, est2);
        let r2 = bundle.generator.forward_tape(&mut t, clean2, &gp_b);
        let cyc2 = t.l1_mean(r2, est2);
        let both = t.add(l_cyc, cyc2);
        l_cyc = t.scale(both, 0.5);
    }

    // Adversarial term with frozen critics; gradients flow through the
    // critics into both generators.
    let s_adv_l = bundle.critic_legit.forward_tape(&mut t, x_adv, &dl_b);
    let s_x_l = bundle.critic_legit.forward_tape(&mut t, xv, &dl_b);
    let removed = t.sub(x_adv, est);
    let s_rem_a = bundle.critic_adv.forward_tape(&mut t, removed, &da_b);
    let s_adv_a = bundle.critic_adv.forward_tape(&mut t, x_adv, &da_b);
    let m1 = t.mean_all(s_adv_l);
    let m2 = t.mean_all(s_x_l);
    let m3 = t.mean_all(s_rem_a);
    let m4 = t.mean_all(s_adv_a);
    let d1 = t.sub(m1, m2);
    let d2 = t.sub(m3, m4);
    let l_adv = t.add(d1, d2);

    let cyc_w = t.scale(l_cyc, cfg.lambda_cyc);
    let disr_w = t.scale(l_disr, cfg.lambda_disr);
    let partial = t.add(l_adv, cyc_w);
    let total = t.add(partial, disr_w);

    let total_val = t.scalar(total);
    if !total_val.is_finite() {
        return Err(Error::Diverged("generator loss became non-finite".into()));
    }
    let out = GenStepOutcome {
        l_adv: t.scalar(l_adv),
        l_cyc: t.scalar(l_cyc),
        l_disr: t.scalar(l_disr),
        total: total_val,
    };

    let mut grads = t.backward(total);
    let vars: Vec<Var> = UNet::binding_vars(&gp_b)
        .into_iter()
        .chain(UNet::binding_vars(&gr_b))
        .collect();
    let grad_list: Vec<Option<Arr>> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut params = bundle.generator.net.named_params_mut("gp");
    params.extend(bundle.remover.net.named_params_mut("gr"));
    let mut refs: Vec<&mut Arr> = params.iter_mut().map(|(_, p)| &mut **p).collect();
    opt.step(&mut refs, &grad_list);

    Ok(out)
}

/// Train the adversary networks against a frozen substitute.
pub fn train_tcagan(
    substitute: &SubstituteModel,
    data: &FaceDataset,
    cfg: &TcaGanConfig,
) -> Result<TcaGanTrainOutcome> {
    cfg.validate()?;
    let items = data.split_items(SplitKind::TrainTcagan);
    if items.is_empty() {
        return Err(Error::Dataset("train_tcagan split is empty".into()));
    }
    let in_hw = (substitute.arch.input_height, substitute.arch.input_width);
    let in_ch = substitute.arch.input_channels;
    let mut bundle = init_bundle(cfg, in_hw, in_ch);
    let mut opt_gen = Adam::new(cfg.lr);
    let mut opt_critic = Adam::new(cfg.critic_lr.unwrap_or(cfg.lr));
    let mut log = Vec::new();

    // The clean anchors S_e(x) and S(x) are fixed while the substitute is
    // frozen; compute them once.
    let anchors: Vec<(Arr, Arr)> = items
        .iter()
        .map(|it| {
            let xb = stack_nchw(&[&it.image]);
            let z = substitute.encode_batch(&xb);
            let sx = substitute.decode_batch(&z);
            (z.into_dyn(), sx.into_dyn())
        })
        .collect();

    let critic_steps = cfg.effective_critic_steps();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = substream(cfg.seed, "tcagan-epoch", epoch as u64);
            order.shuffle(&mut rng);
        }
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &items[i].image).collect();
            let x = stack_nchw(&images);
            let (se_x, s_x) = stack_anchors(&anchors, chunk);

            for k in 0..critic_steps {
                let seed = fnv1a(format!("{}:{epoch}:{bi}:{k}", cfg.seed).as_bytes());
                critic_step(&mut bundle, &mut opt_critic, cfg, &x, seed)?;
            }

            let x_pgd = if cfg.cycle_mode == CycleMode::Bidirectional {
                let mut batch = Vec::with_capacity(images.len());
                for (k, img) in images.iter().enumerate() {
                    let seed = fnv1a(format!("{}:pgd:{epoch}:{bi}:{k}", cfg.seed).as_bytes());
                    let adv = pgd_attack(
                        substitute,
                        img,
                        &BaselineConfig::pgd(cfg.eps, cfg.eps / 5.0, 10, seed),
                    )?;
                    batch.push(adv);
                }
                Some(stack_nchw(&batch.iter().collect::<Vec<_>>()))
            } else {
                None
            };

            let out = generator_step(
                &mut bundle,
                substitute,
                &mut opt_gen,
                cfg,
                &x,
                &se_x,
                &s_x,
                x_pgd.as_ref(),
            )?;
            log.push(StepRow {
                step,
                l_adv: out.l_adv,
                l_cyc: out.l_cyc,
                l_disr: out.l_disr,
                total: out.total,
            });
            step += 1;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_tcagan(&dir.join("tcagan_latest.ckpt"), &bundle, cfg, substitute)?;
        }
    }

    Ok(TcaGanTrainOutcome { bundle, log })
}

fn stack_anchors(anchors: &[(Arr, Arr)], chunk: &[usize]) -> (Arr, Arr) {
    let take = |which: usize| -> Arr {
        let views: Vec<_> = chunk
            .iter()
            .map(|&i| {
                let a = if which == 0 { &anchors[i].0 } else { &anchors[i].1 };
                a.view()
            })
            .collect();
        ndarray::concatenate(ndarray::Axis(0), &views).expect("anchor stack")
    };
    (take(0), take(1))
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Stable fingerprint of a substitute's weights, stored with the adversary
/// bundle so attack time can detect a mismatched substitute.
pub fn substitute_fingerprint(s: &SubstituteModel) -> String {
    let mut bytes = Vec::new();
    for (name, arr) in s.named_params() {
        bytes.extend_from_slice(name.as_bytes());
        for v in arr.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    format!("{:016x}", fnv1a(&bytes))
}

pub fn save_tcagan(
    path: &Path,
    bundle: &TcaGanBundle,
    cfg: &TcaGanConfig,
    substitute: &SubstituteModel,
) -> Result<()> {
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("eps".to_string(), format!("{}", cfg.eps));
    extra.insert(
        "substitute_fingerprint".to_string(),
        substitute_fingerprint(substitute),
    );
    extra.insert(
        "input_hw".to_string(),
        format!(
            "{}x{}x{}",
            substitute.arch.input_height, substitute.arch.input_width,
            substitute.arch.input_channels
        ),
    );
    let header = CheckpointHeader {
        kind: "tcagan".into(),
        arch: serde_json::to_value(cfg).unwrap(),
        config_hash: config_hash_of(cfg),
        seed: cfg.seed,
        extra,
    };
    let mut named = bundle.generator.net.named_params("gp");
    named.extend(bundle.remover.net.named_params("gr"));
    named.extend(bundle.critic_legit.named_params("dl"));
    named.extend(bundle.critic_adv.named_params("da"));
    let arrays: Vec<(String, &Arr)> = named.iter().map(|(n, a)| (n.clone(), *a)).collect();
    write_checkpoint(path, &header, &arrays)
}

pub fn load_tcagan(path: &Path) -> Result<(TcaGanBundle, TcaGanConfig, CheckpointHeader)> {
    let (header, arrays) = read_checkpoint(path)?;
    if header.kind != "tcagan" {
        return Err(Error::Checkpoint(format!(
            "expected a tcagan checkpoint, found kind '{}'",
            header.kind
        )));
    }
    let cfg: TcaGanConfig = serde_json::from_value(header.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("bad tcagan config: {e}")))?;
    let hw: Vec<usize> = header
        .extra
        .get("input_hw")
        .ok_or_else(|| Error::Checkpoint("missing input_hw".into()))?
        .split('x')
        .map(|p| p.parse::<usize>().map_err(|e| Error::Checkpoint(e.to_string())))
        .collect::<Result<_>>()?;
    if hw.len() != 3 {
        return Err(Error::Checkpoint("malformed input_hw".into()));
    }
    let mut bundle = init_bundle(&cfg, (hw[0], hw[1]), hw[2]);
    for (name, param) in bundle
        .generator
        .net
        .named_params_mut("gp")
        .into_iter()
        .chain(bundle.remover.net.named_params_mut("gr"))
        .chain(bundle.critic_legit.named_params_mut("dl"))
        .chain(bundle.critic_adv.named_params_mut("da"))
    {
        *param = crate::nn::serial::require(&arrays, &name)?;
    }
    Ok((bundle, cfg, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::synth::{generate_corpus, SynthConfig};
    use crate::image::SplitFractions;
    use crate::substitute::{SubstituteArch, SubstituteModel};
    use ndarray::{Array3, IxDyn};

    fn tiny_substitute() -> SubstituteModel {
        SubstituteModel::new(
            SubstituteArch {
                input_height: 16,
                input_width: 16,
                input_channels: 3,
                encoder_channels: vec![4, 8],
                encoder_kernel: 3,
                leaky_slope: 0.2,
            },
            5,
        )
        .unwrap()
    }

    fn tiny_cfg() -> TcaGanConfig {
        TcaGanConfig {
            gen_channels: vec![4, 8],
            critic_channels: vec![4, 8],
            batch_size: 4,
            epochs: 1,
            seed: 19,
            ..Default::default()
        }
    }

    fn tiny_bundle(cfg: &TcaGanConfig) -> TcaGanBundle {
        init_bundle(cfg, (16, 16), 3)
    }

    fn face16(id: u64, k: u64) -> ImageTensor {
        crate::image::synth::render_face(
            &SynthConfig {
                height: 16,
                width: 16,
                ..Default::default()
            },
            id,
            k,
        )
    }

    fn zero_net(net: &mut UNet) {
        for (_, p) in net.named_params_mut("z") {
            p.fill(0.0);
        }
    }

    #[test]
    fn loss_disr_is_two_at_zero_perturbation() {
        let s = tiny_substitute();
        let x = face16(0, 0);
        let v = loss_disr(&s, &x, &x).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn loss_disr_analytic_gap_values() {
        let ln2 = std::f64::consts::LN_2;
        let v = loss_disr_from_gaps(ln2, ln2);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_disr_matches_scalar_recomputation() {
        let s = tiny_substitute();
        let x = face16(0, 1);
        let mut d = x.data().clone();
        for (k, v) in d.iter_mut().enumerate() {
            *v = (*v + if k % 3 == 0 { 0.02 } else { -0.015 }).clamp(0.0, 1.0);
        }
        let x_adv = ImageTensor::new(d).unwrap();
        let got = loss_disr(&s, &x, &x_adv).unwrap();

        // independent recomputation with plain loops
        let z1 = s.encode(&x).unwrap();
        let z2 = s.encode(&x_adv).unwrap();
        let p1 = s.reconstruct(&x).unwrap();
        let p2 = s.reconstruct(&x_adv).unwrap();
        let mut lg = 0.0;
        for (a, b) in z1.data.iter().zip(z2.data.iter()) {
            lg += (a - b).abs();
        }
        lg /= z1.data.len() as f64;
        let mut pg = 0.0;
        for (a, b) in p1.data().iter().zip(p2.data().iter()) {
            pg += (a - b).abs();
        }
        pg /= p1.data().len() as f64;
        let expect = (-lg).exp() + (-pg).exp();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn loss_disr_decreases_with_growing_discrepancy() {
        assert!(loss_disr_from_gaps(0.5, 0.5) < loss_disr_from_gaps(0.1, 0.1));
        assert!(loss_disr_from_gaps(0.0, 0.0) == 2.0);
        assert!(loss_disr_from_gaps(100.0, 100.0) > 0.0);
    }

    #[test]
    fn loss_cyc_constant_arithmetic() {
        let est = Array4::zeros((1, 3, 16, 16));
        let r = Array4::from_elem((1, 3, 16, 16), 0.03);
        assert!((loss_cyc_terms(&est, &r) - 0.03).abs() < 1e-15);
        assert_eq!(loss_cyc_terms(&r, &r), 0.0);
    }

    #[test]
    fn loss_cyc_exact_recovery_is_zero() {
        let cfg = tiny_cfg();
        let mut bundle = tiny_bundle(&cfg);
        // G_R == 0 and G_P == 0 means the estimate (0) matches r (0).
        zero_net(&mut bundle.generator.net);
        zero_net(&mut bundle.remover.net);
        let x = face16(0, 2);
        let v = loss_cyc(&bundle.generator, &bundle.remover, &x).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn loss_adv_cancels_for_constant_critic() {
        let cfg = tiny_cfg();
        let mut bundle = tiny_bundle(&cfg);
        for (_, p) in bundle.critic_legit.named_params_mut("dl") {
            p.fill(0.0);
        }
        bundle.critic_legit.fc.b.fill(0.7);
        for (_, p) in bundle.critic_adv.named_params_mut("da") {
            p.fill(0.0);
        }
        bundle.critic_adv.fc.b.fill(-1.3);
        let x = face16(0, 3);
        let x_adv = face16(0, 4);
        let v = loss_adv(
            &bundle.critic_legit,
            &bundle.critic_adv,
            &bundle.remover,
            &x,
            &x_adv,
        )
        .unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn loss_adv_pair_cancels_under_zero_generators() {
        let cfg = tiny_cfg();
        let mut bundle = tiny_bundle(&cfg);
        zero_net(&mut bundle.generator.net);
        zero_net(&mut bundle.remover.net);
        let x = face16(1, 0);
        let x_adv = adversarial_example(&bundle.generator, &x).unwrap();
        assert_eq!(x_adv.data(), x.data());
        let v = loss_adv(
            &bundle.critic_legit,
            &bundle.critic_adv,
            &bundle.remover,
            &x,
            &x_adv,
        )
        .unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn loss_adv_matches_scalar_recomputation() {
        let cfg = tiny_cfg();
        let bundle = tiny_bundle(&cfg);
        let x = face16(1, 1);
        let x_adv = adversarial_example(&bundle.generator, &x).unwrap();
        let got = loss_adv(
            &bundle.critic_legit,
            &bundle.critic_adv,
            &bundle.remover,
            &x,
            &x_adv,
        )
        .unwrap();
        let xb = stack_nchw(&[&x]);
        let ab = stack_nchw(&[&x_adv]);
        let removed = &ab - &bundle.remover.forward_infer(&ab);
        let t1 = bundle.critic_legit.score_batch(&ab)[0];
        let t2 = bundle.critic_legit.score_batch(&xb)[0];
        let t3 = bundle.critic_adv.score_batch(&removed)[0];
        let t4 = bundle.critic_adv.score_batch(&ab)[0];
        assert!((got - (t1 - t2 + t3 - t4)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighted_sum() {
        let cfg = TcaGanConfig {
            lambda_cyc: 0.5,
            lambda_disr: 0.25,
            ..Default::default()
        };
        let v = total_loss(
            &cfg,
            LossParts {
                adv: 1.0,
                cyc: 2.0,
                disr: 3.0,
            },
        );
        assert!((v - 2.75).abs() < 1e-15);
        let pure = TcaGanConfig {
            lambda_cyc: 0.0,
            lambda_disr: 0.0,
            ..Default::default()
        };
        assert_eq!(
            total_loss(
                &pure,
                LossParts {
                    adv: 1.5,
                    cyc: 9.0,
                    disr: 9.0
                }
            ),
            1.5
        );
    }

    #[test]
    fn perturbation_bound_holds_for_any_input() {
        let cfg = tiny_cfg();
        let bundle = tiny_bundle(&cfg);
        for k in 0..8 {
            let x = face16(k % 2, k);
            let r = generate_perturbation(&bundle.generator, &x).unwrap();
            assert!(r.max_abs() <= cfg.eps, "bound violated: {}", r.max_abs());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = tiny_cfg();
        let bundle = tiny_bundle(&cfg);
        let x = face16(0, 5);
        let a = generate_perturbation(&bundle.generator, &x).unwrap();
        let b = generate_perturbation(&bundle.generator, &x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn generator_update_with_zero_lambdas_touches_only_generators() {
        let s = tiny_substitute();
        let cfg = TcaGanConfig {
            lambda_cyc: 0.0,
            lambda_disr: 0.0,
            ..tiny_cfg()
        };
        let mut bundle = tiny_bundle(&cfg);
        let snapshot_critics: Vec<Arr> = bundle
            .critic_legit
            .named_params("dl")
            .into_iter()
            .chain(bundle.critic_adv.named_params("da"))
            .map(|(_, a)| a.clone())
            .collect();
        let snapshot_sub: Vec<Arr> = s.named_params().into_iter().map(|(_, a)| a.clone()).collect();
        let snapshot_gen: Vec<Arr> = bundle
            .generator
            .net
            .named_params("gp")
            .into_iter()
            .map(|(_, a)| a.clone())
            .collect();

        let x = stack_nchw(&[&face16(0, 6), &face16(1, 6)]);
        let z = s.encode_batch(&x).into_dyn();
        let sx = s.decode_batch(&z.clone().into_dimensionality().unwrap()).into_dyn();
        let mut opt = Adam::new(1e-3);
        generator_step(&mut bundle, &s, &mut opt, &cfg, &x, &z, &sx, None).unwrap();

        let critics_after: Vec<Arr> = bundle
            .critic_legit
            .named_params("dl")
            .into_iter()
            .chain(bundle.critic_adv.named_params("da"))
            .map(|(_, a)| a.clone())
            .collect();
        assert_eq!(snapshot_critics, critics_after, "critics must stay frozen");
        let sub_after: Vec<Arr> = s.named_params().into_iter().map(|(_, a)| a.clone()).collect();
        assert_eq!(snapshot_sub, sub_after, "substitute must stay frozen");
        let gen_after: Vec<Arr> = bundle
            .generator
            .net
            .named_params("gp")
            .into_iter()
            .map(|(_, a)| a.clone())
            .collect();
        assert_ne!(snapshot_gen, gen_after, "generator must move");
    }

    #[test]
    fn epochs_zero_returns_initialized_networks() {
        let s = tiny_substitute();
        let cfg = SynthConfig {
            num_identities: 2,
            images_per_identity: 6,
            height: 16,
            width: 16,
            seed: 6,
        };
        let mut ds = FaceDataset::from_images(generate_corpus(&cfg)).unwrap();
        ds.assign_splits(&SplitFractions::default(), 9).unwrap();
        let gan_cfg = TcaGanConfig {
            epochs: 0,
            ..tiny_cfg()
        };
        let out = train_tcagan(&s, &ds, &gan_cfg).unwrap();
        let fresh = tiny_bundle(&gan_cfg);
        for ((_, a), (_, b)) in out
            .bundle
            .generator
            .net
            .named_params("gp")
            .iter()
            .zip(fresh.generator.net.named_params("gp"))
        {
            assert_eq!(*a, &b);
        }
        assert!(out.log.is_empty());
    }

    #[test]
    fn short_training_runs_and_logs_all_components() {
        let s = tiny_substitute();
        let cfg = SynthConfig {
            num_identities: 2,
            images_per_identity: 8,
            height: 16,
            width: 16,
            seed: 6,
        };
        let mut ds = FaceDataset::from_images(generate_corpus(&cfg)).unwrap();
        ds.assign_splits(&SplitFractions::default(), 9).unwrap();
        let out = train_tcagan(&s, &ds, &tiny_cfg()).unwrap();
        assert!(!out.log.is_empty());
        for row in &out.log {
            assert!(row.l_adv.is_finite());
            assert!(row.l_cyc >= 0.0);
            assert!(row.l_disr > 0.0 && row.l_disr <= 2.0 + 1e-12);
            let expect = row.l_adv + 10.0 * row.l_cyc + 1.0 * row.l_disr;
            assert!((row.total - expect).abs() < 1e-9);
        }
        // the eps bound holds after training too
        let x = face16(0, 99);
        let r = generate_perturbation(&out.bundle.generator, &x).unwrap();
        assert!(r.max_abs() <= 0.03);
    }

    #[test]
    fn weight_clip_mode_clamps_critics() {
        let s = tiny_substitute();
        let cfg = SynthConfig {
            num_identities: 2,
            images_per_identity: 6,
            height: 16,
            width: 16,
            seed: 6,
        };
        let mut ds = FaceDataset::from_images(generate_corpus(&cfg)).unwrap();
        ds.assign_splits(&SplitFractions::default(), 9).unwrap();
        let gan_cfg = TcaGanConfig {
            lipschitz: LipschitzMethod::WeightClip,
            critic_steps_per_gen_step: 2,
            ..tiny_cfg()
        };
        assert_eq!(gan_cfg.effective_critic_steps(), 2);
        let out = train_tcagan(&s, &ds, &gan_cfg).unwrap();
        for (_, p) in out.bundle.critic_legit.named_params("dl") {
            assert!(p.iter().all(|v| v.abs() <= 0.01 + 1e-12));
        }
    }

    #[test]
    fn bidirectional_cycle_mode_runs() {
        let s = tiny_substitute();
        let cfg = SynthConfig {
            num_identities: 2,
            images_per_identity: 4,
            height: 16,
            width: 16,
            seed: 6,
        };
        let mut ds = FaceDataset::from_images(generate_corpus(&cfg)).unwrap();
        ds.assign_splits(&SplitFractions::default(), 9).unwrap();
        let gan_cfg = TcaGanConfig {
            cycle_mode: CycleMode::Bidirectional,
            ..tiny_cfg()
        };
        let out = train_tcagan(&s, &ds, &gan_cfg).unwrap();
        assert!(!out.log.is_empty());
    }

    #[test]
    fn checkpoint_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gan.ckpt");
        let s = tiny_substitute();
        let cfg = tiny_cfg();
        let bundle = tiny_bundle(&cfg);
        save_tcagan(&path, &bundle, &cfg, &s).unwrap();
        let (loaded, cfg2, header) = load_tcagan(&path).unwrap();
        assert_eq!(cfg2.eps, cfg.eps);
        assert_eq!(
            header.extra["substitute_fingerprint"],
            substitute_fingerprint(&s)
        );
        for ((_, a), (_, b)) in bundle
            .generator
            .net
            .named_params("gp")
            .iter()
            .zip(loaded.generator.net.named_params("gp"))
        {
            assert_eq!(*a, &b);
        }
    }

    /// Gradient-penalty double backprop: the analytic gradient of the full
    /// critic loss (including the penalty) matches finite differences.
    #[test]
    fn critic_loss_with_penalty_matches_finite_differences() {
        let cfg = TcaGanConfig {
            gen_channels: vec![2, 4],
            critic_channels: vec![2, 4],
            batch_size: 2,
            seed: 3,
            ..Default::default()
        };
        let mut bundle = init_bundle(&cfg, (8, 8), 1);

        let x = {
            let mut a = Array4::zeros((2, 1, 8, 8));
            for (k, v) in a.iter_mut().enumerate() {
                *v = 0.25 + 0.5 * (((k * 11) % 17) as f64 / 17.0);
            }
            a
        };
        let interp = x.mapv(|v| (v * 0.9 + 0.05_f64).clamp(0.0, 1.0));

        // loss(params) closure for finite differences
        let loss_of = |critic: &DomainDiscriminator| -> f64 {
            let mut t = Tape::new();
            let b = critic.bind(&mut t, true);
            let xv = t.constant(x.clone().into_dyn());
            let score = critic.forward_tape(&mut t, xv, &b);
            let m = t.mean_all(score);
            let neg = t.neg(m);
            let iv = t.constant(interp.clone().into_dyn());
            let g = critic.input_grad_graph(&mut t, iv, &b);
            let gp = gradient_penalty(&mut t, g);
            let gpw = t.scale(gp, 10.0);
            let loss = t.add(neg, gpw);
            t.scalar(loss)
        };

        // analytic gradients
        let (analytic, names): (Vec<Arr>, Vec<String>) = {
            let critic = &bundle.critic_legit;
            let mut t = Tape::new();
            let b = critic.bind(&mut t, true);
            let xv = t.constant(x.clone().into_dyn());
            let score = critic.forward_tape(&mut t, xv, &b);
            let m = t.mean_all(score);
            let neg = t.neg(m);
            let iv = t.constant(interp.clone().into_dyn());
            let g = critic.input_grad_graph(&mut t, iv, &b);
            let gp = gradient_penalty(&mut t, g);
            let gpw = t.scale(gp, 10.0);
            let loss = t.add(neg, gpw);
            let mut grads = t.backward(loss);
            let vars = DomainDiscriminator::binding_vars(&b);
            let names = critic
                .named_params("c")
                .iter()
                .map(|(n, _)| n.clone())
                .collect();
            (
                vars.iter()
                    .map(|&v| {
                        grads
                            .take(v)
                            .unwrap_or_else(|| ndarray::ArrayD::zeros(t.value(v).raw_dim()))
                    })
                    .collect(),
                names,
            )
        };

        let h = 1e-6;
        let mut num_sq = 0.0;
        let mut diff_sq = 0.0;
        for (pi, name) in names.iter().enumerate() {
            let len = bundle.critic_legit.named_params("c")[pi].1.len();
            for k in 0..len {
                let orig = {
                    let params = bundle.critic_legit.named_params("c");
                    params[pi].1.as_slice().unwrap()[k]
                };
                let set = |critic: &mut DomainDiscriminator, val: f64| {
                    for (n, p) in critic.named_params_mut("c") {
                        if &n == name {
                            p.as_slice_mut().unwrap()[k] = val;
                        }
                    }
                };
                set(&mut bundle.critic_legit, orig + h);
                let lp = loss_of(&bundle.critic_legit);
                set(&mut bundle.critic_legit, orig - h);
                let lm = loss_of(&bundle.critic_legit);
                set(&mut bundle.critic_legit, orig);
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[pi].as_slice().unwrap()[k];
                num_sq += fd * fd;
                diff_sq += (an - fd) * (an - fd);
            }
        }
        let rel = diff_sq.sqrt() / num_sq.sqrt().max(1e-12);
        assert!(rel < 1e-4, "critic gradient relative error {rel:.3e}");
    }

    /// Finite-difference check of the full generator objective w.r.t. both
    /// generators' parameters on a sub-1k-parameter configuration.
    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let s = SubstituteModel::new(
            SubstituteArch {
                input_height: 8,
                input_width: 8,
                input_channels: 1,
                encoder_channels: vec![2, 4],
                encoder_kernel: 3,
                leaky_slope: 0.2,
            },
            2,
        )
        .unwrap();
        let cfg = TcaGanConfig {
            gen_channels: vec![2, 4],
            critic_channels: vec![2, 4],
            batch_size: 2,
            lambda_cyc: 10.0,
            lambda_disr: 1.0,
            seed: 7,
            ..Default::default()
        };
        let bundle = init_bundle(&cfg, (8, 8), 1);
        assert!(bundle.generator.net.num_params() <= 1000);

        let x = {
            let mut a = Array4::zeros((2, 1, 8, 8));
            for (k, v) in a.iter_mut().enumerate() {
                *v = 0.2 + 0.6 * (((k * 13) % 23) as f64 / 23.0);
            }
            a
        };
        let z = s.encode_batch(&x).into_dyn();
        let sx = s
            .decode_batch(&z.clone().into_dimensionality().unwrap())
            .into_dyn();

        // total objective as a pure function of the two generators
        let loss_of = |gen: &AdversaryGenerator, rem: &AdversaryRemover| -> f64 {
            let mut t = Tape::new();
            let gp_b = gen.net.bind(&mut t, true);
            let gr_b = rem.net.bind(&mut t, true);
            let dl_b = bundle.critic_legit.bind(&mut t, false);
            let da_b = bundle.critic_adv.bind(&mut t, false);
            let enc_b = s.bind_encoder(&mut t, false);
            let dec_b = s.bind_decoder(&mut t, false);
            let xv = t.constant(x.clone().into_dyn());
            let r = gen.forward_tape(&mut t, xv, &gp_b);
            let sum = t.add(xv, r);
            let x_adv = t.clamp01(sum);
            let se_adv = s.encoder.forward_tape(&mut t, x_adv, &enc_b);
            let anchor_z = t.constant(z.clone());
            let latent_gap = t.l1_mean(se_adv, anchor_z);
            let s_adv = s.decoder.forward_tape(&mut t, se_adv, &dec_b);
            let anchor_s = t.constant(sx.clone());
            let pixel_gap = t.l1_mean(s_adv, anchor_s);
            let nl = t.neg(latent_gap);
            let el = t.exp(nl);
            let np = t.neg(pixel_gap);
            let ep = t.exp(np);
            let l_disr = t.add(el, ep);
            let est = rem.forward_tape(&mut t, x_adv, &gr_b);
            let l_cyc = t.l1_mean(est, r);
            let s1 = bundle.critic_legit.forward_tape(&mut t, x_adv, &dl_b);
            let s2 = bundle.critic_legit.forward_tape(&mut t, xv, &dl_b);
            let removed = t.sub(x_adv, est);
            let s3 = bundle.critic_adv.forward_tape(&mut t, removed, &da_b);
            let s4 = bundle.critic_adv.forward_tape(&mut t, x_adv, &da_b);
            let m1 = t.mean_all(s1);
            let m2 = t.mean_all(s2);
            let m3 = t.mean_all(s3);
            let m4 = t.mean_all(s4);
            let d1 = t.sub(m1, m2);
            let d2 = t.sub(m3, m4);
            let l_adv = t.add(d1, d2);
            let cw = t.scale(l_cyc, cfg.lambda_cyc);
            let dw = t.scale(l_disr, cfg.lambda_disr);
            let par = t.add(l_adv, cw);
            let total = t.add(par, dw);
            t.scalar(total)
        };

        // analytic gradients of the same expression
        let mut gen = bundle.generator.clone();
        let mut rem = bundle.remover.clone();
        let (analytic, names): (Vec<Arr>, Vec<String>) = {
            let mut t = Tape::new();
            let gp_b = gen.net.bind(&mut t, true);
            let gr_b = rem.net.bind(&mut t, true);
            let dl_b = bundle.critic_legit.bind(&mut t, false);
            let da_b = bundle.critic_adv.bind(&mut t, false);
            let enc_b = s.bind_encoder(&mut t, false);
            let dec_b = s.bind_decoder(&mut t, false);
            let xv = t.constant(x.clone().into_dyn());
            let r = gen.forward_tape(&mut t, xv, &gp_b);
            let sum = t.add(xv, r);
            let x_adv = t.clamp01(sum);
            let se_adv = s.encoder.forward_tape(&mut t, x_adv, &enc_b);
            let anchor_z = t.constant(z.clone());
            let latent_gap = t.l1_mean(se_adv, anchor_z);
            let s_adv = s.decoder.forward_tape(&mut t, se_adv, &dec_b);
            let anchor_s = t.constant(sx.clone());
            let pixel_gap = t.l1_mean(s_adv, anchor_s);
            let nl = t.neg(latent_gap);
            let el = t.exp(nl);
            let np = t.neg(pixel_gap);
            let ep = t.exp(np);
            let l_disr = t.add(el, ep);
            let est = rem.forward_tape(&mut t, x_adv, &gr_b);
            let l_cyc = t.l1_mean(est, r);
            let s1 = bundle.critic_legit.forward_tape(&mut t, x_adv, &dl_b);
            let s2 = bundle.critic_legit.forward_tape(&mut t, xv, &dl_b);
            let removed = t.sub(x_adv, est);
            let s3 = bundle.critic_adv.forward_tape(&mut t, removed, &da_b);
            let s4 = bundle.critic_adv.forward_tape(&mut t, x_adv, &da_b);
            let m1 = t.mean_all(s1);
            let m2 = t.mean_all(s2);
            let m3 = t.mean_all(s3);
            let m4 = t.mean_all(s4);
            let d1 = t.sub(m1, m2);
            let d2 = t.sub(m3, m4);
            let l_adv = t.add(d1, d2);
            let cw = t.scale(l_cyc, cfg.lambda_cyc);
            let dw = t.scale(l_disr, cfg.lambda_disr);
            let par = t.add(l_adv, cw);
            let total = t.add(par, dw);
            let mut grads = t.backward(total);
            let vars: Vec<Var> = UNet::binding_vars(&gp_b)
                .into_iter()
                .chain(UNet::binding_vars(&gr_b))
                .collect();
            let mut names: Vec<String> = gen
                .net
                .named_params("gp")
                .iter()
                .map(|(n, _)| n.clone())
                .collect();
            names.extend(
                rem.net
                    .named_params("gr")
                    .iter()
                    .map(|(n, _)| n.clone()),
            );
            (
                vars.iter()
                    .map(|&v| {
                        grads
                            .take(v)
                            .unwrap_or_else(|| ndarray::ArrayD::zeros(t.value(v).raw_dim()))
                    })
                    .collect(),
                names,
            )
        };

        let h = 1e-6;
        let mut num_sq = 0.0;
        let mut diff_sq = 0.0;
        let gen_count = gen.net.named_params("gp").len();
        for (pi, name) in names.iter().enumerate() {
            let len = analytic[pi].len();
            for k in 0..len {
                let nudge = |gen: &mut AdversaryGenerator, rem: &mut AdversaryRemover, d: f64| {
                    if pi < gen_count {
                        for (n, p) in gen.net.named_params_mut("gp") {
                            if &n == name {
                                p.as_slice_mut().unwrap()[k] += d;
                            }
                        }
                    } else {
                        for (n, p) in rem.net.named_params_mut("gr") {
                            if &n == name {
                                p.as_slice_mut().unwrap()[k] += d;
                            }
                        }
                    }
                };
                nudge(&mut gen, &mut rem, h);
                let lp = loss_of(&gen, &rem);
                nudge(&mut gen, &mut rem, -2.0 * h);
                let lm = loss_of(&gen, &rem);
                nudge(&mut gen, &mut rem, h);
                let fd = (lp - lm) / (2.0 * h);
                let an = analytic[pi].as_slice().unwrap()[k];
                num_sq += fd * fd;
                diff_sq += (an - fd) * (an - fd);
            }
        }
        let rel = diff_sq.sqrt() / num_sq.sqrt().max(1e-12);
        assert!(rel < 1e-3, "generator gradient relative error {rel:.3e}");
    }

    #[test]
    fn tape_and_infer_unet_agree() {
        let net = UNet::init(3, 3, &[4, 8], 3, "t");
        let x = stack_nchw(&[&face16(0, 0)]);
        let infer = net.forward_infer(&x);
        let mut t = Tape::new();
        let b = net.bind(&mut t, false);
        let xv = t.constant(x.into_dyn());
        let y = net.forward_tape(&mut t, xv, &b);
        for (a, bv) in infer.iter().zip(t.value(y).iter()) {
            assert_eq!(a, bv);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TcaGanConfig::default().validate().is_ok());
        assert!(TcaGanConfig {
            lambda_cyc: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TcaGanConfig {
            eps: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn latent_disruption_flag_changes_objective() {
        let s = tiny_substitute();
        let cfg_on = tiny_cfg();
        let cfg_off = TcaGanConfig {
            use_latent_disruption: false,
            ..tiny_cfg()
        };
        let mut b1 = tiny_bundle(&cfg_on);
        let mut b2 = tiny_bundle(&cfg_off);
        let x = stack_nchw(&[&face16(0, 7)]);
        let z = s.encode_batch(&x).into_dyn();
        let sx = s
            .decode_batch(&z.clone().into_dimensionality().unwrap())
            .into_dyn();
        let mut o1 = Adam::new(1e-4);
        let mut o2 = Adam::new(1e-4);
        let r1 = generator_step(&mut b1, &s, &mut o1, &cfg_on, &x, &z, &sx, None).unwrap();
        let r2 = generator_step(&mut b2, &s, &mut o2, &cfg_off, &x, &z, &sx, None).unwrap();
        // with LVD on the disruption term starts near 2, without it near 1
        assert!(r1.l_disr > 1.5 && r1.l_disr <= 2.0);
        assert!(r2.l_disr > 0.5 && r2.l_disr <= 1.0);
    }

    #[test]
    fn perturbation_residual_helper_shapes() {
        let x = face16(0, 0);
        let r = Perturbation::new(Array3::from_elem((16, 16, 3), 0.01), 0.03).unwrap();
        let adv = apply_perturbation(&x, &r).unwrap();
        assert_eq!(adv.data().dim(), (16, 16, 3));
        let _ = IxDyn(&[1]);
    }
}
