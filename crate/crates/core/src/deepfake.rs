//! A self-contained toy face-swapping model: one shared encoder and one
//! decoder per identity. Swapping decodes an image's latent code with the
//! *other* identity's decoder. The model is trained independently of the
//! attack pipeline and then wrapped in a [`BlackBoxHandle`], which counts
//! every query so the zero-query contract of the attack stage is auditable.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};


use crate::error::{Error, Result};
use crate::image::tensor::{image_from_chw, stack_nchw, ImageTensor};
use crate::image::warp::{random_warp, resize_bilinear, WarpLimits, WarpParams};
use crate::image::{clip_image_range, FaceDataset, SplitKind};
use crate::nn::{
    read_checkpoint, write_checkpoint, Activation, Adam, Arr, CheckpointHeader, ConvSpec,
    ConvStack, Tape,
};
use crate::rng::{fnv1a, substream};
use crate::substitute::config_hash_of;

/// Architecture of the toy target, following the classic face-swap design:
/// strided conv stages, a fully-connected bottleneck, and per-identity
/// upsampling decoders. Deliberately different from the substitute (depth,
/// width, activation, dense bottleneck) so transfer is non-trivial.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeepFakeArch {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub encoder_channels: Vec<usize>,
    /// Width of the fully-connected bottleneck; 0 disables it (pure conv).
    #[serde(default = "default_dense_dim")]
    pub dense_dim: usize,
    /// Spatial side and channel count the bottleneck is unflattened to
    /// before the decoders; ignored when dense_dim is 0.
    #[serde(default = "default_decoder_base")]
    pub decoder_base: (usize, usize),
}

fn default_dense_dim() -> usize {
    512
}

fn default_decoder_base() -> (usize, usize) {
    (8, 32)
}

impl Default for DeepFakeArch {
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            input_channels: 3,
            encoder_channels: vec![12, 24],
            dense_dim: 512,
            decoder_base: (8, 32),
        }
    }
}

impl DeepFakeArch {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one stage".into()));
        }
        let div = 1usize << self.encoder_channels.len();
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} not divisible by 2^{}",
                self.input_height,
                self.input_width,
                self.encoder_channels.len()
            )));
        }
        if self.dense_dim > 0 {
            let (side, _) = self.decoder_base;
            if side == 0 || self.input_height % side != 0 || !(self.input_height / side).is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "decoder base side {side} must divide the input into a power-of-two upsampling chain"
                )));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "face-swap autoencoder {}x{}x{}, shared ReLU encoder stages {:?}, dense bottleneck {} -> {}x{}x{}, two pixel-shuffle decoders, sigmoid output",
            self.input_height, self.input_width, self.input_channels, self.encoder_channels,
            self.dense_dim, self.decoder_base.0, self.decoder_base.0, self.decoder_base.1
        )
    }

    fn conv_feature_len(&self) -> usize {
        let stages = self.encoder_channels.len();
        let h = self.input_height >> stages;
        let w = self.input_width >> stages;
        self.encoder_channels.last().unwrap() * h * w
    }

    fn encoder_specs(&self) -> Vec<ConvSpec> {
        let mut specs = Vec::new();
        let mut prev = self.input_channels;
        for &ch in &self.encoder_channels {
            specs.push(ConvSpec::down(prev, ch, Activation::Relu));
            prev = ch;
        }
        specs
    }

    fn decoder_specs(&self) -> Vec<ConvSpec> {
        if self.dense_dim > 0 {
            // classic face-swap decoder: pixel-shuffle upscale blocks
            let (side, base_ch) = self.decoder_base;
            let ups = (self.input_height / side).trailing_zeros() as usize;
            let mut specs = Vec::new();
            let mut prev = base_ch;
            for i in 0..ups {
                let next = if i + 1 == ups { prev.min(16) } else { (prev / 2).max(8) };
                specs.push(ConvSpec::up_shuffle(prev, next, Activation::Relu));
                prev = next;
            }
            specs.push(ConvSpec::same(prev, self.input_channels, Activation::Sigmoid));
            specs
        } else {
            let ch = &self.encoder_channels;
            let mut specs = Vec::new();
            for i in (1..ch.len()).rev() {
                specs.push(ConvSpec::up(ch[i], ch[i - 1], Activation::Relu));
            }
            specs.push(ConvSpec::up(ch[0], ch[0], Activation::Relu));
            specs.push(ConvSpec::same(ch[0], self.input_channels, Activation::Sigmoid));
            specs
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepFakeModel {
    pub arch: DeepFakeArch,
    pub shared_encoder: ConvStack,
    /// Fully-connected bottleneck (classic face-swap design), present when
    /// `arch.dense_dim > 0`: features -> dense -> decoder base grid.
    pub enc_dense_in: Option<crate::nn::LinearLayer>,
    pub enc_dense_out: Option<crate::nn::LinearLayer>,
    pub decoder_a: ConvStack,
    pub decoder_b: ConvStack,
    pub identity_a: String,
    pub identity_b: String,
}

impl DeepFakeModel {
    pub fn new(arch: DeepFakeArch, identity_a: &str, identity_b: &str, seed: u64) -> Result<Self> {
        arch.validate()?;
        if identity_a == identity_b {
            return Err(Error::InvalidConfig("identities must differ".into()));
        }
        let mut enc_rng = substream(seed, "deepfake-init-enc", 0);
        let mut da_rng = substream(seed, "deepfake-init-deca", 0);
        let mut db_rng = substream(seed, "deepfake-init-decb", 0);
        let (dense_in, dense_out) = if arch.dense_dim > 0 {
            let feat = arch.conv_feature_len();
            let (side, base_ch) = arch.decoder_base;
            let out_len = side * side * base_ch;
            (
                Some(crate::nn::LinearLayer::init(feat, arch.dense_dim, &mut enc_rng)),
                Some(crate::nn::LinearLayer::init(arch.dense_dim, out_len, &mut enc_rng)),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            shared_encoder: ConvStack::init(arch.encoder_specs(), &mut enc_rng),
            enc_dense_in: dense_in,
            enc_dense_out: dense_out,
            decoder_a: ConvStack::init(arch.decoder_specs(), &mut da_rng),
            decoder_b: ConvStack::init(arch.decoder_specs(), &mut db_rng),
            arch,
            identity_a: identity_a.to_string(),
            identity_b: identity_b.to_string(),
        })
    }

    /// Shared-encoder latent code for a batch: conv stages, then the dense
    /// bottleneck when configured.
    pub fn encode_infer(&self, x: &ndarray::Array4<f64>) -> ndarray::Array4<f64> {
        let z = self.shared_encoder.forward_infer(x);
        let (Some(d_in), Some(d_out)) = (&self.enc_dense_in, &self.enc_dense_out) else {
            return z;
        };
        let (n, c, h, w) = z.dim();
        let flat = z
            .into_shape_with_order((n, c * h * w))
            .expect("latent flatten");
        let w_in: ndarray::Array2<f64> = d_in.w.view().into_dimensionality().unwrap().to_owned();
        let b_in = ndarray::Array1::from_iter(d_in.b.iter().cloned());
        let mut hid = crate::nn::ops::linear_fwd(&flat, &w_in, Some(&b_in));
        hid.mapv_inplace(|v| if v > 0.0 { v } else { 0.1 * v });
        let w_out: ndarray::Array2<f64> = d_out.w.view().into_dimensionality().unwrap().to_owned();
        let b_out = ndarray::Array1::from_iter(d_out.b.iter().cloned());
        let g = crate::nn::ops::linear_fwd(&hid, &w_out, Some(&b_out));
        let (side, base_ch) = self.arch.decoder_base;
        g.into_shape_with_order((n, base_ch, side, side))
            .expect("decoder base reshape")
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let want = (self.arch.input_height, self.arch.input_width, self.arch.input_channels);
        if (x.height(), x.width(), x.channels()) != want {
            return Err(Error::ShapeMismatch(format!(
                "target expects {want:?}, image is {:?}",
                (x.height(), x.width(), x.channels())
            )));
        }
        Ok(())
    }

    fn decoder_for_source(&self, source_identity: &str) -> Result<&ConvStack> {
        // Swap rule: an image of identity A is decoded with B's decoder.
        if source_identity == self.identity_a {
            Ok(&self.decoder_b)
        } else if source_identity == self.identity_b {
            Ok(&self.decoder_a)
        } else {
            Err(Error::Evaluation(format!(
                "unknown identity '{source_identity}' (model swaps {} <-> {})",
                self.identity_a, self.identity_b
            )))
        }
    }

    /// Face swapping: decode the latent code with the other decoder.
    pub fn swap(&self, x: &ImageTensor, source_identity: &str) -> Result<ImageTensor> {
        self.check_input(x)?;
        let decoder = self.decoder_for_source(source_identity)?;
        let z = self.encode_infer(&stack_nchw(&[x]));
        let y = decoder.forward_infer(&z);
        image_from_chw(y.index_axis(ndarray::Axis(0), 0))
    }

    /// Same-identity reconstruction (the training objective).
    pub fn reconstruct_own(&self, x: &ImageTensor, identity: &str) -> Result<ImageTensor> {
        self.check_input(x)?;
        let decoder = if identity == self.identity_a {
            &self.decoder_a
        } else if identity == self.identity_b {
            &self.decoder_b
        } else {
            return Err(Error::Evaluation(format!("unknown identity '{identity}'")));
        };
        let z = self.encode_infer(&stack_nchw(&[x]));
        let y = decoder.forward_infer(&z);
        image_from_chw(y.index_axis(ndarray::Axis(0), 0))
    }

    pub fn named_params(&self) -> Vec<(String, &Arr)> {
        let mut out = self.shared_encoder.named_params("encoder");
        if let (Some(d_in), Some(d_out)) = (&self.enc_dense_in, &self.enc_dense_out) {
            out.push(("encoder.dense_in.w".to_string(), &d_in.w));
            out.push(("encoder.dense_in.b".to_string(), &d_in.b));
            out.push(("encoder.dense_out.w".to_string(), &d_out.w));
            out.push(("encoder.dense_out.b".to_string(), &d_out.b));
        }
        out.extend(self.decoder_a.named_params("decoder_a"));
        out.extend(self.decoder_b.named_params("decoder_b"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Arr)> {
        let mut out = self.shared_encoder.named_params_mut("encoder");
        if let (Some(d_in), Some(d_out)) = (&mut self.enc_dense_in, &mut self.enc_dense_out) {
            out.push(("encoder.dense_in.w".to_string(), &mut d_in.w));
            out.push(("encoder.dense_in.b".to_string(), &mut d_in.b));
            out.push(("encoder.dense_out.w".to_string(), &mut d_out.w));
            out.push(("encoder.dense_out.b".to_string(), &mut d_out.b));
        }
        out.extend(self.decoder_a.named_params_mut("decoder_a"));
        out.extend(self.decoder_b.named_params_mut("decoder_b"));
        out
    }

    /// Tape-mode shared encoding (conv stages + dense bottleneck) against a
    /// binding produced by `bind_encoder_tape`.
    pub fn encode_tape(
        &self,
        t: &mut crate::nn::Tape,
        x: crate::nn::Var,
        binding: &DeepFakeEncoderBinding,
    ) -> crate::nn::Var {
        let z = self.shared_encoder.forward_tape(t, x, &binding.stack);
        let Some((d_in_w, d_in_b, d_out_w, d_out_b)) = binding.dense else {
            return z;
        };
        let shape = t.value(z).shape().to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let flat = t.reshape(z, &[n, c * h * w]);
        let hid = t.linear(flat, d_in_w, Some(d_in_b));
        let hid = t.leaky_relu(hid, 0.1);
        let g = t.linear(hid, d_out_w, Some(d_out_b));
        let (side, base_ch) = self.arch.decoder_base;
        t.reshape(g, &[n, base_ch, side, side])
    }

    pub fn bind_encoder_tape(
        &self,
        t: &mut crate::nn::Tape,
        trainable: bool,
    ) -> DeepFakeEncoderBinding {
        let stack = self.shared_encoder.bind(t, trainable);
        let dense = match (&self.enc_dense_in, &self.enc_dense_out) {
            (Some(d_in), Some(d_out)) => {
                let mut bind = |a: &Arr| {
                    if trainable {
                        t.leaf(a.clone())
                    } else {
                        t.constant(a.clone())
                    }
                };
                Some((bind(&d_in.w), bind(&d_in.b), bind(&d_out.w), bind(&d_out.b)))
            }
            _ => None,
        };
        DeepFakeEncoderBinding { stack, dense }
    }
}

pub struct DeepFakeEncoderBinding {
    pub stack: crate::nn::StackBinding,
    pub dense: Option<(crate::nn::Var, crate::nn::Var, crate::nn::Var, crate::nn::Var)>,
}

impl DeepFakeEncoderBinding {
    pub fn vars(&self) -> Vec<crate::nn::Var> {
        let mut out: Vec<crate::nn::Var> = self
            .stack
            .vars
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .collect();
        if let Some((a, b, c, d)) = self.dense {
            out.extend([a, b, c, d]);
        }
        out
    }
}

/// Opaque wrapper around the trained swap model. Every swap increments the
/// query counter; the attack stage must finish with the counter at zero.
#[derive(Debug)]
pub struct BlackBoxHandle {
    model: DeepFakeModel,
    queries: AtomicU64,
}

impl BlackBoxHandle {
    pub fn new(model: DeepFakeModel) -> Self {
        Self {
            model,
            queries: AtomicU64::new(0),
        }
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn face_swap(&self, x: &ImageTensor, source_identity: &str) -> Result<ImageTensor> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        self.model.swap(x, source_identity)
    }

    pub fn identities(&self) -> (&str, &str) {
        (&self.model.identity_a, &self.model.identity_b)
    }

    pub fn arch_description(&self) -> String {
        self.model.arch.describe()
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeepFakeTrainConfig {
    pub arch: DeepFakeArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Mild warp augmentation for robustness to evaluation-time transforms.
    pub warp: WarpLimits,
    pub min_images_per_identity: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for DeepFakeTrainConfig {
    fn default() -> Self {
        Self {
            arch: DeepFakeArch::default(),
            epochs: 30,
            batch_size: 16,
            lr: 2e-4,
            seed: 23,
            warp: WarpLimits {
                max_rotation_deg: 4.0,
                max_scale_delta: 0.03,
                max_shift: 0.03,
            },
            min_images_per_identity: 20,
            checkpoint_path: None,
        }
    }
}

#[derive(Debug)]
pub struct DeepFakeTrainOutcome {
    pub model: DeepFakeModel,
    pub log: Vec<(usize, f64)>,
    /// Held-out same-identity reconstruction L1 per identity (a, b).
    pub held_out_l1: (f64, f64),
}

/// Train the toy target on both training splits (they are disjoint from the
/// attack_eval images, which is the invariant that matters).
pub fn train_deepfake(
    data: &FaceDataset,
    identity_a: &str,
    identity_b: &str,
    cfg: &DeepFakeTrainConfig,
) -> Result<DeepFakeTrainOutcome> {
    cfg.arch.validate()?;
    if identity_a == identity_b {
        return Err(Error::InvalidConfig("identities must differ".into()));
    }
    let train_items: Vec<&crate::image::DatasetItem> = data
        .items
        .iter()
        .filter(|it| {
            matches!(
                it.split,
                SplitKind::TrainSubstitute | SplitKind::TrainTcagan
            )
        })
        .collect();
    let of_identity = |id: &str| -> Vec<&crate::image::DatasetItem> {
        train_items
            .iter()
            .copied()
            .filter(|it| it.identity == id)
            .collect()
    };
    let items_a = of_identity(identity_a);
    let items_b = of_identity(identity_b);
    for (id, items) in [(identity_a, &items_a), (identity_b, &items_b)] {
        if items.len() < cfg.min_images_per_identity {
            return Err(Error::Dataset(format!(
                "insufficient identity data: '{id}' has {} training images, need {}",
                items.len(),
                cfg.min_images_per_identity
            )));
        }
    }

    let mut model = DeepFakeModel::new(cfg.arch.clone(), identity_a, identity_b, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr);
    let mut log = Vec::new();

    // Hold out one batch worth of images per identity for the gate metric.
    let holdout = cfg.batch_size.clamp(4, 16).min(items_a.len() / 4).max(1);
    let (hold_a, train_a) = items_a.split_at(holdout);
    let (hold_b, train_b) = items_b.split_at(holdout);

    for epoch in 0..cfg.epochs {
        let mut idx_a: Vec<usize> = (0..train_a.len()).collect();
        let mut idx_b: Vec<usize> = (0..train_b.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = substream(cfg.seed, "deepfake-epoch", epoch as u64);
            idx_a.shuffle(&mut rng);
            idx_b.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        let nb = idx_a.len().max(idx_b.len()).div_ceil(cfg.batch_size.max(1));
        for bi in 0..nb {
            let pick = |idx: &[usize], items: &[&crate::image::DatasetItem]| -> Vec<ImageTensor> {
                let start = bi * cfg.batch_size;
                (start..start + cfg.batch_size.min(idx.len()))
                    .map(|k| {
                        let it = items[idx[k % idx.len()]];
                        let seed = fnv1a(format!("{}:{epoch}:{bi}:{k}", cfg.seed).as_bytes());
                        random_warp(&it.image, &cfg.warp, seed)
                    })
                    .collect()
            };
            let batch_a = pick(&idx_a, train_a);
            let batch_b = pick(&idx_b, train_b);
            let xa = stack_nchw(&batch_a.iter().collect::<Vec<_>>());
            let xb = stack_nchw(&batch_b.iter().collect::<Vec<_>>());

            let mut t = Tape::new();
            let enc_b = model.bind_encoder_tape(&mut t, true);
            let da_b = model.decoder_a.bind(&mut t, true);
            let db_b = model.decoder_b.bind(&mut t, true);
            let xav = t.constant(xa.into_dyn());
            let xbv = t.constant(xb.into_dyn());
            let za = model.encode_tape(&mut t, xav, &enc_b);
            let ra = model.decoder_a.forward_tape(&mut t, za, &da_b);
            let la = t.l1_mean(ra, xav);
            let zb = model.encode_tape(&mut t, xbv, &enc_b);
            let rb = model.decoder_b.forward_tape(&mut t, zb, &db_b);
            let lb = t.l1_mean(rb, xbv);
            let loss = t.add(la, lb);

            let loss_val = t.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "target loss became non-finite at epoch {epoch}"
                )));
            }
            let mut grads = t.backward(loss);
            let vars: Vec<crate::nn::Var> = enc_b
                .vars()
                .into_iter()
                .chain(da_b.vars.iter().flat_map(|&(w, b)| [w, b]))
                .chain(db_b.vars.iter().flat_map(|&(w, b)| [w, b]))
                .collect();
            let grad_list: Vec<Option<Arr>> = vars.iter().map(|&v| grads.take(v)).collect();
            let mut params = model.named_params_mut();
            let mut refs: Vec<&mut Arr> = params.iter_mut().map(|(_, p)| &mut **p).collect();
            opt.step(&mut refs, &grad_list);

            epoch_loss += loss_val;
            steps += 1;
        }
        log.push((epoch, epoch_loss / steps.max(1) as f64));
    }

    let mean_l1 = |items: &[&crate::image::DatasetItem], id: &str| -> Result<f64> {
        let mut total = 0.0;
        for it in items {
            let rec = model.reconstruct_own(&it.image, id)?;
            total += rec.l1_distance(&it.image)?;
        }
        Ok(total / items.len() as f64)
    };
    let held_out_l1 = (mean_l1(hold_a, identity_a)?, mean_l1(hold_b, identity_b)?);

    if let Some(path) = &cfg.checkpoint_path {
        save_deepfake(path, &model, cfg)?;
    }

    Ok(DeepFakeTrainOutcome {
        model,
        log,
        held_out_l1,
    })
}

pub fn save_deepfake(
    path: &std::path::Path,
    model: &DeepFakeModel,
    cfg: &DeepFakeTrainConfig,
) -> Result<()> {
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("identity_a".to_string(), model.identity_a.clone());
    extra.insert("identity_b".to_string(), model.identity_b.clone());
    let header = CheckpointHeader {
        kind: "deepfake".into(),
        arch: serde_json::to_value(&model.arch).unwrap(),
        config_hash: config_hash_of(cfg),
        seed: cfg.seed,
        extra,
    };
    let named = model.named_params();
    let arrays: Vec<(String, &Arr)> = named.iter().map(|(n, a)| (n.clone(), *a)).collect();
    write_checkpoint(path, &header, &arrays)
}

pub fn load_deepfake(path: &std::path::Path) -> Result<(DeepFakeModel, CheckpointHeader)> {
    let (header, arrays) = read_checkpoint(path)?;
    if header.kind != "deepfake" {
        return Err(Error::Checkpoint(format!(
            "expected a deepfake checkpoint, found kind '{}'",
            header.kind
        )));
    }
    let arch: DeepFakeArch = serde_json::from_value(header.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("bad arch spec: {e}")))?;
    let id_a = header
        .extra
        .get("identity_a")
        .ok_or_else(|| Error::Checkpoint("missing identity_a".into()))?;
    let id_b = header
        .extra
        .get("identity_b")
        .ok_or_else(|| Error::Checkpoint("missing identity_b".into()))?;
    let mut model = DeepFakeModel::new(arch, id_a, id_b, header.seed)?;
    for (name, param) in model.named_params_mut() {
        *param = crate::nn::serial::require(&arrays, &name)?;
    }
    Ok((model, header))
}

/// The transform applied to every image before it enters the target at
/// evaluation time: a resize round-trip plus a mild seeded warp, simulating
/// real-world ingestion.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RealismTransform {
    /// Intermediate size for the resize round-trip (fraction of input, >= 1).
    pub resize_factor: f64,
    pub max_rotation_deg: f64,
    pub max_shift: f64,
}

impl Default for RealismTransform {
    fn default() -> Self {
        Self {
            resize_factor: 1.25,
            max_rotation_deg: 2.0,
            max_shift: 0.02,
        }
    }
}

impl RealismTransform {
    /// Apply with an explicit warp draw (both members of a pair must share
    /// the same draw).
    pub fn apply(&self, x: &ImageTensor, params: &WarpParams) -> Result<ImageTensor> {
        let (h, w) = (x.height(), x.width());
        let up_h = ((h as f64 * self.resize_factor).round() as usize).max(h + 1);
        let up_w = ((w as f64 * self.resize_factor).round() as usize).max(w + 1);
        let up = resize_bilinear(x.data(), up_h, up_w);
        let back = resize_bilinear(&up, h, w);
        let img = clip_image_range(&back)?;
        Ok(crate::image::warp::warp(&img, params))
    }

    pub fn sample_params(&self, seed: u64, pair_index: u64) -> WarpParams {
        let limits = WarpLimits {
            max_rotation_deg: self.max_rotation_deg,
            max_scale_delta: 0.0,
            max_shift: self.max_shift,
        };
        let mut rng = substream(seed, "realism", pair_index);
        WarpParams::sample(&limits, &mut rng)
    }
}
