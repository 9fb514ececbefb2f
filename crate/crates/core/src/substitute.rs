//! The face-reconstruction autoencoder that stands in for every
//! inaccessible face-manipulation model. Adversarial examples are crafted
//! against it and transferred; it is the only network the attack stage may
//! touch.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::image::tensor::{image_from_chw, stack_nchw, ImageTensor};
use crate::image::warp::{random_warp, WarpLimits};
use crate::image::{FaceDataset, SplitKind};
use crate::nn::{
    read_checkpoint, write_checkpoint, Activation, Adam, Arr, CheckpointHeader, ConvSpec,
    ConvStack, StackBinding, Tape, Var,
};
use crate::rng::{fnv1a, substream};

/// Layer plan for the autoencoder: a strictly-downsampling encoder (spatial
/// dims halve per stage) and a mirrored strictly-upsampling decoder with a
/// final sigmoid squashing.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubstituteArch {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Encoder channels per downsampling stage.
    pub encoder_channels: Vec<usize>,
    /// Encoder kernel size: 4 gives uniform stride-2 coverage and smooth
    /// input gradients; 3 is the compact classic.
    #[serde(default = "default_encoder_kernel")]
    pub encoder_kernel: usize,
    pub leaky_slope: f64,
}

fn default_encoder_kernel() -> usize {
    4
}

impl Default for SubstituteArch {
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 64,
            input_channels: 3,
            encoder_channels: vec![32, 64, 128, 256],
            encoder_kernel: 4,
            leaky_slope: 0.2,
        }
    }
}

impl SubstituteArch {
    /// Smaller configuration for fast desk-scale runs.
    pub fn desk_scale() -> Self {
        Self {
            encoder_channels: vec![16, 32, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one stage".into()));
        }
        if ![3, 4, 6, 8].contains(&self.encoder_kernel) {
            return Err(Error::InvalidConfig(format!(
                "encoder kernel must be one of 3, 4, 6, 8; got {}",
                self.encoder_kernel
            )));
        }
        let stages = self.encoder_channels.len();
        let div = 1usize << stages;
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} not divisible by 2^{stages}",
                self.input_height, self.input_width
            )));
        }
        if self.input_height / div == 0 || self.input_width / div == 0 {
            return Err(Error::InvalidConfig("too many stages for input size".into()));
        }
        Ok(())
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let stages = self.encoder_channels.len();
        (
            *self.encoder_channels.last().unwrap(),
            self.input_height >> stages,
            self.input_width >> stages,
        )
    }

    pub fn describe(&self) -> String {
        format!(
            "autoencoder {}x{}x{}, encoder stride-2 k{} stages {:?}, leaky {}, upsample-conv decoder, sigmoid output",
            self.input_height, self.input_width, self.input_channels,
            self.encoder_kernel, self.encoder_channels, self.leaky_slope
        )
    }

    fn encoder_specs(&self) -> Vec<ConvSpec> {
        let act = Activation::LeakyRelu(self.leaky_slope);
        let mut specs = Vec::new();
        let mut prev = self.input_channels;
        for &ch in &self.encoder_channels {
            let k = self.encoder_kernel;
            let pad = if k % 2 == 1 { (k - 1) / 2 } else { (k - 2) / 2 };
            specs.push(ConvSpec {
                in_ch: prev,
                out_ch: ch,
                kernel: k,
                stride: 2,
                pad,
                upsample: false,
                pixel_shuffle: false,
                act,
            });
            prev = ch;
        }
        specs
    }

    fn decoder_specs(&self) -> Vec<ConvSpec> {
        let act = Activation::LeakyRelu(self.leaky_slope);
        let ch = &self.encoder_channels;
        let mut specs = Vec::new();
        for i in (1..ch.len()).rev() {
            specs.push(ConvSpec::up(ch[i], ch[i - 1], act));
        }
        specs.push(ConvSpec::up(ch[0], ch[0], act));
        specs.push(ConvSpec::same(ch[0], self.input_channels, Activation::Sigmoid));
        specs
    }
}

/// Bottleneck feature map produced by the encoder, stored C x H x W.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub data: Array3<f64>,
}

impl LatentCode {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn l1_distance(&self, other: &LatentCode) -> f64 {
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n
    }
}

#[derive(Debug)]
pub struct SubstituteModel {
    pub arch: SubstituteArch,
    pub encoder: ConvStack,
    pub decoder: ConvStack,
    encode_calls: AtomicU64,
}

impl Clone for SubstituteModel {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            encode_calls: AtomicU64::new(0),
        }
    }
}

impl SubstituteModel {
    pub fn new(arch: SubstituteArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut enc_rng = substream(seed, "substitute-init-enc", 0);
        let mut dec_rng = substream(seed, "substitute-init-dec", 0);
        Ok(Self {
            encoder: ConvStack::init(arch.encoder_specs(), &mut enc_rng),
            decoder: ConvStack::init(arch.decoder_specs(), &mut dec_rng),
            arch,
            encode_calls: AtomicU64::new(0),
        })
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let want = (self.arch.input_height, self.arch.input_width, self.arch.input_channels);
        let got = (x.height(), x.width(), x.channels());
        if want != got {
            return Err(Error::ShapeMismatch(format!(
                "model expects {want:?}, image is {got:?}"
            )));
        }
        Ok(())
    }

    /// Number of encoder invocations since construction. Diagnostic only;
    /// used to verify that refinement loops evaluate the encoder exactly as
    /// often as their algorithm states.
    pub fn encode_call_count(&self) -> u64 {
        self.encode_calls.load(Ordering::Relaxed)
    }

    pub fn encode_batch(&self, x: &Array4<f64>) -> Array4<f64> {
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
        self.encoder.forward_infer(x)
    }

    pub fn decode_batch(&self, z: &Array4<f64>) -> Array4<f64> {
        self.decoder.forward_infer(z)
    }

    pub fn reconstruct_batch(&self, x: &Array4<f64>) -> Array4<f64> {
        let z = self.encode_batch(x);
        self.decode_batch(&z)
    }

    /// Deterministic inference-mode encoding.
    pub fn encode(&self, x: &ImageTensor) -> Result<LatentCode> {
        self.check_input(x)?;
        let batch = stack_nchw(&[x]);
        let z = self.encode_batch(&batch);
        let (_, c, h, w) = z.dim();
        let data = z
            .index_axis(ndarray::Axis(0), 0)
            .to_owned()
            .into_shape_with_order((c, h, w))
            .expect("latent reshape");
        Ok(LatentCode { data })
    }

    /// `S(x) = S_d(S_e(x))`, clipped to the image range by the final
    /// squashing activation.
    pub fn reconstruct(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        let batch = stack_nchw(&[x]);
        let y = self.reconstruct_batch(&batch);
        image_from_chw(y.index_axis(ndarray::Axis(0), 0))
    }

    /// Tape-mode encoder forward (counts as an encoder invocation).
    pub fn encode_tape(&self, t: &mut Tape, x: Var, binding: &StackBinding) -> Var {
        self.encode_calls.fetch_add(1, Ordering::Relaxed);
        self.encoder.forward_tape(t, x, binding)
    }

    pub fn bind_encoder(&self, t: &mut Tape, trainable: bool) -> StackBinding {
        self.encoder.bind(t, trainable)
    }

    pub fn bind_decoder(&self, t: &mut Tape, trainable: bool) -> StackBinding {
        self.decoder.bind(t, trainable)
    }

    pub fn named_params(&self) -> Vec<(String, &Arr)> {
        let mut out = self.encoder.named_params("encoder");
        out.extend(self.decoder.named_params("decoder"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Arr)> {
        let mut out = self.encoder.named_params_mut("encoder");
        out.extend(self.decoder.named_params_mut("decoder"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params()
    }

    /// The substitute training objective on a clean/warped pair: the sum of
    /// the two mean-reduced L1 reconstruction terms.
    pub fn recons_loss(&self, x: &ImageTensor, x_hat: &ImageTensor) -> Result<f64> {
        self.check_input(x)?;
        self.check_input(x_hat)?;
        let sx = self.reconstruct(x)?;
        let sx_hat = self.reconstruct(x_hat)?;
        Ok(recons_loss_terms(
            sx.data(),
            x.data(),
            sx_hat.data(),
            x_hat.data(),
        ))
    }
}

/// Pure form of the reconstruction objective: mean |S(x) - x| plus
/// mean |S(x_hat) - x_hat|.
pub fn recons_loss_terms(
    s_x: &Array3<f64>,
    x: &Array3<f64>,
    s_x_hat: &Array3<f64>,
    x_hat: &Array3<f64>,
) -> f64 {
    let l1 = |a: &Array3<f64>, b: &Array3<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
    };
    l1(s_x, x) + l1(s_x_hat, x_hat)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SubstituteTrainConfig {
    pub arch: SubstituteArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub warp: WarpLimits,
    /// Fraction of the training split held out for the validation curve.
    pub val_fraction: f64,
    /// When set, the final checkpoint (weights + optimizer state + seed) is
    /// written here.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for SubstituteTrainConfig {
    fn default() -> Self {
        Self {
            arch: SubstituteArch::default(),
            epochs: 30,
            batch_size: 32,
            lr: 2e-4,
            seed: 7,
            warp: WarpLimits::default(),
            val_fraction: 0.1,
            checkpoint_path: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct SubstituteTrainOutcome {
    pub model: SubstituteModel,
    pub log: Vec<EpochRow>,
    /// Plain held-out reconstruction L1 after the final epoch.
    pub final_val_l1: f64,
}

pub fn config_hash_of<T: serde::Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    format!("{:016x}", fnv1a(json.as_bytes()))
}

/// Train the substitute on its dataset split.
pub fn train_substitute(
    data: &FaceDataset,
    cfg: &SubstituteTrainConfig,
) -> Result<SubstituteTrainOutcome> {
    cfg.arch.validate()?;
    cfg.warp.validate()?;
    let items = data.split_items(SplitKind::TrainSubstitute);
    if items.is_empty() {
        return Err(Error::Dataset("train_substitute split is empty".into()));
    }
    let mut model = SubstituteModel::new(cfg.arch.clone(), cfg.seed)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = substream(cfg.seed, "substitute-valsplit", 0);
        order.shuffle(&mut rng);
    }
    let n_val = ((items.len() as f64 * cfg.val_fraction).round() as usize).min(items.len() - 1);
    let (train_idx, val_idx) = order.split_at(items.len() - n_val);
    let train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut opt = Adam::new(cfg.lr);
    let mut log = Vec::new();
    let mut final_val_l1 = val_l1(&model, items.as_slice(), &val_idx)?;

    for epoch in 0..cfg.epochs {
        let mut shuffled = train_idx.clone();
        {
            use rand::seq::SliceRandom;
            let mut rng = substream(cfg.seed, "substitute-epoch", epoch as u64);
            shuffled.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in shuffled.chunks(cfg.batch_size.max(1)) {
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &items[i].image).collect();
            let warped: Vec<ImageTensor> = chunk
                .iter()
                .map(|&i| {
                    let warp_seed = fnv1a(
                        format!("{}:{}:{}", cfg.seed, epoch, i).as_bytes(),
                    );
                    random_warp(&items[i].image, &cfg.warp, warp_seed)
                })
                .collect();
            let warped_refs: Vec<&ImageTensor> = warped.iter().collect();

            let x = stack_nchw(&images);
            let x_hat = stack_nchw(&warped_refs);

            let mut t = Tape::new();
            let enc_b = model.bind_encoder(&mut t, true);
            let dec_b = model.bind_decoder(&mut t, true);
            let xv = t.constant(x.into_dyn());
            let xhv = t.constant(x_hat.into_dyn());
            let z1 = model.encoder.forward_tape(&mut t, xv, &enc_b);
            let r1 = model.decoder.forward_tape(&mut t, z1, &dec_b);
            let l1a = t.l1_mean(r1, xv);
            let z2 = model.encoder.forward_tape(&mut t, xhv, &enc_b);
            let r2 = model.decoder.forward_tape(&mut t, z2, &dec_b);
            let l1b = t.l1_mean(r2, xhv);
            let loss = t.add(l1a, l1b);

            let loss_val = t.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "substitute loss became non-finite at epoch {epoch}"
                )));
            }
            let mut grads = t.backward(loss);
            let grad_list: Vec<Option<Arr>> = enc_b
                .vars
                .iter()
                .chain(dec_b.vars.iter())
                .flat_map(|&(w, b)| [grads.take(w), grads.take(b)])
                .collect();
            let mut params = model.named_params_mut();
            let mut refs: Vec<&mut Arr> = params.iter_mut().map(|(_, p)| &mut **p).collect();
            opt.step(&mut refs, &grad_list);

            epoch_loss += loss_val;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        final_val_l1 = val_l1(&model, items.as_slice(), &val_idx)?;
        log.push(EpochRow {
            epoch,
            train_loss,
            val_loss: final_val_l1,
        });
    }

    if let Some(path) = &cfg.checkpoint_path {
        save_substitute(path, &model, Some(&opt), cfg)?;
    }

    Ok(SubstituteTrainOutcome {
        model,
        log,
        final_val_l1,
    })
}

fn val_l1(
    model: &SubstituteModel,
    items: &[&crate::image::DatasetItem],
    val_idx: &[usize],
) -> Result<f64> {
    if val_idx.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for &i in val_idx {
        let rec = model.reconstruct(&items[i].image)?;
        total += rec.l1_distance(&items[i].image)?;
    }
    Ok(total / val_idx.len() as f64)
}

pub fn save_substitute(
    path: &std::path::Path,
    model: &SubstituteModel,
    opt: Option<&Adam>,
    cfg: &SubstituteTrainConfig,
) -> Result<()> {
    let mut extra = std::collections::BTreeMap::new();
    if let Some(opt) = opt {
        extra.insert("adam.t".to_string(), opt.t.to_string());
        extra.insert("adam.lr".to_string(), opt.lr.to_string());
    }
    let header = CheckpointHeader {
        kind: "substitute".into(),
        arch: serde_json::to_value(&model.arch).unwrap(),
        config_hash: config_hash_of(cfg),
        seed: cfg.seed,
        extra,
    };
    let named = model.named_params();
    let mut arrays: Vec<(String, &Arr)> =
        named.iter().map(|(n, a)| (n.clone(), *a)).collect();
    let opt_arrays = opt.map(|o| o.state_arrays()).unwrap_or_default();
    for (n, a) in &opt_arrays {
        arrays.push((n.clone(), a));
    }
    write_checkpoint(path, &header, &arrays)
}

pub fn load_substitute(path: &std::path::Path) -> Result<(SubstituteModel, CheckpointHeader)> {
    let (header, arrays) = read_checkpoint(path)?;
    if header.kind != "substitute" {
        return Err(Error::Checkpoint(format!(
            "expected a substitute checkpoint, found kind '{}'",
            header.kind
        )));
    }
    let arch: SubstituteArch = serde_json::from_value(header.arch.clone())
        .map_err(|e| Error::Checkpoint(format!("bad arch spec: {e}")))?;
    let mut model = SubstituteModel::new(arch, header.seed)?;
    for (name, param) in model.named_params_mut() {
        *param = crate::nn::serial::require(&arrays, &name)?;
    }
    Ok((model, header))
}
