//! Attack-stage orchestration: route a batch of clean images through the
//! selected method (the trained adversary generator with or without the
//! refinement stage, a gradient baseline, or the uniform-noise floor) and
//! emit finalized evaluation pairs. No code path here can reach the target
//! model; the stage is zero-query by construction.

use crate::baselines::{fgsm_attack, pgd_attack, uniform_noise_attack, BaselineConfig};
use crate::error::{Error, Result};
use crate::evaluate::EvalPair;
use crate::image::tensor::ImageTensor;
use crate::image::DatasetItem;
use crate::postreg::{post_regularize, PostRegConfig};
use crate::rng::fnv1a;
use crate::substitute::SubstituteModel;
use crate::tcagan::{adversarial_example, AdversaryGenerator};

/// Attack-stage parameters shared by every method.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub seed: u64,
    pub postreg: PostRegConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps: 0.03,
            alpha: 0.006,
            iters: 10,
            seed: 97,
            postreg: PostRegConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        self.postreg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    /// Generator output refined by post-regularization (the full method).
    TcaGanRefined,
    /// Raw generator output, no refinement.
    TcaGanRaw,
    Fgsm,
    Pgd,
    UniformNoise,
}

impl AttackMethod {
    pub fn label(&self) -> &'static str {
        match self {
            AttackMethod::TcaGanRefined => "tcagan+postreg",
            AttackMethod::TcaGanRaw => "tcagan",
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::UniformNoise => "uniform-noise",
        }
    }
}

/// Project an adversarial image onto the clean image's 8-bit grid while
/// keeping the perturbation strictly inside the budget: per pixel the
/// quantized delta is clamped to `floor(eps * 255)` steps of 1/255. Used
/// when finalized examples round-trip through PNG files.
pub fn quantize_within_budget(clean: &ImageTensor, adv: &ImageTensor, eps: f64) -> ImageTensor {
    let max_steps = (eps * 255.0).floor();
    let data = ndarray::Array3::from_shape_fn(clean.data().dim(), |idx| {
        let c = clean.data()[idx];
        let delta = ((adv.data()[idx] - c) * 255.0).round().clamp(-max_steps, max_steps);
        (c + delta / 255.0).clamp(0.0, 1.0)
    });
    ImageTensor::new(data).expect("quantized image is valid")
}

/// Attack one image.
pub fn attack_image(
    substitute: &SubstituteModel,
    generator: Option<&AdversaryGenerator>,
    x: &ImageTensor,
    method: AttackMethod,
    cfg: &AttackConfig,
    image_seed: u64,
) -> Result<ImageTensor> {
    cfg.validate()?;
    match method {
        AttackMethod::TcaGanRefined => {
            let gen = generator.ok_or_else(|| {
                Error::InvalidConfig("generator checkpoint required for the main method".into())
            })?;
            let pr = PostRegConfig {
                eps: cfg.eps,
                alpha: cfg.alpha,
                iters: cfg.iters,
                ..cfg.postreg.clone()
            };
            post_regularize(substitute, gen, x, &pr, image_seed)
        }
        AttackMethod::TcaGanRaw => {
            let gen = generator.ok_or_else(|| {
                Error::InvalidConfig("generator checkpoint required for the main method".into())
            })?;
            adversarial_example(gen, x)
        }
        AttackMethod::Fgsm => fgsm_attack(substitute, x, &BaselineConfig::fgsm(cfg.eps)),
        AttackMethod::Pgd => pgd_attack(
            substitute,
            x,
            &BaselineConfig::pgd(cfg.eps, cfg.alpha, cfg.iters, image_seed),
        ),
        AttackMethod::UniformNoise => uniform_noise_attack(x, cfg.eps, image_seed),
    }
}

/// Attack every item, producing evaluation pairs in input order. Each image
/// gets its own seed stream derived from `(seed, name)`.
pub fn attack_items(
    substitute: &SubstituteModel,
    generator: Option<&AdversaryGenerator>,
    items: &[&DatasetItem],
    method: AttackMethod,
    cfg: &AttackConfig,
) -> Result<Vec<EvalPair>> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let image_seed = fnv1a(format!("{}:{}:{}", cfg.seed, method.label(), it.filename).as_bytes());
        let adversarial = attack_image(substitute, generator, &it.image, method, cfg, image_seed)?;
        out.push(EvalPair {
            name: it.filename.clone(),
            identity: it.identity.clone(),
            clean: it.image.clone(),
            adversarial,
        });
    }
    Ok(out)
}
