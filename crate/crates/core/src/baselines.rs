//! Gradient-sign baseline attacks on the substitute model, sharing the same
//! projection primitives and evaluation pipeline as the main method.
//!
//! The surrogate objective maximizes reconstruction damage on two levels,
//! mirroring the disruption loss: the pixel term is anchored at the original
//! image (the substitute's reconstruction loss), the latent term at the
//! clean latent code.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image::tensor::{
    apply_perturbation, clip_eps, stack_nchw, ImageTensor,
};
use crate::nn::Tape;
use crate::rng::substream;
use crate::substitute::SubstituteModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BaselineMethod {
    Fgsm,
    Pgd,
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineMethod::Fgsm => f.write_str("fgsm"),
            BaselineMethod::Pgd => f.write_str("pgd"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossTarget {
    Pixel,
    Latent,
    Both,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub loss_target: LossTarget,
    /// PGD starts from a uniform draw inside the eps-ball; FGSM never does.
    pub random_start: bool,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn fgsm(eps: f64) -> Self {
        Self {
            method: BaselineMethod::Fgsm,
            eps,
            alpha: eps,
            iters: 1,
            loss_target: LossTarget::Both,
            random_start: false,
            seed: 0,
        }
    }

    pub fn pgd(eps: f64, alpha: f64, iters: usize, seed: u64) -> Self {
        Self {
            method: BaselineMethod::Pgd,
            eps,
            alpha,
            iters,
            loss_target: LossTarget::Both,
            random_start: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if self.method == BaselineMethod::Fgsm {
            if self.iters != 1 {
                return Err(Error::InvalidConfig("fgsm forces iters = 1".into()));
            }
            if (self.alpha - self.eps).abs() > 1e-12 {
                return Err(Error::InvalidConfig("fgsm forces alpha = eps".into()));
            }
            if self.random_start {
                return Err(Error::InvalidConfig("fgsm has no random start".into()));
            }
        }
        Ok(())
    }
}

/// Gradient of the two-level disruption surrogate w.r.t. the current input.
/// Returns an HWC residual-shaped gradient.
fn surrogate_grad(
    s: &SubstituteModel,
    current: &ImageTensor,
    x_orig: &ImageTensor,
    se_x: &ndarray::ArrayD<f64>,
    target: LossTarget,
) -> Result<Array3<f64>> {
    let mut t = Tape::new();
    let enc_b = s.bind_encoder(&mut t, false);
    let dec_b = s.bind_decoder(&mut t, false);
    let cur = t.leaf(stack_nchw(&[current]).into_dyn());
    let z = s.encode_tape(&mut t, cur, &enc_b);
    let mut loss = None;
    if matches!(target, LossTarget::Latent | LossTarget::Both) {
        let anchor = t.constant(se_x.clone());
        let gap = t.l1_mean(z, anchor);
        loss = Some(gap);
    }
    if matches!(target, LossTarget::Pixel | LossTarget::Both) {
        let rec = s.decoder.forward_tape(&mut t, z, &dec_b);
        let xv = t.constant(stack_nchw(&[x_orig]).into_dyn());
        let gap = t.l1_mean(rec, xv);
        loss = Some(match loss {
            Some(l) => t.add(l, gap),
            None => gap,
        });
    }
    let loss = loss.expect("at least one loss term");
    let grads = t.backward(loss);
    let g = grads
        .get(cur)
        .ok_or_else(|| Error::Evaluation("surrogate gradient missing".into()))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged("non-finite attack gradient".into()));
    }
    Ok(crate::image::tensor::chw_to_residual(
        g.view()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
            .index_axis(ndarray::Axis(0), 0),
    ))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Single sign step of size eps from the clean image.
pub fn fgsm_attack(
    s: &SubstituteModel,
    x: &ImageTensor,
    cfg: &BaselineConfig,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let se_x = s.encode_batch(&stack_nchw(&[x])).into_dyn();
    let g = surrogate_grad(s, x, x, &se_x, cfg.loss_target)?;
    let step = g.mapv(|v| cfg.eps * sign(v));
    let r = clip_eps(&step, cfg.eps)?;
    apply_perturbation(x, &r)
}

/// Iterated sign steps with projection into the eps-ball and image range
/// after every step; optional uniform random start.
pub fn pgd_attack(
    s: &SubstituteModel,
    x: &ImageTensor,
    cfg: &BaselineConfig,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let se_x = s.encode_batch(&stack_nchw(&[x])).into_dyn();
    let mut current = if cfg.random_start {
        let mut rng = substream(cfg.seed, "pgd-start", 0);
        let noise = Array3::from_shape_fn(x.data().dim(), |_| {
            use rand::Rng;
            rng.gen_range(-cfg.eps..=cfg.eps)
        });
        let r = clip_eps(&noise, cfg.eps)?;
        apply_perturbation(x, &r)?
    } else {
        x.clone()
    };
    for _ in 0..cfg.iters {
        let g = surrogate_grad(s, &current, x, &se_x, cfg.loss_target)?;
        let stepped = current.data() + &g.mapv(|v| cfg.alpha * sign(v));
        let r = clip_eps(&(&stepped - x.data()), cfg.eps)?;
        current = apply_perturbation(x, &r)?;
    }
    Ok(current)
}

/// Uniform noise at the same budget; the floor any real attack must beat.
pub fn uniform_noise_attack(x: &ImageTensor, eps: f64, seed: u64) -> Result<ImageTensor> {
    let mut rng = substream(seed, "uniform-noise", 0);
    let noise = Array3::from_shape_fn(x.data().dim(), |_| {
        use rand::Rng;
        rng.gen_range(-eps..=eps)
    });
    let r = clip_eps(&noise, eps)?;
    apply_perturbation(x, &r)
}

/// Mean substitute-level damage `mean-L1(S(x), S(x_adv))`, used to compare
/// attack strength on the white-box surrogate.
pub fn substitute_damage(
    s: &SubstituteModel,
    x: &ImageTensor,
    x_adv: &ImageTensor,
) -> Result<f64> {
    let a = s.reconstruct(x)?;
    let b = s.reconstruct(x_adv)?;
    a.l1_distance(&b)
}

/// Per-image perturbation extracted from a finished adversarial example.
pub fn residual_of(x: &ImageTensor, x_adv: &ImageTensor) -> Array3<f64> {
    x_adv.data() - x.data()
}
