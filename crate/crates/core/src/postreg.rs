//! Post-regularization: distill the generator's adversarial example into a
//! noise-initialized neighbour by iterative sign-gradient ascent on a
//! weighted latent-discrepancy objective, projecting into the eps-ball and
//! the image range after every step.
//!
//! The weight grid is the latent gap between the generator's adversarial
//! example and the reconstruction anchor, computed once before the loop and
//! held fixed; the gradient is taken through the encoder only.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image::tensor::{
    apply_perturbation, clip_eps, clip_image_range, stack_nchw, ImageTensor,
};
use crate::nn::Tape;
use crate::rng::substream;
use crate::substitute::{LatentCode, SubstituteModel};
use crate::tcagan::{adversarial_example, AdversaryGenerator};

/// Which image anchors the latent weight grid: the substitute's
/// reconstruction of the original (treated as an augmentation of it), or the
/// original itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AnchorMode {
    Reconstruction,
    Original,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PostRegConfig {
    pub eps: f64,
    pub alpha: f64,
    pub iters: usize,
    pub init_noise_scale: f64,
    pub anchor: AnchorMode,
}

impl Default for PostRegConfig {
    fn default() -> Self {
        Self {
            eps: 0.03,
            alpha: 0.006,
            iters: 10,
            init_noise_scale: 0.01,
            anchor: AnchorMode::Reconstruction,
        }
    }
}

impl PostRegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps <= 0.0 {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if self.alpha <= 0.0 || self.alpha > self.eps {
            return Err(Error::InvalidConfig(format!(
                "step size alpha must satisfy 0 < alpha <= eps, got alpha={} eps={}",
                self.alpha, self.eps
            )));
        }
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iteration count must be >= 1".into()));
        }
        if self.init_noise_scale < 0.0 {
            return Err(Error::InvalidConfig("noise scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Uniform noise in `[-scale, +scale]` around the adversarial example,
/// range-clipped. Deterministic under the seed.
pub fn init_neighborhood(x_adv: &ImageTensor, scale: f64, seed: u64) -> ImageTensor {
    if scale == 0.0 {
        return x_adv.clone();
    }
    let mut rng = substream(seed, "postreg-init", 0);
    let noisy = Array3::from_shape_fn(x_adv.data().dim(), |idx| {
        (x_adv.data()[idx] + rng.gen_range(-scale..=scale)).clamp(0.0, 1.0)
    });
    clip_image_range(&noisy).expect("clipped noise is a valid image")
}

/// The ascent objective: the inner product of the current latent gap with
/// the frozen weight grid, divided by the Frobenius norm of the original
/// image. Errors on a degenerate all-zero original.
pub fn postreg_objective(
    s: &SubstituteModel,
    x_radv: &ImageTensor,
    x_rec: &ImageTensor,
    w: &LatentCode,
    x: &ImageTensor,
) -> Result<f64> {
    let frob = frobenius(x)?;
    let z_radv = s.encode(x_radv)?;
    let z_rec = s.encode(x_rec)?;
    let mut inner = 0.0;
    for ((a, b), wv) in z_radv.data.iter().zip(z_rec.data.iter()).zip(w.data.iter()) {
        inner += (a - b) * wv;
    }
    Ok(inner / frob)
}

fn frobenius(x: &ImageTensor) -> Result<f64> {
    let frob = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Err(Error::InvalidImage("degenerate all-zero image".into()));
    }
    Ok(frob)
}

/// Per-iteration trace row: objective value and the running perturbation
/// magnitude.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PostRegTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub max_perturbation: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PostRegTrace {
    pub rows: Vec<PostRegTraceRow>,
    pub objective_at_init: f64,
}

/// Refine `x` through the full procedure: generate the adversarial example,
/// initialize in its neighbourhood, and run the projected sign-gradient
/// ascent.
pub fn post_regularize(
    s: &SubstituteModel,
    gen: &AdversaryGenerator,
    x: &ImageTensor,
    cfg: &PostRegConfig,
    seed: u64,
) -> Result<ImageTensor> {
    post_regularize_traced(s, gen, x, cfg, seed).map(|(img, _)| img)
}

pub fn post_regularize_traced(
    s: &SubstituteModel,
    gen: &AdversaryGenerator,
    x: &ImageTensor,
    cfg: &PostRegConfig,
    seed: u64,
) -> Result<(ImageTensor, PostRegTrace)> {
    cfg.validate()?;
    let frob = frobenius(x)?;

    let x_adv = adversarial_example(gen, x)?;
    let mut x_radv = init_neighborhood(&x_adv, cfg.init_noise_scale, seed);

    // Frozen quantities, computed once before the loop.
    let anchor_img = match cfg.anchor {
        AnchorMode::Reconstruction => s.reconstruct(x)?,
        AnchorMode::Original => x.clone(),
    };
    let z_anchor = s.encode(&anchor_img)?;
    let z_adv = s.encode(&x_adv)?;
    let w: Array3<f64> = &z_adv.data - &z_anchor.data;

    let mut trace = PostRegTrace::default();
    let inner_of = |z: &ndarray::ArrayViewD<f64>| -> f64 {
        z.iter()
            .zip(z_anchor.data.iter())
            .zip(w.iter())
            .map(|((a, b), wv)| (a - b) * wv)
            .sum::<f64>()
            / frob
    };

    for k in 0..cfg.iters {
        let mut t = Tape::new();
        let enc_b = s.bind_encoder(&mut t, false);
        let cur = t.leaf(stack_nchw(&[&x_radv]).into_dyn());
        let z = s.encode_tape(&mut t, cur, &enc_b);
        let anchor = t.constant(
            z_anchor
                .data
                .clone()
                .into_shape_with_order((1, z_anchor.data.dim().0, z_anchor.data.dim().1, z_anchor.data.dim().2))
                .expect("anchor reshape")
                .into_dyn(),
        );
        let gap = t.sub(z, anchor);
        let w_node = t.constant(
            w.clone()
                .into_shape_with_order((1, w.dim().0, w.dim().1, w.dim().2))
                .expect("weight reshape")
                .into_dyn(),
        );
        let prod = t.mul_no_grad_rhs(gap, w_node);
        let summed = t.sum_all(prod);
        let objective = t.scale(summed, 1.0 / frob);
        if k == 0 {
            trace.objective_at_init = t.scalar(objective);
        }
        let grads = t.backward(objective);
        let g = grads
            .get(cur)
            .ok_or_else(|| Error::Diverged("objective gradient missing".into()))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient at refinement iteration {k}"
            )));
        }
        let g_img = crate::image::tensor::chw_to_residual(
            g.view()
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap()
                .index_axis(ndarray::Axis(0), 0),
        );

        // Ascent with projection: r = clip_eps(x_radv - x + alpha*sign(g)),
        // then back into the image range.
        let stepped = x_radv.data() - x.data()
            + &g_img.mapv(|v| {
                cfg.alpha
                    * if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
            });
        let r = clip_eps(&stepped, cfg.eps)?;
        x_radv = apply_perturbation(x, &r)?;

        let z_now = s.encode(&x_radv)?;
        trace.rows.push(PostRegTraceRow {
            iter: k + 1,
            objective: inner_of(&z_now.data.view().into_dyn()),
            max_perturbation: r.max_abs(),
        });
    }

    Ok((x_radv, trace))
}
